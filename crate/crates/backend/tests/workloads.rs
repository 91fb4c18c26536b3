use std::time::Instant;

use effact_backend::compile::{compile, PassConfig};
use effact_backend::exec::execute;
use effact_backend::hw::HardwareDescription;
use effact_backend::ir::Program;
use effact_backend::memory::MemoryImage;
use effact_backend::passes::pre::eliminate_redundancy;
use effact_backend::passes::propagate::propagate;
use effact_backend::workloads::image::{bind_key, bind_poly, random_image, read_poly};
use effact_backend::workloads::mix::mac_fusable;
use effact_backend::workloads::{
    gen_bootstrap_skeleton, gen_helr_iteration, gen_hoisted_rotations, gen_keyswitch, inject_duplicates,
    instruction_mix, rotation_steps, Category, WorkloadParams,
};
use effact_core::ckks::{
    decrypt, decrypt_three, encrypt, hoisted_rotations, key_switch, keygen_small, tensor, Ciphertext, CkksContext,
    CkksParams, Encoder,
};
use effact_core::kernels::vec_madd;
use num_complex::Complex64;

fn slots(n: usize, seed: u64) -> Vec<Complex64> {
    (0..n / 2)
        .map(|i| {
            let t = (i as f64 + seed as f64 * 0.37).sin();
            Complex64::new(t * 0.8, (2.0 * t).cos() * 0.5)
        })
        .collect()
}

fn encrypt_slots(ctx: &CkksContext, keys: &effact_core::ckks::KeySet, seed: u64) -> Ciphertext {
    let l = ctx.params().levels;
    let pt = Encoder::new(ctx.n()).encode(ctx, &slots(ctx.n(), seed), ctx.default_scale(), l).unwrap();
    encrypt(ctx, &keys.secret, &pt, seed).unwrap()
}

fn compiled(ir: &Program, slots: u32) -> Program {
    let hw = HardwareDescription::default().with_slots(slots);
    compile(ir, &hw, &PassConfig::all()).unwrap().program
}

#[test]
fn keyswitch_matches_reference_bit_for_bit() {
    let (n, levels, dnum) = (1 << 10, 4, 2);
    let ctx = CkksContext::new(CkksParams::desk(n, levels, dnum)).unwrap();
    let keys = keygen_small(&ctx, 5, &[]).unwrap();
    let a = encrypt_slots(&ctx, &keys, 1);
    let b = encrypt_slots(&ctx, &keys, 2);
    let (d0, d1, d2) = tensor(&a, &b).unwrap();
    let (r0, r1) = key_switch(&ctx, &d2, &keys.relin).unwrap();

    let ir = gen_keyswitch(&WorkloadParams::desk(n, levels, dnum)).unwrap();
    for p in [ir.clone(), compiled(&ir, 64), compiled(&ir, 12)] {
        let mut img = MemoryImage::for_program(&p).unwrap();
        bind_poly(&mut img, "d2", 0, &d2).unwrap();
        bind_key(&mut img, "evk", &keys.relin).unwrap();
        execute(&p, &mut img).unwrap();
        let k0 = read_poly(&img, "k0", 0, d2.basis()).unwrap();
        let k1 = read_poly(&img, "k1", 0, d2.basis()).unwrap();
        assert_eq!(k0, r0);
        assert_eq!(k1, r1);
    }

    // The relinearized pair decrypts like the three-component ciphertext.
    let ct = Ciphertext {
        c0: d0.zip_limbs(&r0, vec_madd).unwrap(),
        c1: d1.zip_limbs(&r1, vec_madd).unwrap(),
        scale: a.scale * b.scale,
    };
    let got = decrypt(&ctx, &keys.secret, &ct).unwrap();
    let want = decrypt_three(&ctx, &keys.secret, &d0, &d1, &d2, ct.scale).unwrap();
    let norm = want.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let err = got.iter().zip(&want).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(err / norm < 2f64.powi(-15), "relative error {err} / {norm}");
}

#[test]
fn hoisted_rotations_match_reference() {
    let params = WorkloadParams::desk(1 << 8, 3, 3);
    let ctx = CkksContext::new(CkksParams::desk(params.n, params.levels, params.dnum)).unwrap();
    let steps = rotation_steps(&params);
    let keys = keygen_small(&ctx, 9, &steps).unwrap();
    let ct = encrypt_slots(&ctx, &keys, 3);
    let want = hoisted_rotations(&ctx, &ct, &steps, &keys).unwrap();

    let ir = gen_hoisted_rotations(&params).unwrap();
    let p = compiled(&ir, 24);
    let mut img = MemoryImage::for_program(&p).unwrap();
    let l = params.limbs;
    bind_poly(&mut img, "ct", 0, &ct.c0).unwrap();
    bind_poly(&mut img, "ct", l, &ct.c1).unwrap();
    for (s, k) in &keys.rotation {
        bind_key(&mut img, &format!("rk{s}"), k).unwrap();
    }
    execute(&p, &mut img).unwrap();
    for (j, w) in want.iter().enumerate() {
        assert_eq!(read_poly(&img, "out", 2 * l * j, ct.c0.basis()).unwrap(), w.c0, "rotation {j} c0");
        assert_eq!(read_poly(&img, "out", 2 * l * j + l, ct.c0.basis()).unwrap(), w.c1, "rotation {j} c1");
    }
}

#[test]
fn helr_is_dominated_by_fusable_products() {
    let ir = gen_helr_iteration(&WorkloadParams::desk(1 << 8, 8, 2)).unwrap();
    let (fusable, normal) = mac_fusable(&ir);
    assert!(normal > 0);
    let r = fusable as f64 / normal as f64;
    println!("HELR fusable {fusable}/{normal} = {r:.3}");
    assert!(r > 0.5);
}

#[test]
fn desk_kernels_compile_and_execute_like_their_ir() {
    let p = WorkloadParams::desk(1 << 6, 8, 2);
    for (name, ir) in [
        ("helr", gen_helr_iteration(&p).unwrap()),
        ("bootstrap", gen_bootstrap_skeleton(&p).unwrap()),
    ] {
        let out = if name == "helr" { "grad" } else { "out" };
        let mut want = random_image(&ir, 11).unwrap();
        execute(&ir, &mut want).unwrap();
        let c = compiled(&ir, 32);
        let mut got = random_image(&c, 11).unwrap();
        execute(&c, &mut got).unwrap();
        assert_eq!(got.snapshot(&[out]), want.snapshot(&[out]), "{name}");
    }
}

#[test]
fn bootstrap_mix_falls_in_band() {
    let t = Instant::now();
    let ir = gen_bootstrap_skeleton(&WorkloadParams::full_size()).unwrap();
    let mix = instruction_mix(&ir);
    let arith = mix.arithmetic_fraction();
    let ntt = mix.fraction(Category::Ntt);
    println!(
        "bootstrap: {} instructions, arithmetic {:.2}%, NTT {:.2}% ({:?})",
        mix.total,
        100.0 * arith,
        100.0 * ntt,
        t.elapsed()
    );
    for c in Category::ALL {
        println!("  {:<10} {:>8} {:6.2}%", c.as_str(), mix.count(c), 100.0 * mix.fraction(c));
    }
    assert!((0.859..=0.959).contains(&arith));
    assert!((0.035..=0.095).contains(&ntt));
}

#[test]
fn redundancy_elimination_removes_injected_duplicates() {
    let ir = gen_helr_iteration(&WorkloadParams::desk(1 << 6, 6, 2)).unwrap();
    for (k, frac) in [0.05, 0.2, 0.5].into_iter().enumerate() {
        let (dup, added) = inject_duplicates(&ir, frac, k as u64);
        assert!(added > 0);
        let mut p = dup.clone();
        propagate(&mut p);
        eliminate_redundancy(&mut p);
        let mut base = ir.clone();
        propagate(&mut base);
        eliminate_redundancy(&mut base);
        assert_eq!(p.instrs.len(), base.instrs.len(), "fraction {frac}: {added} injected");
    }
}
