//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit when any
//! criterion fails. Tolerances and time limits are fixed below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effact_backend::compile::{compile, PassConfig};
use effact_backend::exec::execute;
use effact_backend::hw::HardwareDescription;
use effact_backend::ir::Program;
use effact_backend::memory::MemoryImage;
use effact_backend::passes::alloc::max_liveness;
use effact_backend::passes::lower::lower;
use effact_backend::passes::pre::eliminate_redundancy;
use effact_backend::passes::propagate::propagate;
use effact_backend::sim::{compare_streaming, simulate, sweep_sram, SimReport};
use effact_backend::workloads::image::{bind_key, bind_poly, random_image, read_poly};
use effact_backend::workloads::random::{random_program, RandomConfig};
use effact_backend::workloads::{
    gen_bootstrap_skeleton, gen_helr_iteration, gen_hoisted_rotations, gen_keyswitch, inject_duplicates,
    instruction_mix, Category, WorkloadParams,
};
use effact_core::ckks::{
    decrypt, decrypt_three, encrypt, key_switch, keygen_small, tensor, Ciphertext, CkksContext, CkksParams, Encoder,
};
use effact_core::kernels::{
    automorphism_ntt, bconv_merged, negacyclic_mul, ntt_fwd, ntt_inv, transpose_fixed_network, vec_madd, BconvTables,
};
use effact_core::rns::{bit_reverse, mul_mod, ntt_primes_below, pow_mod, BasisRole};
use effact_core::{Modulus, MontgomeryForm, ResiduePoly, RnsBasis, RnsPoly};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let el = t.elapsed();
    let in_time = limit.is_none_or(|l| el <= l);
    let pass = r.pass && in_time;
    let timing = match limit {
        Some(l) => format!("{:.1} s of {} s", el.as_secs_f64(), l.as_secs()),
        None => format!("{:.1} s", el.as_secs_f64()),
    };
    println!(
        "criterion {id:>2} {} {name}: {}; {timing}{}",
        if pass { "PASS" } else { "FAIL" },
        r.detail,
        if in_time { "" } else { " (over time)" }
    );
    pass
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

// ---------------------------------------------------------------- kernels

/// Row-by-row schoolbook product; residues below 2^31 accumulate in u64.
#[inline(always)]
fn schoolbook_small_body(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    let n = a.len();
    let b32: Vec<u32> = b.iter().map(|&x| x as u32).collect();
    let mut acc = vec![0u64; 2 * n];
    let rows_per_reduce = (u64::MAX / ((q - 1) * (q - 1))).clamp(1, 1 << 20) - 1;
    let mut rows = 0;
    for (i, &ai) in a.iter().enumerate() {
        let ai = ai as u32 as u64;
        for (d, &bj) in acc[i..i + n].iter_mut().zip(&b32) {
            // Bounded by the periodic reduction; wrapping ops skip the
            // overflow checks the test profile keeps on.
            *d = d.wrapping_add(ai.wrapping_mul(bj as u64));
        }
        rows += 1;
        if rows >= rows_per_reduce {
            acc.iter_mut().for_each(|x| *x %= q);
            rows = 0;
        }
    }
    (0..n).map(|k| (acc[k] % q + q - acc[k + n] % q) % q).collect()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn schoolbook_small_avx2(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    schoolbook_small_body(a, b, q)
}

fn schoolbook_small(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { schoolbook_small_avx2(a, b, q) };
    }
    schoolbook_small_body(a, b, q)
}

fn schoolbook_wide(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    let n = a.len();
    let qq = q as u128;
    let mut acc = vec![0u128; 2 * n];
    let rows_per_reduce = (u128::MAX / ((qq - 1) * (qq - 1))).clamp(1, 1 << 20) as usize - 1;
    let mut rows = 0;
    for (i, &ai) in a.iter().enumerate() {
        for (d, &bj) in acc[i..i + n].iter_mut().zip(b) {
            *d += ai as u128 * bj as u128;
        }
        rows += 1;
        if rows >= rows_per_reduce.max(1) {
            acc.iter_mut().for_each(|x| *x %= qq);
            rows = 0;
        }
    }
    (0..n).map(|k| ((acc[k] % qq + qq - acc[k + n] % qq) % qq) as u64).collect()
}

fn schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    if q < 1 << 31 {
        schoolbook_small(a, b, q)
    } else {
        schoolbook_wide(a, b, q)
    }
}

fn kernel_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc1);
    let mut checked = 0;
    let mut widths = Vec::new();
    for n in [8usize, 256, 4096] {
        // The n = 4096 oracle is quadratic; residues below 2^28 keep it in
        // 64-bit vector arithmetic.
        let bits: [u32; 3] = if n == 4096 { [24, 26, 28] } else { [30, 45, 59] };
        for b in bits {
            let q = ntt_primes_below(n, 1, b, &[]).expect("prime exists")[0];
            widths.push(64 - q.leading_zeros());
            let m = Modulus::new(q, n).expect("NTT-friendly");
            for _ in 0..1000 {
                let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
                let c: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
                let pa = ResiduePoly::from_coeffs(m.clone(), a.clone()).expect("in range");
                let pc = ResiduePoly::from_coeffs(m.clone(), c.clone()).expect("in range");
                let got = negacyclic_mul(&pa, &pc).expect("same modulus");
                if got.coeffs() != schoolbook(&a, &c, q) {
                    return outcome(false, format!("mismatch at n = {n}, q = {q}"));
                }
                checked += 1;
            }
        }
    }
    widths.sort_unstable();
    widths.dedup();
    outcome(
        true,
        format!("{checked} products exact over n in {{8, 256, 4096}}, 3 moduli each ({widths:?}-bit)"),
    )
}

fn basis(moduli: &[u64], n: usize, role: BasisRole) -> RnsBasis {
    RnsBasis::new(moduli.iter().map(|&q| Modulus::new(q, n).expect("NTT-friendly")).collect(), role)
        .expect("distinct moduli")
}

fn merged_base_conversion() -> Outcome {
    let n = 256;
    let primes = ntt_primes_below(n, 6, 50, &[]).expect("primes");
    let (cq, bq) = primes.split_at(4);
    let c = basis(cq, n, BasisRole::Ciphertext);
    let b = basis(bq, n, BasisRole::Extension);
    let tables = BconvTables::new(&c, &b).expect("disjoint bases");
    // Fast base conversion written out from its definition.
    let qhat_mod = |j: usize, m: u64| {
        cq.iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .fold(1 % m, |acc, (_, &q)| mul_mod(acc, q % m, m))
    };
    let qhat_inv: Vec<u64> = (0..4)
        .map(|j| pow_mod(qhat_mod(j, cq[j]), cq[j] - 2, cq[j]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc2);
    for trial in 0..1000 {
        let limbs = c
            .moduli()
            .iter()
            .map(|m| {
                let v = (0..n).map(|_| rng.random_range(0..m.value())).collect();
                ResiduePoly::new(m.clone(), v, effact_core::poly::Layout::ntt(MontgomeryForm::Sm)).expect("in range")
            })
            .collect();
        let x = RnsPoly::new(c.clone(), limbs).expect("shape");
        let merged = bconv_merged(&x.map_limbs(|l| ntt_inv(l, true)).expect("inverse"), &tables).expect("merged");
        // Unmerged: scaled inverse transform, conversion to plain residues,
        // then the conversion sum, then back to single-Montgomery form.
        let plain: Vec<Vec<u64>> = x
            .limbs()
            .iter()
            .map(|l| ntt_inv(l, false).expect("inverse").to_form(MontgomeryForm::Nm).coeffs().to_vec())
            .collect();
        for (i, &p) in bq.iter().enumerate() {
            let y: Vec<u64> = (0..n)
                .map(|k| {
                    (0..4).fold(0u64, |acc, j| {
                        let t = mul_mod(plain[j][k], qhat_inv[j], cq[j]);
                        (acc + mul_mod(t % p, qhat_mod(j, p), p)) % p
                    })
                })
                .collect();
            let m = b.moduli()[i].clone();
            let want = ResiduePoly::from_coeffs(m, y).expect("in range").to_form(MontgomeryForm::Sm);
            if merged.limb(i) != &want {
                return outcome(false, format!("trial {trial}, target limb {i} differs"));
            }
        }
    }
    outcome(true, "1000 polynomials at n = 256, |C| = 4, |B| = 2 bit-exact")
}

fn slots(n: usize, seed: u64) -> Vec<Complex64> {
    (0..n / 2)
        .map(|i| {
            let t = (i as f64 * 0.013 + seed as f64).sin();
            Complex64::new(0.9 * t, 0.4 * (3.0 * t).cos())
        })
        .collect()
}

fn keyswitch_end_to_end() -> Outcome {
    let (n, levels, dnum) = (1 << 10, 4, 2);
    let ctx = CkksContext::new(CkksParams::desk(n, levels, dnum)).expect("params");
    let keys = keygen_small(&ctx, 17, &[]).expect("keys");
    let enc = |seed| {
        let pt = Encoder::new(n).encode(&ctx, &slots(n, seed), ctx.default_scale(), levels).expect("encode");
        encrypt(&ctx, &keys.secret, &pt, seed).expect("encrypt")
    };
    let (a, b) = (enc(1), enc(2));
    let (d0, d1, d2) = tensor(&a, &b).expect("tensor");
    let (r0, r1) = key_switch(&ctx, &d2, &keys.relin).expect("key switch");

    let ir = gen_keyswitch(&WorkloadParams::desk(n, levels, dnum)).expect("generator");
    let hw = HardwareDescription::default();
    let p = compile(&ir, &hw, &PassConfig::all()).expect("compile").program;
    let mut img = MemoryImage::for_program(&p).expect("image");
    bind_poly(&mut img, "d2", 0, &d2).expect("bind");
    bind_key(&mut img, "evk", &keys.relin).expect("bind");
    execute(&p, &mut img).expect("execute");
    let k0 = read_poly(&img, "k0", 0, d2.basis()).expect("k0");
    let k1 = read_poly(&img, "k1", 0, d2.basis()).expect("k1");
    if k0 != r0 || k1 != r1 {
        return outcome(false, "compiled output differs from the reference key switch");
    }
    let ct = Ciphertext {
        c0: d0.zip_limbs(&k0, vec_madd).expect("add"),
        c1: d1.zip_limbs(&k1, vec_madd).expect("add"),
        scale: a.scale * b.scale,
    };
    let got = decrypt(&ctx, &keys.secret, &ct).expect("decrypt");
    let want = decrypt_three(&ctx, &keys.secret, &d0, &d1, &d2, ct.scale).expect("decrypt");
    let norm = want.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let err = got.iter().zip(&want).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / norm;
    let tol = 2f64.powi(-15);
    outcome(
        err < tol,
        format!(
            "{} instructions bit-identical to the reference; relinearized decryption relative error {err:.2e} (limit {tol:.2e})",
            p.instrs.len()
        ),
    )
}

fn automorphisms() -> Outcome {
    let n = 1 << 10;
    let q = ntt_primes_below(n, 1, 50, &[]).expect("prime")[0];
    let m = Modulus::new(q, n).expect("modulus");
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc4);
    let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
    let coeff = ResiduePoly::from_coeffs(m.clone(), a.clone()).expect("in range").to_form(MontgomeryForm::Sm);
    let f = ntt_fwd(&coeff).expect("forward");
    let plain = coeff.coeffs().to_vec();
    for s in 0..(n / 2) as i64 {
        // X^i → X^{i·5^s}, negated when the exponent wraps past n.
        let g = pow_mod(5, s as u64, 2 * n as u64) as usize;
        let mut out = vec![0u64; n];
        for (i, &c) in plain.iter().enumerate() {
            let e = i * g % (2 * n);
            if e < n {
                out[e] = c;
            } else {
                out[e - n] = (q - c) % q;
            }
        }
        let moved = ResiduePoly::new(m.clone(), out, coeff.layout()).expect("layout");
        let want = ntt_fwd(&moved).expect("forward");
        if automorphism_ntt(&f, s).expect("automorphism") != want {
            return outcome(false, format!("step {s} differs from the coefficient-domain round trip"));
        }
    }
    for (len, lanes) in [(16usize, 4usize), (16, 16), (256, 4), (256, 16)] {
        let rows = len / lanes;
        let x: Vec<u64> = (0..len as u64).map(|v| v * 31 + 7).collect();
        let bits = len.trailing_zeros();
        let stored: Vec<u64> = (0..len).map(|k| x[bit_reverse(k, bits)]).collect();
        let input: Vec<Vec<u64>> = stored.chunks(lanes).map(|c| c.to_vec()).collect();
        let direct: Vec<Vec<u64>> = (0..rows).map(|r| (0..lanes).map(|c| x[c * rows + r]).collect()).collect();
        if transpose_fixed_network(&input, lanes).expect("shape") != direct {
            return outcome(false, format!("transpose differs at n = {len}, lanes = {lanes}"));
        }
    }
    outcome(
        true,
        format!("all {} steps at n = 1024 exact; fixed-network transpose exact for n in {{16, 256}}, lanes in {{4, 16}}", n / 2),
    )
}

// ---------------------------------------------------------------- compiler

fn pass_soundness() -> Outcome {
    let hw = HardwareDescription::default().with_slots(4);
    let run = |p: &Program, seed: u64| {
        let mut img = random_image(p, seed).expect("image");
        execute(p, &mut img).expect("execute");
        img.snapshot(&["out"])
    };
    let programs = 200;
    for seed in 0..programs {
        let ir = random_program(seed, &RandomConfig::default()).expect("program");
        let want = run(&ir, seed);
        for mask in 0..64u8 {
            let c = compile(&ir, &hw, &PassConfig::from_mask(mask)).expect("compile");
            if run(&c.program, seed) != want {
                return outcome(false, format!("program {seed}, pass mask {mask:06b}"));
            }
        }
    }
    outcome(true, format!("{programs} programs x 64 pass subsets bit-identical"))
}

fn redundancy_elimination() -> Outcome {
    let ir = gen_bootstrap_skeleton(&WorkloadParams::full_size()).expect("skeleton");
    let lowered = lower(&ir).expect("lower");
    let optimize = |p: &Program| {
        let mut p = p.clone();
        let removed = propagate(&mut p) + eliminate_redundancy(&mut p);
        (p, removed)
    };
    let (base, removed) = optimize(&lowered);
    let frac = removed as f64 / lowered.instrs.len() as f64;
    let mut details = Vec::new();
    for (k, f) in [0.01, 0.05].into_iter().enumerate() {
        let (dup, injected) = inject_duplicates(&lowered, f, 100 + k as u64);
        let (opt, _) = optimize(&dup);
        let left = opt.instrs.len() as i64 - base.instrs.len() as i64;
        if left != 0 {
            return outcome(false, format!("{left} of {injected} injected duplicates survive"));
        }
        details.push(injected);
    }
    outcome(
        true,
        format!(
            "injected {details:?} duplicates into the full-size skeleton, 100% removed; un-injected skeleton: {removed} of {} ({:.2}%) eliminated, reference point 12.9%",
            lowered.instrs.len(),
            100.0 * frac
        ),
    )
}

fn instruction_mix_bands() -> Outcome {
    let ir = gen_bootstrap_skeleton(&WorkloadParams::full_size()).expect("skeleton");
    let mix = instruction_mix(&ir);
    let arith = 100.0 * mix.arithmetic_fraction();
    let ntt = 100.0 * mix.fraction(Category::Ntt);
    let bc_share = mix.count(Category::BcMult) as f64 / (mix.count(Category::Mult) + mix.count(Category::BcMult)) as f64;
    let pass = (arith - 90.9).abs() <= 5.0 && (ntt - 6.5).abs() <= 3.0;
    outcome(
        pass,
        format!(
            "{} instructions; MULT+ADD {arith:.2}% (90.9 +/- 5), NTT {ntt:.2}% (6.5 +/- 3), base-conversion share of multiplies {:.1}%",
            mix.total,
            100.0 * bc_share
        ),
    )
}

// ---------------------------------------------------------------- simulator

fn keyswitch_ir() -> Program {
    gen_keyswitch(&WorkloadParams::desk(1 << 10, 4, 2)).expect("generator")
}

fn streaming_benefit(reports: &mut Vec<SimReport>) -> Outcome {
    let ir = keyswitch_ir();
    let hw = HardwareDescription::default();
    let before_alloc = PassConfig {
        alloc: false,
        streaming: false,
        ..PassConfig::all()
    };
    let live = max_liveness(&compile(&ir, &hw, &before_alloc).expect("compile").program);
    let slots = (live / 2) as u32;
    let (c, _, _) = compare_streaming(&ir, &hw.with_slots(slots), &PassConfig::all()).expect("compare");
    let pass = c.with.dram.total_bytes < c.without.dram.total_bytes && c.with.cycles < c.without.cycles;
    let detail = format!(
        "{slots} slots (max liveness {live}): DRAM {} -> {} bytes ({:.1}% less, reference 42.2%), cycles {} -> {} ({:.1}% less, reference 40%)",
        c.without.dram.total_bytes,
        c.with.dram.total_bytes,
        100.0 * c.dram_saving,
        c.without.cycles,
        c.with.cycles,
        100.0 * c.cycle_saving
    );
    reports.push(c.with);
    reports.push(c.without);
    outcome(pass, detail)
}

fn sram_sweep(reports: &mut Vec<SimReport>) -> Outcome {
    let slots = [8, 16, 32, 64, 128];
    let points = sweep_sram(&keyswitch_ir(), &HardwareDescription::default(), &slots, &PassConfig::all()).expect("sweep");
    let cycles: Vec<u64> = points.iter().map(|p| p.report.cycles).collect();
    let util: Vec<f64> = points.iter().map(|p| p.report.fu_utilization()).collect();
    let pass = cycles.windows(2).all(|w| w[1] <= w[0]) && util.windows(2).all(|w| w[1] >= w[0]);
    reports.extend(points.into_iter().map(|p| p.report));
    outcome(
        pass,
        format!(
            "slots {slots:?}: cycles {cycles:?}, FU utilization [{}]",
            util.iter().map(|u| format!("{u:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn simulator_sanity(mut reports: Vec<SimReport>) -> Outcome {
    let desk = WorkloadParams::desk(1 << 6, 8, 2);
    let mut programs = vec![
        keyswitch_ir(),
        gen_hoisted_rotations(&WorkloadParams::desk(1 << 8, 4, 2)).expect("generator"),
        gen_helr_iteration(&desk).expect("generator"),
        gen_bootstrap_skeleton(&desk).expect("generator"),
    ];
    programs.extend((0..20).map(|s| random_program(s, &RandomConfig::default()).expect("program")));
    let hws = [HardwareDescription::default(), HardwareDescription::default().with_slots(8)];
    let mut repeated = 0;
    for ir in &programs {
        for hw in &hws {
            for cfg in [PassConfig::all(), PassConfig::none()] {
                let p = compile(ir, hw, &cfg).expect("compile").program;
                let first = simulate(&p, hw).expect("simulate");
                for _ in 0..4 {
                    if simulate(&p, hw).expect("simulate") != first {
                        return outcome(false, "repeated simulation differs");
                    }
                }
                repeated += 1;
                reports.push(first);
            }
        }
    }
    for r in &reports {
        let bound = r.critical_path.max(r.dram_bound);
        if r.cycles < bound {
            return outcome(false, format!("{} cycles below bound {bound}", r.cycles));
        }
    }
    outcome(
        true,
        format!(
            "{} reports at or above max(critical path, DRAM bytes / bandwidth); {repeated} programs identical over 5 runs",
            reports.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    all &= run(1, "kernel exactness", secs(30), kernel_exactness);
    all &= run(2, "merged base conversion", secs(10), merged_base_conversion);
    all &= run(3, "end-to-end key switch", secs(60), keyswitch_end_to_end);
    all &= run(4, "automorphism", secs(30), automorphisms);
    all &= run(5, "pass soundness", secs(300), pass_soundness);
    all &= run(6, "redundancy elimination", None, redundancy_elimination);
    all &= run(7, "instruction mix", secs(60), instruction_mix_bands);
    let mut reports = Vec::new();
    all &= run(8, "streaming benefit", None, || streaming_benefit(&mut reports));
    all &= run(9, "SRAM sweep", secs(300), || sram_sweep(&mut reports));
    all &= run(10, "simulator sanity", None, || simulator_sanity(reports));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
