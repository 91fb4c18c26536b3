use effact_core::ckks::{
    decrypt, decrypt_three, encrypt, encrypt_zero, hadd, hmult, hoisted_rotations, hrot, key_switch,
    key_switch_unmerged, keygen_small, rescale, tensor, Ciphertext, CkksContext, CkksParams, Encoder, KeySet,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Fixture {
    ctx: CkksContext,
    keys: KeySet,
    enc: Encoder,
}

fn fixture(n: usize, levels: usize, dnum: usize, rotations: &[i64]) -> Fixture {
    let ctx = CkksContext::new(CkksParams::desk(n, levels, dnum)).unwrap();
    let keys = keygen_small(&ctx, 42, rotations).unwrap();
    Fixture {
        enc: Encoder::new(n),
        ctx,
        keys,
    }
}

impl Fixture {
    fn encrypt(&self, z: &[Complex64], seed: u64) -> Ciphertext {
        let l = self.ctx.params().levels;
        let pt = self.enc.encode(&self.ctx, z, self.ctx.default_scale(), l).unwrap();
        encrypt(&self.ctx, &self.keys.secret, &pt, seed).unwrap()
    }

    fn constant(&self, v: f64, seed: u64) -> Ciphertext {
        self.encrypt(&vec![Complex64::new(v, 0.0); self.enc.slots()], seed)
    }

    fn decrypt(&self, ct: &Ciphertext) -> Vec<Complex64> {
        decrypt(&self.ctx, &self.keys.secret, ct).unwrap()
    }
}

fn random_slots(rng: &mut ChaCha20Rng, k: usize) -> Vec<Complex64> {
    (0..k)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn encrypt_decrypt_round_trip() {
    let f = fixture(64, 3, 3, &[]);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let z = random_slots(&mut rng, 32);
    let back = f.decrypt(&f.encrypt(&z, 7));
    assert!(max_err(&z, &back) < 2f64.powi(-20));
}

#[test]
fn hadd_behaviour() {
    let f = fixture(64, 3, 3, &[]);
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let z = random_slots(&mut rng, 32);
    let w = random_slots(&mut rng, 32);
    let a = f.encrypt(&z, 1);
    let b = f.encrypt(&w, 2);
    assert_eq!(hadd(&a, &b).unwrap(), hadd(&b, &a).unwrap());
    let zero = encrypt_zero(&f.ctx, &f.keys.secret, 3, f.ctx.default_scale(), 3).unwrap();
    assert!(max_err(&z, &f.decrypt(&hadd(&a, &zero).unwrap())) < 2f64.powi(-20));
    let twice: Vec<Complex64> = z.iter().map(|x| x * 2.0).collect();
    assert!(max_err(&twice, &f.decrypt(&hadd(&a, &a).unwrap())) < 2f64.powi(-19));
    let sum: Vec<Complex64> = z.iter().zip(&w).map(|(x, y)| x + y).collect();
    assert!(max_err(&sum, &f.decrypt(&hadd(&a, &b).unwrap())) < 2f64.powi(-19));
    let short = rescale(&f.ctx, &a).unwrap();
    assert!(hadd(&a, &short).is_err());
}

#[test]
fn hmult_constants() {
    let f = fixture(64, 4, 2, &[]);
    let tol = 2f64.powi(-15);
    let two = f.constant(2.0, 1);
    let three = f.constant(3.0, 2);
    let p = hmult(&f.ctx, &two, &three, &f.keys.relin).unwrap();
    assert_eq!(p.limbs(), 3);
    for v in f.decrypt(&p) {
        assert!((v - Complex64::new(6.0, 0.0)).norm() / 6.0 < tol, "{v}");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let z = random_slots(&mut rng, 32);
    let one = f.constant(1.0, 4);
    let kept = f.decrypt(&hmult(&f.ctx, &f.encrypt(&z, 5), &one, &f.keys.relin).unwrap());
    assert!(max_err(&z, &kept) < tol);
    let zero = f.constant(0.0, 6);
    let gone = f.decrypt(&hmult(&f.ctx, &f.encrypt(&z, 7), &zero, &f.keys.relin).unwrap());
    assert!(gone.iter().all(|v| v.norm() < tol));
}

#[test]
fn hmult_random_pairs_and_scale_bookkeeping() {
    let f = fixture(256, 4, 2, &[]);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for i in 0..6 {
        let z = random_slots(&mut rng, 128);
        let w = random_slots(&mut rng, 128);
        let a = f.encrypt(&z, 100 + i);
        let b = f.encrypt(&w, 200 + i);
        let p = hmult(&f.ctx, &a, &b, &f.keys.relin).unwrap();
        let ql = f.ctx.q_moduli()[3].value() as f64;
        assert_eq!(p.scale, a.scale * b.scale / ql);
        let expect: Vec<Complex64> = z.iter().zip(&w).map(|(x, y)| x * y).collect();
        assert!(max_err(&expect, &f.decrypt(&p)) < 2f64.powi(-15));
    }
}

#[test]
fn key_switch_matches_three_component_decryption() {
    for (levels, dnum) in [(4, 2), (3, 3), (4, 4), (3, 1)] {
        let f = fixture(64, levels, dnum, &[]);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = f.encrypt(&random_slots(&mut rng, 32), 1);
        let b = f.encrypt(&random_slots(&mut rng, 32), 2);
        let (d0, d1, d2) = tensor(&a, &b).unwrap();
        let (k0, k1) = key_switch(&f.ctx, &d2, &f.keys.relin).unwrap();
        let scale = a.scale * b.scale;
        let oracle = decrypt_three(&f.ctx, &f.keys.secret, &d0, &d1, &d2, scale).unwrap();
        let ct = Ciphertext {
            c0: d0.zip_limbs(&k0, effact_core::kernels::vec_madd).unwrap(),
            c1: d1.zip_limbs(&k1, effact_core::kernels::vec_madd).unwrap(),
            scale,
        };
        let got = f.decrypt(&ct);
        let rel = max_err(&oracle, &got) / oracle.iter().map(|v| v.norm()).fold(1e-3, f64::max);
        assert!(rel < 2f64.powi(-15), "L={levels} dnum={dnum} rel={rel}");
        assert_eq!((k0, k1), key_switch_unmerged(&f.ctx, &d2, &f.keys.relin).unwrap());
    }
}

#[test]
fn key_switch_at_lower_levels() {
    let f = fixture(64, 4, 2, &[]);
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let a = rescale(&f.ctx, &f.encrypt(&random_slots(&mut rng, 32), 1)).unwrap();
    assert_eq!(a.limbs(), 3);
    let (k0, k1) = key_switch(&f.ctx, &a.c1, &f.keys.relin).unwrap();
    assert_eq!(k0.len(), 3);
    assert_eq!((k0, k1), key_switch_unmerged(&f.ctx, &a.c1, &f.keys.relin).unwrap());
}

#[test]
fn rescale_drops_one_limb() {
    let f = fixture(64, 3, 3, &[]);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let z = random_slots(&mut rng, 32);
    let a = f.encrypt(&z, 1);
    let r = rescale(&f.ctx, &a).unwrap();
    assert_eq!(r.limbs(), a.limbs() - 1);
    assert_eq!(r.scale, a.scale / f.ctx.q_moduli()[2].value() as f64);
    // Rounding error is at most 1/2 per coefficient before the new scale.
    let slack = 64.0 / r.scale;
    assert!(max_err(&z, &f.decrypt(&r)) < 2f64.powi(-20) + slack);
    let last = rescale(&f.ctx, &r).unwrap();
    assert!(rescale(&f.ctx, &last).is_err());
}

fn rotate(z: &[Complex64], s: usize) -> Vec<Complex64> {
    (0..z.len()).map(|j| z[(j + s) % z.len()]).collect()
}

#[test]
fn rotations() {
    let f = fixture(64, 3, 3, &[1, 2, 3, 5, 31]);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let z = random_slots(&mut rng, 32);
    let ct = f.encrypt(&z, 1);
    assert_eq!(hrot(&f.ctx, &ct, 0, &f.keys).unwrap(), ct);
    for s in [1usize, 2, 3, 5, 31] {
        let r = hrot(&f.ctx, &ct, s as i64, &f.keys).unwrap();
        assert!(max_err(&rotate(&z, s), &f.decrypt(&r)) < 2f64.powi(-18), "s={s}");
    }
    let r12 = hrot(&f.ctx, &hrot(&f.ctx, &ct, 1, &f.keys).unwrap(), 2, &f.keys).unwrap();
    let r3 = hrot(&f.ctx, &ct, 3, &f.keys).unwrap();
    assert!(max_err(&f.decrypt(&r12), &f.decrypt(&r3)) < 2f64.powi(-18));
    assert!(hrot(&f.ctx, &ct, 4, &f.keys).is_err());
    assert!(max_err(&rotate(&z, 31), &f.decrypt(&hrot(&f.ctx, &ct, -1, &f.keys).unwrap())) < 2f64.powi(-18));
}

#[test]
fn hoisted_rotations_agree_with_hrot() {
    let f = fixture(64, 4, 2, &[1, 3, 7]);
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let z = random_slots(&mut rng, 32);
    let ct = f.encrypt(&z, 1);
    let steps = [1, 3, 0, 7];
    let many = hoisted_rotations(&f.ctx, &ct, &steps, &f.keys).unwrap();
    for (s, r) in steps.iter().zip(&many) {
        let single = f.decrypt(&hrot(&f.ctx, &ct, *s, &f.keys).unwrap());
        assert!(max_err(&single, &f.decrypt(r)) < 2f64.powi(-18));
        assert!(max_err(&rotate(&z, *s as usize), &f.decrypt(r)) < 2f64.powi(-18));
    }
}
