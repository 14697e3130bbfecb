#![allow(dead_code)]

use covol::{Functional, Matrix, SpotCovPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `A Aᵀ + 0.5 I` with standard-normal-ish `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix<f64> {
    let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let mut m = a.matmul(&a.transpose()).unwrap();
    for i in 0..d {
        m[(i, i)] += 0.5;
    }
    m
}

/// A smoothly varying SPD path `A_i A_iᵀ + 0.2 I`, `A_i` a random walk.
pub fn random_path(rng: &mut ChaCha8Rng, d: usize, len: usize, k: usize, delta: f64) -> SpotCovPath<f64> {
    let mut a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let mut mats = Vec::with_capacity(len);
    for _ in 0..len {
        for v in a.as_mut_slice() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        let mut m = a.matmul(&a.transpose()).unwrap();
        for i in 0..d {
            m[(i, i)] += 0.2;
        }
        mats.push(m);
    }
    SpotCovPath::from_matrices(&mats, k, delta).unwrap()
}

/// Central finite-difference gradient, perturbing one entry at a time.
pub fn fd_gradient(f: &Functional<f64>, c: &Matrix<f64>, h: f64) -> Matrix<f64> {
    let d = c.rows();
    let base = c.as_slice().to_vec();
    Matrix::from_fn(d, d, |g, k| {
        let mut up = base.clone();
        let mut dn = base.clone();
        up[g * d + k] += h;
        dn[g * d + k] -= h;
        (f.value_unchecked(&up).unwrap() - f.value_unchecked(&dn).unwrap()) / (2.0 * h)
    })
}

/// Every kind of functional the algebra offers, on dimension `d ≥ 2`.
pub fn catalogue(d: usize) -> Vec<Functional<f64>> {
    let e = |a, b| Functional::entry(d, a, b).unwrap();
    let factors: Vec<usize> = (1..d).collect();
    let mut out = vec![
        e(0, 0),
        e(0, d - 1),
        e(1, 1).scale(0.45),
        e(0, 0).add(&e(1, 1)).unwrap(),
        e(0, 1).sub(&e(d - 1, d - 1)).unwrap(),
        e(0, 1).mul(&e(1, 0)).unwrap(),
        e(0, 1).div(&e(1, 1)).unwrap(),
        Functional::idiovol(d, 0, &[d - 1]).unwrap(),
        Functional::idiovol(d, 0, &factors).unwrap(),
        Functional::beta(d, 0, &[d - 1], 0).unwrap(),
        Functional::beta(d, 0, &factors, factors.len() - 1).unwrap(),
    ];
    let iv = Functional::idiovol(d, 0, &factors).unwrap();
    out.push(iv.div(&e(0, 0)).unwrap());
    out.push(e(0, 1).div(&e(0, 0).mul(&e(1, 1)).unwrap()).unwrap());
    out.push(Functional::idiovol(d, 1, &[0]).unwrap().mul(&iv).unwrap().scale(2.0));
    out
}
