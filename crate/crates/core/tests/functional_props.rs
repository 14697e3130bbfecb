mod common;

use common::{catalogue, fd_gradient, random_spd, rng};
use covol::{Functional, Matrix};
use proptest::prelude::*;

#[test]
fn gradients_match_central_differences_on_random_spd() {
    let mut r = rng(11);
    for d in [2, 3, 5] {
        for _ in 0..100 {
            let c = random_spd(&mut r, d);
            for f in catalogue(d) {
                let an = f.gradient(&c).unwrap();
                let fd = fd_gradient(&f, &c, 1e-6);
                for (a, n) in an.as_slice().iter().zip(fd.as_slice()) {
                    let rel = (a - n).abs() / (1.0 + a.abs());
                    assert!(rel < 1e-6, "{f}: analytic {a} vs fd {n} (d = {d})");
                }
            }
        }
    }
}

#[test]
fn idiovol_partials_two_assets() {
    let c = Matrix::<f64>::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let f = Functional::idiovol(2, 0, &[1]).unwrap();
    let g = f.gradient(&c).unwrap();
    let fd = fd_gradient(&f, &c, 1e-6);
    for (want, idx) in [(1.0, (0, 0)), (-0.5, (0, 1)), (-0.5, (1, 0)), (0.25, (1, 1))] {
        assert!((g[idx] - want).abs() < 1e-14);
        assert!((fd[idx] - want).abs() < 1e-8);
    }
}

#[test]
fn quotient_gradient_matches_finite_difference() {
    let c = Matrix::<f64>::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let f = Functional::entry(2, 0, 1).unwrap().div(&Functional::entry(2, 1, 1).unwrap()).unwrap();
    assert_eq!(f.value(&c).unwrap(), 0.5);
    let g = f.gradient(&c).unwrap();
    assert!((g[(1, 1)] + 0.5).abs() < 1e-15);
    assert!((fd_gradient(&f, &c, 1e-6)[(1, 1)] + 0.5).abs() < 1e-8);
}

/// Residual variance via an explicitly inverted factor block (cofactor
/// formula for 2×2, Gauss–Jordan otherwise), independent of the LU path.
fn idiovol_by_inverse(c: &Matrix<f64>, j: usize, f: &[usize]) -> f64 {
    let m = f.len();
    let mut a: Vec<Vec<f64>> = (0..m).map(|p| (0..m).map(|q| c[(f[p], f[q])]).collect()).collect();
    let mut inv: Vec<Vec<f64>> = (0..m).map(|p| (0..m).map(|q| f64::from(u8::from(p == q))).collect()).collect();
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for q in 0..m {
            a[col][q] /= p;
            inv[col][q] /= p;
        }
        for r in 0..m {
            if r != col {
                let fct = a[r][col];
                for q in 0..m {
                    a[r][q] -= fct * a[col][q];
                    inv[r][q] -= fct * inv[col][q];
                }
            }
        }
    }
    let mut quad = 0.0;
    for p in 0..m {
        for q in 0..m {
            quad += c[(j, f[p])] * inv[p][q] * c[(f[q], j)];
        }
    }
    c[(j, j)] - quad
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn idiovol_matches_explicit_inverse(seed in any::<u64>(), d in 2usize..6) {
        let mut r = rng(seed);
        let c = random_spd(&mut r, d);
        let factors: Vec<usize> = (1..d).collect();
        let f = Functional::idiovol(d, 0, &factors).unwrap();
        let v = f.value(&c).unwrap();
        let o = idiovol_by_inverse(&c, 0, &factors);
        prop_assert!((v - o).abs() < 1e-12 * (1.0 + o.abs()), "{} vs {}", v, o);
    }

    #[test]
    fn linear_gradients_do_not_depend_on_c(seed in any::<u64>(), d in 2usize..6) {
        let mut r = rng(seed);
        let lin = [
            Functional::entry(d, 0, 1).unwrap(),
            Functional::entry(d, 0, 0).unwrap().scale(-3.0).add(&Functional::entry(d, 1, 1).unwrap()).unwrap(),
            Functional::entry(d, d - 1, 0).unwrap().sub(&Functional::constant(d, 2.0)).unwrap(),
        ];
        let (c1, c2) = (random_spd(&mut r, d), random_spd(&mut r, d));
        for f in &lin {
            prop_assert!(f.is_linear());
            prop_assert_eq!(f.gradient(&c1).unwrap(), f.gradient(&c2).unwrap());
        }
    }

    #[test]
    fn gradient_vanishes_off_support(seed in any::<u64>(), d in 2usize..6) {
        let mut r = rng(seed);
        let c = random_spd(&mut r, d);
        for f in catalogue(d) {
            let g = f.gradient(&c).unwrap();
            let sup = f.support();
            for a in 0..d {
                for b in 0..d {
                    if !sup.contains(&(a, b)) {
                        prop_assert_eq!(g[(a, b)], 0.0);
                    }
                }
            }
        }
    }
}
