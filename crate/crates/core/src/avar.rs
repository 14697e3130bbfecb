//! Plug-in estimator of the asymptotic covariance of a vector of
//! quadratic-covariation estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::matrix::Matrix;
use crate::quadcov::{check_tracks, noise_cov, window_range, FunctionalTrack};
use crate::scalar::Scalar;
use crate::spot::{SpotCovPath, VolJumpMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Omegas<T> {
    pub omega1: T,
    pub omega2: T,
    pub omega3: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvarMatrix<T> {
    pub sigma: Matrix<T>,
    pub omega1: Matrix<T>,
    pub omega2: Matrix<T>,
    pub omega3: Matrix<T>,
    pub theta: T,
    pub delta_n: T,
    pub summand_count: usize,
}

impl<T: Scalar> AvarMatrix<T> {
    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    /// True if some diagonal entry of `Σ̂` is negative.
    pub fn has_negative_diagonal(&self) -> bool {
        (0..self.dim()).any(|r| self.sigma[(r, r)] < T::zero())
    }

    /// `min eigenvalue ≥ −tol · trace`.
    pub fn is_psd(&self, tol: T) -> Result<bool> {
        let ev = self.sigma.symmetric_eigenvalues()?;
        let min = ev.iter().copied().fold(T::infinity(), T::min);
        Ok(min >= -tol * self.sigma.trace().abs())
    }
}

/// `Σ̂` from the three `Ω̂` sums at window scale `θ`.
pub fn sigma_entry<T: Scalar>(om: &Omegas<T>, theta: T) -> T {
    let (o1, o2, o3) = (om.omega1, om.omega2, om.omega3);
    let six = T::lit(6.0);
    let t2 = theta * theta;
    let s1 = six / (t2 * theta) * o1;
    let s3 = T::lit(1.5) / theta * (o3 - six / t2 * o1);
    let s2 = T::lit(151.0) * theta / T::lit(140.0) * T::lit(9.0) / (T::lit(4.0) * t2)
        * (o2 + T::lit(4.0) / t2 * o1 - T::lit(4.0) / T::lit(3.0) * o3);
    s1 + s3 + s2
}

/// Per-window statistics shared by every `(r, s)` entry.
struct WindowStats<T> {
    l0: Vec<T>,
    l2: Vec<T>,
    b: Vec<T>,
}

/// All `Ω̂^{r,s}` for `pairs[r] = (H_r, G_r)` in one pass over the path.
/// Tracks may be shared between pairs; gradients are reused.
pub fn omega_matrix<T: Scalar>(
    tracks: &[&FunctionalTrack<T>],
    pairs: &[(usize, usize)],
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<(Vec<Omegas<T>>, usize)> {
    check_tracks(path, tracks)?;
    if pairs.iter().any(|&(h, g)| h >= tracks.len() || g >= tracks.len()) {
        return Err(Error::DimensionMismatch { expected: tracks.len(), found: tracks.len() + 1 });
    }
    let k = path.k_n();
    let d = path.dim();
    let (lo, hi) = window_range(path, k, 4)?;
    if let Some(m) = mask {
        m.check_compatible(path)?;
        m.event(lo)?;
        m.event(hi - 1 + 3 * k)?;
    }
    let u = tracks.len();
    let kappa = pairs.len();
    let entries: Vec<(usize, usize)> = (0..kappa).flat_map(|r| (r..kappa).map(move |s| (r, s))).collect();
    let n_out = 3 * entries.len();
    let gate = |i: usize| mask.is_none_or(|m| (0..4).all(|j| m.get(i + j * k) == Some(true)));
    let delta = path.delta_n();
    let three_half_k = T::lit(1.5) / T::from_count(k);
    let half = T::lit(0.5);

    let sums = sum_dyn(lo, hi, n_out, |i, acc: &mut [T]| {
        if !gate(i) {
            return;
        }
        let c = path.get(i);
        let (c1, c2, c3) = (path.get(i + k), path.get(i + 2 * k), path.get(i + 3 * k));
        let mut st = WindowStats { l0: vec![T::zero(); u], l2: vec![T::zero(); u], b: vec![T::zero(); u * u] };
        for (t, tr) in tracks.iter().enumerate() {
            st.l0[t] = tr.contract_diff(i, c1, c);
            st.l2[t] = tr.contract_diff(i, c3, c2);
        }
        for x in 0..u {
            for y in x..u {
                let v = noise_cov(tracks[x], tracks[y], i, c, d);
                st.b[x * u + y] = v;
                st.b[y * u + x] = v;
            }
        }
        let b = |x: usize, y: usize| st.b[x * u + y];
        for (e, &(r, s)) in entries.iter().enumerate() {
            let (hr, gr) = pairs[r];
            let (hs, gs) = pairs[s];
            let (l0, l2) = (&st.l0, &st.l2);
            let o1 = b(hr, hs) * b(gr, gs) + b(gr, hs) * b(hr, gs);
            let o2 = half
                * (l0[hr] * l0[hs] * l2[gr] * l2[gs]
                    + l0[gr] * l0[gs] * l2[hr] * l2[hs]
                    + l0[gr] * l0[hs] * l2[hr] * l2[gs]
                    + l0[hr] * l0[gs] * l2[gr] * l2[hs]);
            let o3 = b(hr, hs) * l0[gr] * l0[gs]
                + b(gr, gs) * l0[hr] * l0[hs]
                + b(hr, gs) * l0[gr] * l0[hs]
                + b(gr, hs) * l0[hr] * l0[gs];
            acc[3 * e] = acc[3 * e] + o1;
            acc[3 * e + 1] = acc[3 * e + 1] + o2;
            acc[3 * e + 2] = acc[3 * e + 2] + o3;
        }
    });
    let out = entries
        .iter()
        .enumerate()
        .map(|(e, _)| Omegas {
            omega1: delta * sums[3 * e],
            omega2: sums[3 * e + 1],
            omega3: three_half_k * sums[3 * e + 2],
        })
        .collect();
    Ok((out, hi - lo))
}

/// Fixed-order chunked sum of a vector-valued summand.
fn sum_dyn<T: Scalar>(lo: usize, hi: usize, n: usize, f: impl Fn(usize, &mut [T]) + Sync) -> Vec<T> {
    use rayon::prelude::*;
    const CHUNK: usize = crate::reduce::CHUNK;
    if hi <= lo {
        return vec![T::zero(); n];
    }
    let chunks = (hi - lo).div_ceil(CHUNK);
    let partial: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![T::zero(); n];
            for i in (lo + c * CHUNK)..(lo + (c + 1) * CHUNK).min(hi) {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); n];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    total
}

/// `(Ω̂₁, Ω̂₂, Ω̂₃)` for the pair of pairs `(H_r, G_r)`, `(H_s, G_s)`.
pub fn omega_terms<T: Scalar>(
    hr: &Functional<T>,
    gr: &Functional<T>,
    hs: &Functional<T>,
    gs: &Functional<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<Omegas<T>> {
    let t: Vec<FunctionalTrack<T>> =
        [hr, gr, hs, gs].iter().map(|f| FunctionalTrack::new(f, path)).collect::<Result<_>>()?;
    let refs: Vec<&FunctionalTrack<T>> = t.iter().collect();
    let (om, _) = omega_matrix(&refs, &[(0, 1), (2, 3)], path, mask)?;
    // entries are (0,0), (0,1), (1,1)
    Ok(om[1])
}

/// `Σ̂` for tracked pairs, symmetrized.
pub fn sigma_matrix_tracks<T: Scalar>(
    tracks: &[&FunctionalTrack<T>],
    pairs: &[(usize, usize)],
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<AvarMatrix<T>> {
    let kappa = pairs.len();
    if kappa == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    let (om, count) = omega_matrix(tracks, pairs, path, mask)?;
    let theta = path.theta();
    let mut sigma = Matrix::zeros(kappa, kappa);
    let mut o1 = Matrix::zeros(kappa, kappa);
    let mut o2 = Matrix::zeros(kappa, kappa);
    let mut o3 = Matrix::zeros(kappa, kappa);
    let mut e = 0;
    for r in 0..kappa {
        for s in r..kappa {
            let v = sigma_entry(&om[e], theta);
            for (m, x) in [(&mut sigma, v), (&mut o1, om[e].omega1), (&mut o2, om[e].omega2), (&mut o3, om[e].omega3)] {
                m[(r, s)] = x;
                m[(s, r)] = x;
            }
            e += 1;
        }
    }
    Ok(AvarMatrix { sigma, omega1: o1, omega2: o2, omega3: o3, theta, delta_n: path.delta_n(), summand_count: count })
}

/// `Σ̂` for the list of `(H_r, G_r)` pairs.
pub fn sigma_matrix<T: Scalar>(
    pairs: &[(Functional<T>, Functional<T>)],
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<AvarMatrix<T>> {
    let mut uniq: Vec<&Functional<T>> = Vec::new();
    for f in pairs.iter().flat_map(|(h, g)| [h, g]) {
        if !uniq.contains(&f) {
            uniq.push(f);
        }
    }
    let pos = |f: &Functional<T>| uniq.iter().position(|u| *u == f).expect("collected above");
    let ids: Vec<(usize, usize)> = pairs.iter().map(|(h, g)| (pos(h), pos(g))).collect();
    let tracks: Vec<FunctionalTrack<T>> =
        uniq.iter().map(|f| FunctionalTrack::new(f, path)).collect::<Result<_>>()?;
    let refs: Vec<&FunctionalTrack<T>> = tracks.iter().collect();
    sigma_matrix_tracks(&refs, &ids, path, mask)
}

/// `gᵀ Σ̂ g`.
pub fn delta_method_var<T: Scalar>(gradient: &[T], sigma: &Matrix<T>) -> Result<T> {
    sigma.quad_form(gradient, gradient)
}
