//! Naive, AN and LIN estimators of `[H(C), G(C)]ᶜ_T`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::reduce::sum_indexed;
use crate::scalar::Scalar;
use crate::spot::{SpotCovPath, VolJumpMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    An,
    Lin,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Naive => "naive",
            Method::An => "an",
            Method::Lin => "lin",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Method::Naive),
            "an" => Ok(Method::An),
            "lin" => Ok(Method::Lin),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadCovEstimate<T> {
    pub value: T,
    pub method: Method,
    pub pair_id: (String, String),
    pub fingerprint: u64,
    pub summand_count: usize,
    /// Set when `H = G` but the estimate came out negative.
    pub negative_warning: bool,
}

/// Values and sparse gradients of one functional along a spot path.
#[derive(Clone, Debug)]
pub struct FunctionalTrack<T> {
    name: String,
    support: Vec<(usize, usize)>,
    flat: Vec<usize>,
    values: Vec<T>,
    grads: Vec<T>,
}

impl<T: Scalar> FunctionalTrack<T> {
    pub fn new(f: &Functional<T>, path: &SpotCovPath<T>) -> Result<Self> {
        let d = path.dim();
        if f.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: f.dim() });
        }
        let support = f.support();
        let flat: Vec<usize> = support.iter().map(|&(g, h)| g * d + h).collect();
        let nnz = flat.len();
        let len = path.len();
        let mut values = vec![T::zero(); len];
        let mut grads = vec![T::zero(); len * nnz];
        const BLOCK: usize = 1024;
        values
            .par_chunks_mut(BLOCK)
            .zip(grads.par_chunks_mut((BLOCK * nnz).max(1)))
            .enumerate()
            .try_for_each(|(b, (vals, gr))| -> Result<()> {
                for (o, v) in vals.iter_mut().enumerate() {
                    let (val, dense) = f.eval_unchecked(path.get(b * BLOCK + o))?;
                    *v = val;
                    for (s, &idx) in flat.iter().enumerate() {
                        gr[o * nnz + s] = dense[idx];
                    }
                }
                Ok(())
            })?;
        Ok(Self { name: f.to_string(), support, flat, values, grads })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> T {
        self.values[i]
    }

    pub fn support(&self) -> &[(usize, usize)] {
        &self.support
    }

    /// Nonzero gradient entries at window `i`, aligned with [`support`](Self::support).
    pub fn grad(&self, i: usize) -> &[T] {
        let nnz = self.flat.len();
        &self.grads[i * nnz..(i + 1) * nnz]
    }

    /// `⟨∇H(Ĉ_i), Ĉ_b − Ĉ_a⟩`.
    pub(crate) fn contract_diff(&self, i: usize, hi: &[T], lo: &[T]) -> T {
        self.grad(i).iter().zip(&self.flat).fold(T::zero(), |s, (g, &idx)| s + *g * (hi[idx] - lo[idx]))
    }
}

/// `Σ X_gh Y_ab (c_ga c_hb + c_gb c_ha)` with `X = ∇x(Ĉ_i)`, `Y = ∇y(Ĉ_i)`, `c = Ĉ_i`.
pub(crate) fn noise_cov<T: Scalar>(x: &FunctionalTrack<T>, y: &FunctionalTrack<T>, i: usize, c: &[T], d: usize) -> T {
    let (gx, gy) = (x.grad(i), y.grad(i));
    let mut s = T::zero();
    for (&(g, h), &xv) in x.support.iter().zip(gx) {
        if xv == T::zero() {
            continue;
        }
        let mut inner = T::zero();
        for (&(a, b), &yv) in y.support.iter().zip(gy) {
            inner = inner + yv * (c[g * d + a] * c[h * d + b] + c[g * d + b] * c[h * d + a]);
        }
        s = s + xv * inner;
    }
    s
}

pub(crate) fn check_tracks<T: Scalar>(path: &SpotCovPath<T>, tracks: &[&FunctionalTrack<T>]) -> Result<()> {
    for t in tracks {
        if t.len() != path.len() {
            return Err(Error::DimensionMismatch { expected: path.len(), found: t.len() });
        }
    }
    Ok(())
}

/// Index range `[start, end)` of window starts summed by an estimator that
/// looks `reach · k_n` windows ahead and starts at `start`.
pub(crate) fn window_range<T: Scalar>(path: &SpotCovPath<T>, start: usize, reach: usize) -> Result<(usize, usize)> {
    let k = path.k_n();
    let needed = start + reach * k + 1;
    if path.len() < needed {
        return Err(Error::PathTooShort { needed, found: path.len() });
    }
    Ok((start, path.len() - reach * k))
}

fn estimate<T: Scalar>(
    value: T,
    method: Method,
    h: &FunctionalTrack<T>,
    g: &FunctionalTrack<T>,
    path: &SpotCovPath<T>,
    count: usize,
) -> QuadCovEstimate<T> {
    QuadCovEstimate {
        value,
        method,
        pair_id: (h.name.clone(), g.name.clone()),
        fingerprint: path.fingerprint(),
        summand_count: count,
        negative_warning: h.name == g.name && value < T::zero(),
    }
}

/// `(1/k_n) Σ_{i} ΔH ΔG` over the naive estimator's full range.
pub fn qc_naive_tracks<T: Scalar>(
    h: &FunctionalTrack<T>,
    g: &FunctionalTrack<T>,
    path: &SpotCovPath<T>,
) -> Result<QuadCovEstimate<T>> {
    check_tracks(path, &[h, g])?;
    let k = path.k_n();
    let (lo, hi) = window_range(path, 0, 1)?;
    let [s] = sum_indexed(lo, hi, |i| [(h.value(i + k) - h.value(i)) * (g.value(i + k) - g.value(i))]);
    Ok(estimate(s / T::from_count(k), Method::Naive, h, g, path, hi - lo))
}

/// Raw product part and additive correction part of the AN estimator.
/// Their sum is the AN estimate.
pub fn an_parts<T: Scalar>(
    h: &FunctionalTrack<T>,
    g: &FunctionalTrack<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<(T, T, usize)> {
    check_tracks(path, &[h, g])?;
    let k = path.k_n();
    let d = path.dim();
    let (lo, hi) = window_range(path, k, 2)?;
    if let Some(m) = mask {
        m.check_compatible(path)?;
        m.event(lo)?;
        m.event(hi - 1 + k)?;
    }
    let gate = |i: usize| mask.is_none_or(|m| m.get(i) == Some(true) && m.get(i + k) == Some(true));
    let [raw, corr] = sum_indexed(lo, hi, |i| {
        if !gate(i) {
            return [T::zero(); 2];
        }
        let prod = (h.value(i + k) - h.value(i)) * (g.value(i + k) - g.value(i));
        [prod, noise_cov(h, g, i, path.get(i), d)]
    });
    let kk = T::from_count(k);
    let f = T::lit(1.5) / kk;
    Ok((f * raw, -(f * T::lit(2.0) / kk) * corr, hi - lo))
}

pub fn qc_an_tracks<T: Scalar>(
    h: &FunctionalTrack<T>,
    g: &FunctionalTrack<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<QuadCovEstimate<T>> {
    let k = path.k_n();
    let d = path.dim();
    check_tracks(path, &[h, g])?;
    let (lo, hi) = window_range(path, k, 2)?;
    if let Some(m) = mask {
        m.check_compatible(path)?;
        m.event(lo)?;
        m.event(hi - 1 + k)?;
    }
    let kk = T::from_count(k);
    let two_over_k = T::lit(2.0) / kk;
    let gate = |i: usize| mask.is_none_or(|m| m.get(i) == Some(true) && m.get(i + k) == Some(true));
    let [s] = sum_indexed(lo, hi, |i| {
        if !gate(i) {
            return [T::zero()];
        }
        let prod = (h.value(i + k) - h.value(i)) * (g.value(i + k) - g.value(i));
        [prod - two_over_k * noise_cov(h, g, i, path.get(i), d)]
    });
    Ok(estimate(T::lit(1.5) / kk * s, Method::An, h, g, path, hi - lo))
}

pub fn qc_lin_tracks<T: Scalar>(
    h: &FunctionalTrack<T>,
    g: &FunctionalTrack<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<QuadCovEstimate<T>> {
    let k = path.k_n();
    let d = path.dim();
    check_tracks(path, &[h, g])?;
    let (lo, hi) = window_range(path, k, 2)?;
    if let Some(m) = mask {
        m.check_compatible(path)?;
        m.event(lo)?;
        m.event(hi - 1 + k)?;
    }
    let kk = T::from_count(k);
    let two_over_k = T::lit(2.0) / kk;
    let gate = |i: usize| mask.is_none_or(|m| m.get(i) == Some(true) && m.get(i + k) == Some(true));
    let [s] = sum_indexed(lo, hi, |i| {
        if !gate(i) {
            return [T::zero()];
        }
        let (c0, c1) = (path.get(i), path.get(i + k));
        let prod = h.contract_diff(i, c1, c0) * g.contract_diff(i, c1, c0);
        [prod - two_over_k * noise_cov(h, g, i, c0, d)]
    });
    Ok(estimate(T::lit(1.5) / kk * s, Method::Lin, h, g, path, hi - lo))
}

pub fn qc_tracks<T: Scalar>(
    method: Method,
    h: &FunctionalTrack<T>,
    g: &FunctionalTrack<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<QuadCovEstimate<T>> {
    match method {
        Method::Naive => qc_naive_tracks(h, g, path),
        Method::An => qc_an_tracks(h, g, path, mask),
        Method::Lin => qc_lin_tracks(h, g, path, mask),
    }
}

pub fn qc_naive<T: Scalar>(h: &Functional<T>, g: &Functional<T>, path: &SpotCovPath<T>) -> Result<QuadCovEstimate<T>> {
    qc_naive_tracks(&FunctionalTrack::new(h, path)?, &FunctionalTrack::new(g, path)?, path)
}

/// AN estimator; `mask = None` drops the volatility-jump indicator.
pub fn qc_an<T: Scalar>(
    h: &Functional<T>,
    g: &Functional<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<QuadCovEstimate<T>> {
    qc_an_tracks(&FunctionalTrack::new(h, path)?, &FunctionalTrack::new(g, path)?, path, mask)
}

/// LIN estimator; `mask = None` drops the volatility-jump indicator.
pub fn qc_lin<T: Scalar>(
    h: &Functional<T>,
    g: &Functional<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
) -> Result<QuadCovEstimate<T>> {
    qc_lin_tracks(&FunctionalTrack::new(h, path)?, &FunctionalTrack::new(g, path)?, path, mask)
}
