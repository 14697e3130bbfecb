//! Local truncated realized covariance and volatility-jump detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorConfig, TruncationRule, VolJumpRule};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::panel::ReturnPanel;
use crate::scalar::Scalar;

/// Annualized bipower variation `(π/2) Σ |r_i||r_{i−1}| / ((m−1)Δₙ)` of one day.
pub fn bipower_sigma2<T: Scalar>(returns: &[T], delta_n: T) -> Result<T> {
    let m = returns.len();
    if m < 2 {
        return Err(Error::TooFewObservations { needed: 2, found: m });
    }
    let s = returns.windows(2).fold(T::zero(), |acc, w| acc + w[0].abs() * w[1].abs());
    Ok(T::FRAC_PI_2() * s / (T::from_count(m - 1) * delta_n))
}

/// Per-day, per-asset truncation levels `trunc_mult · σ̂ · Δₙ^ϖ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationThresholds<T> {
    days: Vec<u32>,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> TruncationThresholds<T> {
    pub fn compute(panel: &ReturnPanel<T>, cfg: &EstimatorConfig) -> Result<Self> {
        let d = panel.dim();
        let inc = panel.increments();
        let n = panel.n_increments();
        let delta = panel.delta_n();
        let scale = T::lit(cfg.trunc_mult) * delta.powf(T::lit(cfg.varpi));
        let mut days = Vec::new();
        let mut values = Vec::new();
        let mut start = 0;
        let mut column = Vec::new();
        while start < n {
            let day = panel.increment_day(start);
            let mut end = start;
            while end < n && panel.increment_day(end) == day {
                end += 1;
            }
            for a in 0..d {
                column.clear();
                column.extend((start..end).map(|i| inc[i * d + a]));
                let sigma2 = bipower_sigma2(&column, delta)?;
                let u = scale * sigma2.sqrt();
                if !(u > T::zero()) || !u.is_finite() {
                    return Err(Error::NonPositiveThreshold { asset: a, day });
                }
                values.push(u);
            }
            days.push(day);
            start = end;
        }
        Ok(Self { days, dim: d, values })
    }

    pub fn get(&self, asset: usize, day: u32) -> Option<T> {
        let pos = self.days.binary_search(&day).ok()?;
        self.values.get(pos * self.dim + asset).copied()
    }

    pub fn days(&self) -> &[u32] {
        &self.days
    }
}

/// `Ĉ` for every window start, stored as a flat `len × d × d` row-major array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotCovPath<T> {
    dim: usize,
    k_n: usize,
    delta_n: T,
    values: Vec<T>,
    trunc_hits: Vec<u32>,
    spans_day: Vec<bool>,
    fingerprint: u64,
}

impl<T: Scalar> SpotCovPath<T> {
    /// Wraps precomputed matrices; each must be `dim × dim`.
    pub fn from_matrices(matrices: &[Matrix<T>], k_n: usize, delta_n: T) -> Result<Self> {
        let dim = matrices.first().map_or(0, Matrix::rows);
        let mut values = Vec::with_capacity(matrices.len() * dim * dim);
        for m in matrices {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.rows() });
            }
            values.extend_from_slice(m.as_slice());
        }
        Self::from_flat(dim, k_n, delta_n, values)
    }

    pub fn from_flat(dim: usize, k_n: usize, delta_n: T, values: Vec<T>) -> Result<Self> {
        if dim == 0 || values.len() % (dim * dim) != 0 {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: values.len() });
        }
        let len = values.len() / (dim * dim);
        Ok(Self { dim, k_n, delta_n, values, trunc_hits: vec![0; len], spans_day: vec![false; len], fingerprint: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_n(&self) -> usize {
        self.k_n
    }

    pub fn delta_n(&self) -> T {
        self.delta_n
    }

    /// `k_n Δₙ^{1/2}`, the window scale actually used.
    pub fn theta(&self) -> T {
        T::from_count(self.k_n) * self.delta_n.sqrt()
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.dim * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major `d × d` slice of window `i` (0-based).
    pub fn get(&self, i: usize) -> &[T] {
        let m = self.dim * self.dim;
        &self.values[i * m..(i + 1) * m]
    }

    pub fn matrix(&self, i: usize) -> Matrix<T> {
        Matrix::from_row_major(self.dim, self.dim, self.get(i).to_vec()).expect("window slice has d² entries")
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn trunc_hits(&self) -> &[u32] {
        &self.trunc_hits
    }

    /// Whether window `i` contains increments from more than one day.
    pub fn spans_day(&self, i: usize) -> bool {
        self.spans_day[i]
    }

    /// Fingerprint of the estimator configuration that produced the path.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Applies `f` to every entry, e.g. to rescale the whole path.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { values: self.values.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }
}

/// Local truncated realized covariance over windows of `k_n` increments.
pub fn estimate_spot_path<T: Scalar>(panel: &ReturnPanel<T>, cfg: &EstimatorConfig) -> Result<SpotCovPath<T>> {
    let delta = panel.delta_n();
    let rel = ((delta.as_f64() - cfg.delta_n) / cfg.delta_n).abs();
    if rel > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "config delta_n {} does not match panel step {}",
            cfg.delta_n,
            delta.as_f64()
        )));
    }
    let n = panel.n_increments();
    cfg.validate()?;
    let k = cfg.k_n();
    if n < k + 1 {
        return Err(Error::PanelTooShort { increments: n, k_n: k });
    }
    let d = panel.dim();
    let mut inc = panel.increments();

    let mut keep = vec![true; n];
    let mut hit = vec![false; n];
    if cfg.price_trunc_enabled {
        let th = TruncationThresholds::compute(panel, cfg)?;
        for (i, kept) in keep.iter_mut().enumerate() {
            let day = panel.increment_day(i);
            for a in 0..d {
                if inc[i * d + a].abs() > th.get(a, day).expect("threshold for every day") {
                    hit[i] = true;
                    match cfg.trunc_rule {
                        TruncationRule::Vector => *kept = false,
                        TruncationRule::Componentwise => inc[i * d + a] = T::zero(),
                    }
                }
            }
        }
    }

    let len = n - k + 1;
    let m = d * (d + 1) / 2;
    let upper: Vec<(usize, usize)> = (0..d).flat_map(|a| (a..d).map(move |b| (a, b))).collect();
    let outer = |i: usize, out: &mut [T]| {
        if keep[i] {
            let x = &inc[i * d..(i + 1) * d];
            for (slot, &(a, b)) in out.iter_mut().zip(&upper) {
                *slot = x[a] * x[b];
            }
        } else {
            out.iter_mut().for_each(|s| *s = T::zero());
        }
    };
    let norm = T::one() / (T::from_count(k) * delta);

    // Window j = suffix of block j/k plus a prefix of the next block, so every
    // entry is a fixed-length sequential sum with no running drift.
    let mut values = vec![T::zero(); len * d * d];
    values.par_chunks_mut(k * d * d).enumerate().for_each(|(b, out)| {
        let base = b * k;
        let mut suffix = vec![T::zero(); k * m];
        let mut prefix = vec![T::zero(); k * m];
        let mut tmp = vec![T::zero(); m];
        for o in (0..k).rev() {
            outer(base + o, &mut tmp);
            for c in 0..m {
                let next = if o + 1 < k { suffix[(o + 1) * m + c] } else { T::zero() };
                suffix[o * m + c] = tmp[c] + next;
            }
        }
        let windows = out.len() / (d * d);
        // Prefix of block b+1 up to the last increment any window here needs.
        let need = windows.saturating_sub(1);
        for t in 0..need {
            outer(base + k + t, &mut tmp);
            for c in 0..m {
                let prev = if t > 0 { prefix[(t - 1) * m + c] } else { T::zero() };
                prefix[t * m + c] = prev + tmp[c];
            }
        }
        for o in 0..windows {
            let w = &mut out[o * d * d..(o + 1) * d * d];
            for (c, &(a, bb)) in upper.iter().enumerate() {
                let mut s = suffix[o * m + c];
                if o > 0 {
                    s = s + prefix[(o - 1) * m + c];
                }
                let mut v = s * norm;
                if a == bb && v < T::zero() {
                    v = T::zero();
                }
                w[a * d + bb] = v;
                w[bb * d + a] = v;
            }
        }
    });

    let mut hits_prefix = vec![0u32; n + 1];
    for i in 0..n {
        hits_prefix[i + 1] = hits_prefix[i] + u32::from(hit[i]);
    }
    let trunc_hits = (0..len).map(|j| hits_prefix[j + k] - hits_prefix[j]).collect();
    let spans_day = (0..len).map(|j| panel.increment_day(j) != panel.increment_day(j + k - 1)).collect();

    Ok(SpotCovPath { dim: d, k_n: k, delta_n: delta, values, trunc_hits, spans_day, fingerprint: cfg.fingerprint() })
}

/// `A_i` flags (true = no volatility jump) for window starts `i` with both
/// `Ĉ_{i−k_n}` and `Ĉ_{i+k_n}` available; other indices are undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolJumpMask {
    k_n: usize,
    path_len: usize,
    events: Vec<Option<bool>>,
}

impl VolJumpMask {
    fn with(path_len: usize, k_n: usize, f: impl Fn(usize) -> bool) -> Self {
        let events = (0..path_len)
            .map(|i| if i >= k_n && i + k_n < path_len { Some(f(i)) } else { None })
            .collect();
        Self { k_n, path_len, events }
    }

    pub fn all_true<T: Scalar>(path: &SpotCovPath<T>) -> Self {
        Self::with(path.len(), path.k_n(), |_| true)
    }

    pub fn all_false<T: Scalar>(path: &SpotCovPath<T>) -> Self {
        Self::with(path.len(), path.k_n(), |_| false)
    }

    /// Mask from an explicit predicate on the definable indices.
    pub fn from_fn<T: Scalar>(path: &SpotCovPath<T>, f: impl Fn(usize) -> bool) -> Self {
        Self::with(path.len(), path.k_n(), f)
    }

    pub fn k_n(&self) -> usize {
        self.k_n
    }

    pub fn path_len(&self) -> usize {
        self.path_len
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.events.get(i).copied().flatten()
    }

    /// Like [`get`](Self::get) but undefined indices are an error.
    pub fn event(&self, i: usize) -> Result<bool> {
        self.get(i).ok_or(Error::MaskRange { index: i })
    }

    /// Share of defined indices flagged as jumps.
    pub fn jump_fraction(&self) -> f64 {
        let defined: Vec<bool> = self.events.iter().flatten().copied().collect();
        if defined.is_empty() {
            return 0.0;
        }
        defined.iter().filter(|a| !**a).count() as f64 / defined.len() as f64
    }

    pub(crate) fn check_compatible<T: Scalar>(&self, path: &SpotCovPath<T>) -> Result<()> {
        if self.k_n != path.k_n() || self.path_len != path.len() {
            return Err(Error::DimensionMismatch { expected: path.len(), found: self.path_len });
        }
        Ok(())
    }
}

pub fn detect_vol_jump_events<T: Scalar>(path: &SpotCovPath<T>, cfg: &EstimatorConfig) -> VolJumpMask {
    let k = path.k_n();
    let d = path.dim();
    let abs = T::lit(cfg.vol_jump_abs);
    let vol_abs = abs.sqrt();
    let frob = T::lit(cfg.asymptotic_vol_threshold());
    let no_jump = |i: usize| {
        let (lo, hi) = (path.get(i - k), path.get(i + k));
        match cfg.vol_jump_rule {
            VolJumpRule::DiagonalVariance => (0..d).all(|g| (hi[g * d + g] - lo[g * d + g]).abs() < abs),
            VolJumpRule::DiagonalVolatility => {
                (0..d).all(|g| (hi[g * d + g].sqrt() - lo[g * d + g].sqrt()).abs() < vol_abs)
            }
            VolJumpRule::Frobenius => {
                let s = hi.iter().zip(lo).fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b));
                s.sqrt() < frob
            }
        }
    };
    if cfg.forbid_day_spanning {
        VolJumpMask::from_fn(path, |i| {
            no_jump(i) && !path.spans_day(i - k) && !path.spans_day(i) && !path.spans_day(i + k)
        })
    } else {
        VolJumpMask::from_fn(path, no_jump)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bipower_constant_increments() {
        let delta = 0.0004;
        let r = vec![0.02, -0.02, 0.02, 0.02];
        assert_relative_eq!(bipower_sigma2(&r, delta).unwrap(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert!(matches!(bipower_sigma2(&[0.1], delta), Err(Error::TooFewObservations { .. })));
    }

    fn constant_panel(n: usize, c: &[f64], delta: f64) -> ReturnPanel<f64> {
        let d = c.len();
        let mut inc = Vec::with_capacity(n * d);
        for i in 0..n {
            for (a, &ca) in c.iter().enumerate() {
                inc.push(if i % 2 == 0 { ca } else { ca * (1.0 + 1e-3 * a as f64) });
            }
        }
        let labels = (0..d).map(|a| format!("A{a}")).collect();
        ReturnPanel::from_increments(labels, &inc, delta, vec![0; n + 1], 0).unwrap()
    }

    #[test]
    fn constant_increments_give_outer_product() {
        let delta = 0.01;
        let c = [0.03, -0.01];
        let n = 60;
        let inc: Vec<f64> = (0..n).flat_map(|_| c).collect();
        let panel = ReturnPanel::from_increments(vec!["a".into(), "b".into()], &inc, delta, vec![0; n + 1], 0).unwrap();
        let cfg = EstimatorConfig::with_delta_theta(delta, 1.0);
        let path = estimate_spot_path(&panel, &cfg).unwrap();
        assert_eq!(path.len(), n - 10 + 1);
        for i in 0..path.len() {
            let m = path.get(i);
            for a in 0..2 {
                for b in 0..2 {
                    assert_relative_eq!(m[a * 2 + b], c[a] * c[b] / delta, max_relative = 1e-12);
                }
            }
            assert_eq!(path.trunc_hits()[i], 0);
        }
    }

    #[test]
    fn componentwise_rule_keeps_the_other_assets() {
        let delta = 0.01;
        let n = 60;
        let mut inc = vec![0.01; 2 * n];
        inc[2 * 25] = 1.0;
        let panel = ReturnPanel::from_increments(vec!["a".into(), "b".into()], &inc, delta, vec![0; n + 1], 0).unwrap();
        let vector = EstimatorConfig::with_delta_theta(delta, 1.0);
        let cw = EstimatorConfig { trunc_rule: TruncationRule::Componentwise, ..vector.clone() };
        let (pv, pc) = (estimate_spot_path(&panel, &vector).unwrap(), estimate_spot_path(&panel, &cw).unwrap());
        for j in 0..pv.len() {
            let covers = (j..j + 10).contains(&25);
            let kept = if covers { 9.0 } else { 10.0 } * 1e-4 / (10.0 * delta);
            assert_relative_eq!(pv.get(j)[3], kept, max_relative = 1e-12);
            assert_relative_eq!(pc.get(j)[3], 1e-3 / (10.0 * delta), max_relative = 1e-12);
            assert_relative_eq!(pc.get(j)[0], kept, max_relative = 1e-12);
            assert_relative_eq!(pc.get(j)[1], kept, max_relative = 1e-12);
            assert_eq!(pc.trunc_hits()[j], u32::from(covers));
        }
    }

    #[test]
    fn outlier_is_zeroed_in_every_covering_window() {
        let delta = 0.01;
        let n = 60;
        let mut inc = vec![0.01; n];
        inc[25] = 1.0;
        let panel = ReturnPanel::from_increments(vec!["a".into()], &inc, delta, vec![0; n + 1], 0).unwrap();
        let cfg = EstimatorConfig::with_delta_theta(delta, 1.0);
        let path = estimate_spot_path(&panel, &cfg).unwrap();
        for j in 0..path.len() {
            let covers = (j..j + 10).contains(&25);
            let expect = if covers { 9.0 } else { 10.0 } * 1e-4 / (10.0 * delta);
            assert_relative_eq!(path.get(j)[0], expect, max_relative = 1e-12);
            assert_eq!(path.trunc_hits()[j], u32::from(covers));
        }
    }

    #[test]
    fn matches_direct_window_sums() {
        let delta = 0.001;
        let panel = constant_panel(300, &[0.02, 0.015, -0.01], delta);
        let cfg = EstimatorConfig { price_trunc_enabled: false, ..EstimatorConfig::with_delta_theta(delta, 0.3) };
        let k = cfg.k_n();
        let path = estimate_spot_path(&panel, &cfg).unwrap();
        let inc = panel.increments();
        for j in [0, 1, k - 1, k, 2 * k + 3, path.len() - 1] {
            for a in 0..3 {
                for b in 0..3 {
                    let direct: f64 = (j..j + k).map(|i| inc[i * 3 + a] * inc[i * 3 + b]).sum::<f64>() / (k as f64 * delta);
                    assert_relative_eq!(path.get(j)[a * 3 + b], direct, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn short_panel_and_mismatched_step() {
        let panel = constant_panel(10, &[0.01], 0.01);
        let cfg = EstimatorConfig::with_delta_theta(0.01, 1.0);
        assert!(matches!(estimate_spot_path(&panel, &cfg), Err(Error::PanelTooShort { .. })));
        let cfg = EstimatorConfig::with_delta_theta(0.02, 1.0);
        assert!(matches!(estimate_spot_path(&panel, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn constant_path_has_no_jumps_and_shift_is_flagged() {
        let k = 5;
        let mats: Vec<Matrix<f64>> =
            (0..40).map(|i| Matrix::diag(&[if i >= 20 { 0.12 } else { 0.1 }, 0.2])).collect();
        let path = SpotCovPath::from_matrices(&mats, k, 0.01).unwrap();
        let cfg = EstimatorConfig { vol_jump_rule: VolJumpRule::DiagonalVariance, ..Default::default() };
        let mask = detect_vol_jump_events(&path, &cfg);
        for i in 0..40 {
            match mask.get(i) {
                None => assert!(i < k || i + k >= 40),
                Some(a) => {
                    let straddles = i - k < 20 && i + k >= 20;
                    assert_eq!(a, !straddles, "index {i}");
                }
            }
        }
        assert!(mask.event(2).is_err());
        let flat = SpotCovPath::from_matrices(&vec![Matrix::diag(&[0.1, 0.2]); 40], k, 0.01).unwrap();
        let mask = detect_vol_jump_events(&flat, &cfg);
        assert!((k..40 - k).all(|i| mask.get(i) == Some(true)));
    }
}
