//! t and Wald tests on quadratic covariations, and FDR control.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub standard_error: f64,
    /// False when the variance estimate is not positive; `p_value` is NaN then.
    pub valid: bool,
}

impl TestResult {
    fn invalid(dof: usize) -> Self {
        Self { statistic: f64::NAN, p_value: f64::NAN, dof, standard_error: f64::NAN, valid: false }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.valid && self.p_value < alpha
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `H₁: estimand > 0`.
    Greater,
}

/// `Δₙ^{-1/4} · estimate / sqrt(avar)` against a standard normal.
pub fn t_test_quadcov<T: Scalar>(estimate: T, avar: T, delta_n: T) -> TestResult {
    t_test_with(estimate, avar, delta_n, Alternative::TwoSided)
}

pub fn t_test_with<T: Scalar>(estimate: T, avar: T, delta_n: T, alt: Alternative) -> TestResult {
    let (est, v, dn) = (estimate.as_f64(), avar.as_f64(), delta_n.as_f64());
    if !(v > 0.0) || !v.is_finite() || !est.is_finite() {
        return TestResult::invalid(1);
    }
    let se = dn.powf(0.25) * v.sqrt();
    let stat = est / se;
    let n = Normal::standard();
    let p = match alt {
        Alternative::TwoSided => 2.0 * n.sf(stat.abs()),
        Alternative::Greater => n.sf(stat),
    };
    TestResult { statistic: stat, p_value: p.clamp(0.0, 1.0), dof: 1, standard_error: se, valid: true }
}

/// Wald statistic `Δₙ^{-1/2} vᵀ Σ̂⁻¹ v` against `χ²` with `len(v)` degrees
/// of freedom. The `Δₙ^{-1/2}` scale is the square of the t statistic's
/// `Δₙ^{-1/4}`, so that one-dimensional Wald and t tests agree.
pub fn wald_test<T: Scalar>(v: &[T], sigma: &Matrix<T>, delta_n: T) -> Result<TestResult> {
    let m = v.len();
    if sigma.rows() != m || sigma.cols() != m {
        return Err(Error::DimensionMismatch { expected: m, found: sigma.rows() });
    }
    if m == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    let lu = sigma.lu().map_err(|_| Error::SingularSigma)?;
    let x = lu.solve(v)?;
    let q = v.iter().zip(&x).fold(T::zero(), |s, (a, b)| s + *a * *b).as_f64();
    let dn = delta_n.as_f64();
    if !q.is_finite() {
        return Ok(TestResult::invalid(m));
    }
    if q < 0.0 {
        // Σ̂ is indefinite along v.
        return Ok(TestResult::invalid(m));
    }
    let stat = q / dn.sqrt();
    let chi = ChiSquared::new(m as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let p = chi.sf(stat).clamp(0.0, 1.0);
    Ok(TestResult { statistic: stat, p_value: p, dof: m, standard_error: f64::NAN, valid: true })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrProcedure {
    #[default]
    BenjaminiHochberg,
    /// Benjamini–Yekutieli, valid under arbitrary dependence.
    BenjaminiYekutieli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdrOutcome {
    pub rejected: Vec<bool>,
    /// Indices whose p-value was NaN or outside `[0, 1]`; never rejected.
    pub excluded: Vec<usize>,
    /// Largest p-value rejected, if any.
    pub cutoff: Option<f64>,
}

/// Benjamini–Hochberg step-up at level `q`.
pub fn fdr_bh(p_values: &[f64], q: f64) -> FdrOutcome {
    fdr_with(p_values, q, FdrProcedure::BenjaminiHochberg)
}

pub fn fdr_with(p_values: &[f64], q: f64, proc_: FdrProcedure) -> FdrOutcome {
    let excluded: Vec<usize> =
        (0..p_values.len()).filter(|&i| !(0.0..=1.0).contains(&p_values[i])).collect();
    let mut idx: Vec<usize> = (0..p_values.len()).filter(|&i| (0.0..=1.0).contains(&p_values[i])).collect();
    idx.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let m = idx.len();
    let c_m = match proc_ {
        FdrProcedure::BenjaminiHochberg => 1.0,
        FdrProcedure::BenjaminiYekutieli => (1..=m).map(|i| 1.0 / i as f64).sum(),
    };
    let mut last = None;
    for (rank, &i) in idx.iter().enumerate() {
        if p_values[i] <= (rank + 1) as f64 / m as f64 * q / c_m {
            last = Some(rank);
        }
    }
    let mut rejected = vec![false; p_values.len()];
    let cutoff = last.map(|r| {
        for &i in &idx[..=r] {
            rejected[i] = true;
        }
        p_values[idx[r]]
    });
    FdrOutcome { rejected, excluded, cutoff }
}
