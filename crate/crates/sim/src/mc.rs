//! Monte Carlo driver: replications, summary tables and CSV output.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use covol::factors::{IdioVolModelSpec, PairAnalysis};
use covol::inference::{t_test_quadcov, wald_test};
use covol::{EstimatorConfig, Matrix, Method, SpotContext, TruncationRule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{SimError, SimResult};
use crate::model::{simulate_on, simulate_vol, VolPath};
use crate::oracle::TrueQuantities;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    /// IdioVol loading of stock 1 on `C_X`.
    Gamma,
    /// Share of `[C_Z1, C_Z1]` explained by `C_X`.
    R2,
    Corr,
    CorrResid,
}

impl Estimand {
    pub const ALL: [Estimand; 4] = [Estimand::Gamma, Estimand::R2, Estimand::Corr, Estimand::CorrResid];

    pub fn truth(self, t: &TrueQuantities) -> f64 {
        match self {
            Self::Gamma => t.gamma_j,
            Self::R2 => t.r2_j,
            Self::Corr => t.corr,
            Self::CorrResid => t.corr_resid,
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gamma => "gamma_z1",
            Self::R2 => "r2_z1",
            Self::Corr => "corr_z1_z2",
            Self::CorrResid => "corr_resid_z1_z2",
        })
    }
}

/// Null hypotheses of the size and power tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// `[C_Z1, C_Z2] = 0`.
    H1,
    /// `[C_Z1, C_X] = 0`.
    H2,
    /// `[C_Z1^resid, C_Z2^resid] = 0`.
    H3,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 3] = [Hypothesis::H1, Hypothesis::H2, Hypothesis::H3];
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::H1 => "H01",
            Self::H2 => "H02",
            Self::H3 => "H03",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub sim: SimConfig,
    pub reps: usize,
    pub thetas: Vec<f64>,
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    /// Compute `Σ̂` and the three t-tests (AN and LIN only).
    pub tests: bool,
    /// Template for the estimator settings; `delta_n` and `theta` are overwritten.
    /// Defaults to per-asset truncation.
    pub estimator: EstimatorConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            reps: 100,
            thetas: vec![1.5, 2.0, 2.5, 3.0],
            methods: vec![Method::Lin, Method::An, Method::Naive],
            alphas: vec![0.10, 0.05, 0.01],
            tests: true,
            estimator: EstimatorConfig { trunc_rule: TruncationRule::Componentwise, ..EstimatorConfig::default() },
        }
    }
}

impl McConfig {
    pub fn estimator_for(&self, theta: f64) -> EstimatorConfig {
        EstimatorConfig { delta_n: self.sim.delta_n, theta, ..self.estimator.clone() }
    }
}

/// Everything computed for one replication at one `(θ, method)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: u64,
    pub theta: f64,
    pub method: Method,
    /// Indexed like [`Estimand::ALL`]; `None` when a denominator was not positive.
    pub estimates: Vec<Option<f64>>,
    pub truth: Vec<f64>,
    /// Indexed like [`Hypothesis::ALL`]; `None` when not computed or invalid.
    pub p_values: Vec<Option<f64>>,
    /// `Σ̂` over the upper triangle of `Q = [[C_X, C_Z1, C_Z2]]`, row-major, when computed.
    pub sigma: Option<Vec<f64>>,
}

/// Analyses one simulated panel at one `θ` for every requested method.
pub fn analyse_panel(
    panel: &covol::ReturnPanel<f64>,
    truth: &TrueQuantities,
    cfg: &McConfig,
    theta: f64,
    rep: u64,
) -> SimResult<Vec<RepOutcome>> {
    let ctx = SpotContext::from_panel(panel, &cfg.estimator_for(theta))?;
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let pa = pair_analysis(&ctx, method, cfg.tests && method != Method::Naive)?;
        out.push(pair_outcome(&pa, truth, theta, rep)?);
    }
    Ok(out)
}

/// `Q = [[C_X, C_Z1, C_Z2]]` on a `(Y₁, Y₂, …, X)` spot path.
pub fn pair_analysis(ctx: &SpotContext<f64>, method: Method, with_avar: bool) -> SimResult<PairAnalysis<f64>> {
    let d = ctx.path.dim();
    let x = d - 1;
    let spec1 = IdioVolModelSpec::new(d, 0, &[x])?;
    let spec2 = IdioVolModelSpec::new(d, 1, &[x])?;
    Ok(PairAnalysis::new(&spec1, &spec2, &ctx.path, ctx.mask(), method, with_avar)?)
}

/// Estimates and, when `Σ̂` is available, test p-values for one analysed pair.
pub fn pair_outcome(pa: &PairAnalysis<f64>, truth: &TrueQuantities, theta: f64, rep: u64) -> SimResult<RepOutcome> {
    let s = pa.summary()?;
    let estimates = vec![
        s.gamma_j.first().map(|g| g.value),
        s.r2_j.as_ref().map(|r| r.value),
        s.corr.as_ref().map(|c| c.value),
        s.corr_resid.as_ref().map(|c| c.value),
    ];
    let mut p_values = vec![None; 3];
    let mut sigma = None;
    if let Some(av) = pa.system.avar() {
        let dn = pa.system.delta_n();
        let t = |v: f64, var: Option<f64>| {
            var.map(|var| t_test_quadcov(v, var, dn)).filter(|r| r.valid).map(|r| r.p_value)
        };
        p_values[0] = t(s.cov_idiovol.value, s.cov_idiovol.avar);
        let h2 = pa.system.evaluate(pa.system.entry(0, pa.zj()));
        p_values[1] = h2
            .avar
            .and_then(|var| wald_test(&[h2.value], &Matrix::from_rows(&[vec![var]]).ok()?, dn).ok())
            .filter(|r| r.valid)
            .map(|r| r.p_value);
        p_values[2] = s.cov_resid.as_ref().and_then(|r| t(r.value, r.avar));
        sigma = Some(av.sigma.as_slice().to_vec());
    }
    Ok(RepOutcome {
        rep,
        theta,
        method: pa.system.method(),
        estimates,
        truth: Estimand::ALL.iter().map(|e| e.truth(truth)).collect(),
        p_values,
        sigma,
    })
}

/// One table cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub table: String,
    pub method: Method,
    pub theta: f64,
    pub quantity: String,
    pub statistic: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
    pub outcomes: Vec<RepOutcome>,
}

/// Median of the finite values, `NaN` when there are none.
pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolation sample quantile of the finite values.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

impl McSummary {
    pub fn from_outcomes(cfg: &McConfig, outcomes: Vec<RepOutcome>) -> Self {
        let mut rows = Vec::new();
        for &theta in &cfg.thetas {
            for &method in &cfg.methods {
                let sel: Vec<&RepOutcome> =
                    outcomes.iter().filter(|o| o.method == method && o.theta == theta).collect();
                for (k, e) in Estimand::ALL.iter().enumerate() {
                    let est: Vec<f64> = sel.iter().filter_map(|o| o.estimates[k]).collect();
                    let err: Vec<f64> = sel.iter().filter_map(|o| o.estimates[k].map(|v| v - o.truth[k])).collect();
                    let rmse = (err.iter().map(|x| x * x).sum::<f64>() / err.len().max(1) as f64).sqrt();
                    let mut push = |stat: &str, value: f64| {
                        rows.push(SummaryRow {
                            table: "estimates".into(),
                            method,
                            theta,
                            quantity: e.to_string(),
                            statistic: stat.into(),
                            value,
                        })
                    };
                    push("median_bias", median(&err));
                    push("iqr", quantile(&est, 0.75) - quantile(&est, 0.25));
                    push("rmse", if err.is_empty() { f64::NAN } else { rmse });
                    push("truth", median(&sel.iter().map(|o| o.truth[k]).collect::<Vec<_>>()));
                    push("undefined", (sel.len() - est.len()) as f64);
                }
                if cfg.tests && method != Method::Naive {
                    for (k, h) in Hypothesis::ALL.iter().enumerate() {
                        for &alpha in &cfg.alphas {
                            let rej = sel.iter().filter(|o| o.p_values[k].is_some_and(|p| p < alpha)).count();
                            rows.push(SummaryRow {
                                table: "rejections".into(),
                                method,
                                theta,
                                quantity: h.to_string(),
                                statistic: format!("alpha_{alpha}"),
                                value: rej as f64 / sel.len().max(1) as f64,
                            });
                        }
                        let invalid = sel.iter().filter(|o| o.p_values[k].is_none()).count();
                        rows.push(SummaryRow {
                            table: "rejections".into(),
                            method,
                            theta,
                            quantity: h.to_string(),
                            statistic: "invalid".into(),
                            value: invalid as f64,
                        });
                    }
                }
            }
        }
        Self { rows, outcomes }
    }

    pub fn get(&self, table: &str, method: Method, theta: f64, quantity: &str, statistic: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.table == table && r.method == method && r.theta == theta && r.quantity == quantity && r.statistic == statistic)
            .map(|r| r.value)
    }

    /// `table,method,theta,quantity,statistic,value` rows.
    pub fn write_csv(&self, w: &mut impl Write) -> SimResult<()> {
        writeln!(w, "table,method,theta,quantity,statistic,value")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.table, r.method, r.theta, r.quantity, r.statistic, r.value)?;
        }
        Ok(())
    }
}

/// Runs `cfg.reps` replications in parallel; results do not depend on scheduling.
pub fn mc_run(cfg: &McConfig) -> SimResult<McSummary> {
    if cfg.reps == 0 {
        return Err(SimError::InvalidConfig("at least one replication is required".into()));
    }
    if cfg.sim.stocks != 2 {
        return Err(SimError::InvalidConfig("the summary tables need exactly two stocks".into()));
    }
    cfg.sim.validate()?;
    let shared: Option<Arc<VolPath>> = if cfg.sim.fixed_vol { Some(Arc::new(simulate_vol(&cfg.sim, 0)?)) } else { None };
    let per_rep: Vec<SimResult<Vec<RepOutcome>>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let vol = match &shared {
                Some(v) => Arc::clone(v),
                None => Arc::new(simulate_vol(&cfg.sim, rep)?),
            };
            let truth = TrueQuantities::new(&vol, 0, 1);
            let (panel, _) = simulate_on(&cfg.sim, vol, rep)?;
            let mut out = Vec::new();
            for &theta in &cfg.thetas {
                out.extend(analyse_panel(&panel, &truth, cfg, theta, rep)?);
            }
            Ok(out)
        })
        .collect();
    let mut outcomes = Vec::new();
    for r in per_rep {
        outcomes.extend(r?);
    }
    Ok(McSummary::from_outcomes(cfg, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0, f64::NAN];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!(median(&[]).is_nan());
    }
}
