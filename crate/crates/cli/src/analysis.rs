//! Pairwise estimation and testing over a stock universe.

use std::collections::BTreeMap;

use covol::factors::{DerivedEstimate, IdioVolModelSpec, PairAnalysis};
use covol::inference::{fdr_with, t_test_with, wald_test, Alternative, FdrProcedure, TestResult};
use covol::{EstimatorConfig, Matrix, Method, ReturnPanel, SpotContext};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A point estimate and, when `Σ̂` was computed and is positive, its
/// standard error `Δₙ^{1/4} √avar`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
}

impl Estimate {
    fn from(d: &DerivedEstimate<f64>, delta_n: f64) -> Self {
        let se = d.avar.filter(|v| *v > 0.0).map(|v| delta_n.powf(0.25) * v.sqrt());
        Self { value: d.value, se }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub valid: bool,
    /// Rejected by the multiple-testing procedure across the universe.
    pub reject: bool,
}

impl From<TestResult> for TestOutcome {
    fn from(r: TestResult) -> Self {
        Self { statistic: r.statistic, p_value: r.p_value, valid: r.valid, reject: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StockResult {
    /// Loadings on each IdioVol factor.
    pub gamma: Vec<Estimate>,
    pub r2: Option<Estimate>,
    /// `[Π, C_Zj] = 0` for every IdioVol factor `Π`.
    pub h02: Option<TestOutcome>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub stock_j: String,
    pub stock_s: String,
    pub cov_idiovol: Option<Estimate>,
    pub corr: Option<Estimate>,
    pub cov_resid: Option<Estimate>,
    pub corr_resid: Option<Estimate>,
    pub q_measure: Option<Estimate>,
    /// `[C_Zj, C_Zs] = 0`.
    pub h01: Option<TestOutcome>,
    /// `[C_Zj^resid, C_Zs^resid] = 0`.
    pub h03: Option<TestOutcome>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdrSettings {
    pub procedure: String,
    pub q: f64,
    pub alternative: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniverseReport {
    pub method: Method,
    pub theta: f64,
    pub k_n: usize,
    pub delta_n: f64,
    pub n_increments: usize,
    pub stocks: Vec<String>,
    pub factors: Vec<String>,
    pub estimator: EstimatorConfig,
    pub stock_results: BTreeMap<String, StockResult>,
    /// Keyed by `"<stock_j>|<stock_s>"`.
    pub pairs: BTreeMap<String, PairResult>,
    pub fdr: Option<FdrSettings>,
}

impl UniverseReport {
    /// Count of failed estimations and invalid tests.
    pub fn numeric_flags(&self) -> usize {
        let bad_test = |t: &Option<TestOutcome>| usize::from(t.is_some_and(|t| !t.valid));
        self.stock_results.values().map(|s| usize::from(s.error.is_some()) + bad_test(&s.h02)).sum::<usize>()
            + self.pairs.values().map(|p| usize::from(p.error.is_some()) + bad_test(&p.h01) + bad_test(&p.h03)).sum::<usize>()
    }
}

pub fn pair_key(j: &str, s: &str) -> String {
    format!("{j}|{s}")
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub estimator: EstimatorConfig,
    pub method: Method,
    /// Compute `Σ̂`, standard errors and tests.
    pub tests: bool,
    pub alternative: Alternative,
    pub procedure: FdrProcedure,
    pub q: f64,
}

fn sub_analysis(
    panel: &ReturnPanel<f64>,
    cols: &[usize],
    n_stocks: usize,
    opts: &AnalysisOptions,
) -> covol::Result<PairAnalysis<f64>> {
    let sub = panel.select_columns(cols, cols.len() - n_stocks)?;
    let ctx = SpotContext::from_panel(&sub, &opts.estimator)?;
    let d = cols.len();
    let factors: Vec<usize> = (n_stocks..d).collect();
    let spec_j = IdioVolModelSpec::new(d, 0, &factors)?;
    let spec_s = IdioVolModelSpec::new(d, n_stocks - 1, &factors)?;
    let with_avar = opts.tests && opts.method != Method::Naive;
    PairAnalysis::new(&spec_j, &spec_s, &ctx.path, ctx.mask(), opts.method, with_avar)
}

fn stock_result(panel: &ReturnPanel<f64>, j: usize, opts: &AnalysisOptions) -> StockResult {
    let run = || -> covol::Result<StockResult> {
        let mut cols = vec![j];
        cols.extend(panel.factor_columns());
        let pa = sub_analysis(panel, &cols, 1, opts)?;
        let dn = pa.system.delta_n();
        let s = pa.summary()?;
        let h02 = match pa.system.avar() {
            Some(av) => {
                let pis = pa.pis();
                let ds: Vec<_> = pis.iter().map(|&k| pa.system.entry(k, pa.zj())).collect();
                let g: Vec<Vec<f64>> = ds.iter().map(|d| pa.system.fold(&d.grad)).collect();
                let v: Vec<f64> = ds.iter().map(|d| d.value).collect();
                let cov = Matrix::from_fn(g.len(), g.len(), |r, c| av.sigma.quad_form(&g[r], &g[c]).unwrap_or(f64::NAN));
                Some(match wald_test(&v, &cov, dn) {
                    Ok(r) => r.into(),
                    Err(_) => TestOutcome { statistic: f64::NAN, p_value: f64::NAN, valid: false, reject: false },
                })
            }
            None => None,
        };
        Ok(StockResult {
            gamma: s.gamma_j.iter().map(|g| Estimate::from(g, dn)).collect(),
            r2: s.r2_j.as_ref().map(|r| Estimate::from(r, dn)),
            h02,
            error: None,
        })
    };
    run().unwrap_or_else(|e| StockResult { error: Some(e.to_string()), ..StockResult::default() })
}

fn pair_result(panel: &ReturnPanel<f64>, j: usize, s: usize, opts: &AnalysisOptions) -> PairResult {
    let labels = panel.labels();
    let base = PairResult { stock_j: labels[j].clone(), stock_s: labels[s].clone(), ..PairResult::default() };
    let run = || -> covol::Result<PairResult> {
        let mut cols = vec![j, s];
        cols.extend(panel.factor_columns());
        let pa = sub_analysis(panel, &cols, 2, opts)?;
        let dn = pa.system.delta_n();
        let sm = pa.summary()?;
        let est = |d: &Option<DerivedEstimate<f64>>| d.as_ref().map(|d| Estimate::from(d, dn));
        let test = |d: Option<&DerivedEstimate<f64>>| {
            d.and_then(|d| d.avar.map(|v| TestOutcome::from(t_test_with(d.value, v, dn, opts.alternative))))
        };
        Ok(PairResult {
            cov_idiovol: Some(Estimate::from(&sm.cov_idiovol, dn)),
            corr: est(&sm.corr),
            cov_resid: est(&sm.cov_resid),
            corr_resid: est(&sm.corr_resid),
            q_measure: est(&sm.q_measure),
            h01: if pa.system.avar().is_some() { test(Some(&sm.cov_idiovol)) } else { None },
            h03: if pa.system.avar().is_some() {
                test(sm.cov_resid.as_ref()).or(Some(TestOutcome {
                    statistic: f64::NAN,
                    p_value: f64::NAN,
                    valid: false,
                    reject: false,
                }))
            } else {
                None
            },
            ..base.clone()
        })
    };
    run().unwrap_or_else(|e| PairResult { error: Some(e.to_string()), ..base.clone() })
}

/// Marks the tests rejected by the multiple-testing procedure; invalid
/// tests are excluded from the family.
fn apply_fdr<'a>(tests: impl Iterator<Item = &'a mut TestOutcome>, opts: &AnalysisOptions) {
    let mut tests: Vec<&mut TestOutcome> = tests.collect();
    let p: Vec<f64> = tests.iter().map(|t| if t.valid { t.p_value } else { f64::NAN }).collect();
    let out = fdr_with(&p, opts.q, opts.procedure);
    for (t, r) in tests.iter_mut().zip(out.rejected) {
        t.reject = r;
    }
}

/// Every stock and every pair of stocks of `panel` against its factor columns.
pub fn analyse_universe(panel: &ReturnPanel<f64>, opts: &AnalysisOptions) -> CliResult<UniverseReport> {
    let n_stocks = panel.stock_count();
    if panel.factor_count() == 0 {
        return Err(CliError::Config("at least one factor column is required".into()));
    }
    if n_stocks == 0 {
        return Err(CliError::Config("the panel has no stock columns".into()));
    }
    opts.estimator.validate_for(panel.n_increments())?;
    let labels = panel.labels();
    let stock_results: BTreeMap<String, StockResult> = (0..n_stocks)
        .into_par_iter()
        .map(|j| (labels[j].clone(), stock_result(panel, j, opts)))
        .collect();
    let index: Vec<(usize, usize)> = (0..n_stocks).flat_map(|j| (j + 1..n_stocks).map(move |s| (j, s))).collect();
    let pairs: BTreeMap<String, PairResult> = index
        .par_iter()
        .map(|&(j, s)| (pair_key(&labels[j], &labels[s]), pair_result(panel, j, s, opts)))
        .collect();
    let mut report = UniverseReport {
        method: opts.method,
        theta: opts.estimator.theta,
        k_n: opts.estimator.k_n(),
        delta_n: panel.delta_n(),
        n_increments: panel.n_increments(),
        stocks: labels[..n_stocks].to_vec(),
        factors: labels[n_stocks..].to_vec(),
        estimator: opts.estimator.clone(),
        stock_results,
        pairs,
        fdr: None,
    };
    if opts.tests && opts.method != Method::Naive {
        apply_fdr(report.pairs.values_mut().filter_map(|p| p.h01.as_mut()), opts);
        apply_fdr(report.pairs.values_mut().filter_map(|p| p.h03.as_mut()), opts);
        apply_fdr(report.stock_results.values_mut().filter_map(|s| s.h02.as_mut()), opts);
        report.fdr = Some(FdrSettings {
            procedure: match opts.procedure {
                FdrProcedure::BenjaminiHochberg => "bh".into(),
                FdrProcedure::BenjaminiYekutieli => "by".into(),
            },
            q: opts.q,
            alternative: match opts.alternative {
                Alternative::TwoSided => "two_sided".into(),
                Alternative::Greater => "greater".into(),
            },
        });
    }
    Ok(report)
}

/// `kind,key,quantity,value,se` rows.
pub fn write_estimates_csv(r: &UniverseReport, w: impl std::io::Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(["kind", "key", "quantity", "value", "se"]).map_err(csv_err)?;
    let mut row = |kind: &str, key: &str, q: &str, e: &Option<Estimate>| -> CliResult<()> {
        if let Some(e) = e {
            let se = e.se.map(|s| format!("{s:?}")).unwrap_or_default();
            w.write_record([kind, key, q, &format!("{:?}", e.value), &se]).map_err(csv_err)?;
        }
        Ok(())
    };
    for (k, s) in &r.stock_results {
        for (i, g) in s.gamma.iter().enumerate() {
            row("stock", k, &format!("gamma_{}", r.factors.get(i).map_or("pi", String::as_str)), &Some(*g))?;
        }
        row("stock", k, "r2", &s.r2)?;
    }
    for (k, p) in &r.pairs {
        row("pair", k, "cov_idiovol", &p.cov_idiovol)?;
        row("pair", k, "corr", &p.corr)?;
        row("pair", k, "cov_resid", &p.cov_resid)?;
        row("pair", k, "corr_resid", &p.corr_resid)?;
        row("pair", k, "q_measure", &p.q_measure)?;
    }
    w.flush()?;
    Ok(())
}
