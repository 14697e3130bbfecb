//! Heatmaps and network edge lists from test results.

use std::io::Write;

use crate::analysis::{pair_key, Estimate, PairResult, TestOutcome, UniverseReport};
use crate::error::{CliError, CliResult};

/// Symmetric `d_S × d_S` matrix holding the (clamped) correlation of every
/// pair whose null was rejected, zero elsewhere and on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

fn build(
    r: &UniverseReport,
    pick: impl Fn(&PairResult) -> (Option<TestOutcome>, Option<Estimate>),
) -> (Heatmap, Vec<Edge>) {
    let n = r.stocks.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let Some(p) = r.pairs.get(&pair_key(&r.stocks[a], &r.stocks[b])) else { continue };
            let (test, est) = pick(p);
            if let (Some(t), Some(e)) = (test, est) {
                if t.reject && e.value.is_finite() {
                    let w = e.value.clamp(-1.0, 1.0);
                    values[a][b] = w;
                    values[b][a] = w;
                    edges.push(Edge { source: r.stocks[a].clone(), target: r.stocks[b].clone(), weight: w });
                }
            }
        }
    }
    (Heatmap { labels: r.stocks.clone(), values }, edges)
}

/// IdioVol correlations of pairs rejecting `[C_Zj, C_Zs] = 0`.
pub fn idiovol_network(r: &UniverseReport) -> CliResult<(Heatmap, Vec<Edge>)> {
    require_tests(r)?;
    Ok(build(r, |p| (p.h01, p.corr)))
}

/// Residual IdioVol correlations of pairs rejecting the residual null.
pub fn resid_network(r: &UniverseReport) -> CliResult<(Heatmap, Vec<Edge>)> {
    require_tests(r)?;
    Ok(build(r, |p| (p.h03, p.corr_resid)))
}

fn require_tests(r: &UniverseReport) -> CliResult<()> {
    if r.fdr.is_none() {
        return Err(CliError::Config("the input holds no test results; produce it with `covol test`".into()));
    }
    Ok(())
}

pub fn write_heatmap(h: &Heatmap, w: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    let mut header = vec![String::new()];
    header.extend(h.labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (label, row) in h.labels.iter().zip(&h.values) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges(edges: &[Edge], w: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(["source", "target", "weight"]).map_err(csv_err)?;
    for e in edges {
        w.write_record([e.source.as_str(), e.target.as_str(), &format!("{:?}", e.weight)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
