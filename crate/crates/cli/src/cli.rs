//! Command-line surface. Every flag has a config-file key of the same name;
//! a value given both ways must agree.

use std::fmt::Debug;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use covol::inference::{Alternative, FdrProcedure};
use covol::{EstimatorConfig, Method, ReturnPanel, TruncationRule};
use covol_sim::mc::{mc_run, McConfig};
use covol_sim::{delta_from_minutes, delta_from_seconds, simulate_model, ModelId, SimConfig, TrueQuantities};
use serde::Deserialize;

use crate::analysis::{analyse_universe, write_estimates_csv, AnalysisOptions, UniverseReport};
use crate::error::{CliError, CliResult};
use crate::io::{load_and_resample, read_panel_file, read_ticks, write_panel, Session};
use crate::report::{idiovol_network, resid_network, write_edges, write_heatmap};

#[derive(Debug, Parser)]
#[command(name = "covol", version, about = "Quadratic covariation of spot volatilities from high-frequency prices")]
pub struct Cli {
    /// TOML file whose keys mirror the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate IdioVol loadings, R² and pairwise correlations.
    Estimate(EstimateArgs),
    /// Estimate, then test every pair and control the false discovery rate.
    Test(TestArgs),
    /// Heatmaps and edge lists from the output of `test`.
    Report(ReportArgs),
    /// Simulate a panel from the stochastic-volatility model.
    Simulate(SimulateArgs),
    /// Monte Carlo summary tables.
    Mc(McArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Panel CSV as written by `simulate`.
    #[arg(long, conflicts_with = "ticks")]
    pub panel: Option<PathBuf>,
    /// Per-asset tick files with a `timestamp,price` header; labels are file stems.
    #[arg(long, num_args = 1..)]
    pub ticks: Vec<PathBuf>,
    /// Grid step in seconds for tick input.
    #[arg(long)]
    pub step: Option<u32>,
    /// Trading session, `HH:MM-HH:MM`.
    #[arg(long)]
    pub session: Option<String>,
    /// Labels of the return-factor columns (default: the panel's own, or the last tick file).
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub theta: Option<f64>,
    /// lin, an or naive.
    #[arg(long)]
    pub method: Option<String>,
    /// Truncate jumps asset by asset instead of dropping the whole increment.
    #[arg(long)]
    pub componentwise: bool,
    /// Exit with status 0 even when some quantities are numerically invalid.
    #[arg(long)]
    pub allow_invalid: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// Skip standard errors.
    #[arg(long)]
    pub no_se: bool,
    /// JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional flat CSV of the same estimates.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// False discovery rate level.
    #[arg(long)]
    pub q: Option<f64>,
    /// bh or by.
    #[arg(long)]
    pub procedure: Option<String>,
    /// Test against positive dependence only.
    #[arg(long)]
    pub one_sided: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON written by `test`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub model: Option<u8>,
    #[arg(long)]
    pub stocks: Option<usize>,
    #[arg(long)]
    pub years: Option<f64>,
    /// Bar length in minutes.
    #[arg(long, conflicts_with = "seconds")]
    pub minutes: Option<f64>,
    /// Bar length in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reuse one volatility path across replications.
    #[arg(long)]
    pub fixed_vol: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Panel CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// True values for the first two stocks, as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Skip `Σ̂` and the rejection tables.
    #[arg(long)]
    pub no_tests: bool,
    /// Summary CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

/// Config-file keys; `[estimator]` holds the remaining estimator settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub step: Option<u32>,
    pub session: Option<String>,
    pub factors: Option<Vec<String>>,
    pub theta: Option<f64>,
    pub method: Option<String>,
    pub componentwise: Option<bool>,
    pub allow_invalid: Option<bool>,
    pub no_se: Option<bool>,
    pub q: Option<f64>,
    pub procedure: Option<String>,
    pub one_sided: Option<bool>,
    pub model: Option<u8>,
    pub stocks: Option<usize>,
    pub years: Option<f64>,
    pub minutes: Option<f64>,
    pub seconds: Option<f64>,
    pub substeps: Option<usize>,
    pub seed: Option<u64>,
    pub fixed_vol: Option<bool>,
    pub reps: Option<usize>,
    pub thetas: Option<Vec<f64>>,
    pub methods: Option<Vec<String>>,
    pub no_tests: Option<bool>,
    pub estimator: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// The flag value, else the file value; both present and different is an error.
fn pick<T: PartialEq + Debug>(name: &str, flag: Option<T>, file: Option<T>) -> CliResult<Option<T>> {
    match (flag, file) {
        (Some(a), Some(b)) if a != b => {
            Err(CliError::Config(format!("`{name}` is {a:?} on the command line but {b:?} in the config file")))
        }
        (Some(a), _) => Ok(Some(a)),
        (None, b) => Ok(b),
    }
}

/// Boolean switches can only be turned on from the command line.
fn pick_switch(name: &str, flag: bool, file: Option<bool>) -> CliResult<bool> {
    Ok(pick(name, flag.then_some(true), file)?.unwrap_or(false))
}

fn parse_method(s: &str) -> CliResult<Method> {
    s.parse().map_err(|e: covol::Error| CliError::Config(e.to_string()))
}

/// Estimator settings from `[estimator]` over the library defaults.
fn estimator_base(file: &FileConfig, fallback: EstimatorConfig) -> CliResult<EstimatorConfig> {
    let Some(table) = &file.estimator else { return Ok(fallback) };
    for key in ["theta", "delta_n"] {
        if table.contains_key(key) {
            return Err(CliError::Config(format!(
                "`{key}` is not an [estimator] key; theta is set at top level and delta_n comes from the data"
            )));
        }
    }
    let mut merged = toml::Table::try_from(&fallback).map_err(|e| CliError::Other(e.to_string()))?;
    merged.extend(table.clone());
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| CliError::Config(format!("[estimator]: {e}")))
}

fn estimator_for(
    args: &EstimatorArgs,
    file: &FileConfig,
    delta_n: f64,
) -> CliResult<(EstimatorConfig, Method, bool)> {
    let mut est = estimator_base(file, EstimatorConfig::default())?;
    est.delta_n = delta_n;
    if let Some(t) = pick("theta", args.theta, file.theta)? {
        est.theta = t;
    }
    let cw_file = file
        .estimator
        .as_ref()
        .and_then(|t| t.get("trunc_rule"))
        .and_then(|v| v.as_str())
        .map(|s| s == "componentwise");
    if pick_switch("componentwise", args.componentwise, file.componentwise.or(cw_file))? {
        est.trunc_rule = TruncationRule::Componentwise;
    }
    let method = parse_method(&pick("method", args.method.clone(), file.method.clone())?.unwrap_or_else(|| "lin".into()))?;
    let allow = pick_switch("allow_invalid", args.allow_invalid, file.allow_invalid)?;
    est.validate()?;
    Ok((est, method, allow))
}

fn load_input(input: &InputArgs, file: &FileConfig) -> CliResult<ReturnPanel<f64>> {
    let factors = pick("factors", input.factors.clone(), file.factors.clone())?;
    let panel = match (&input.panel, input.ticks.is_empty()) {
        (Some(p), true) => read_panel_file(p)?,
        (None, false) => {
            let step = pick("step", input.step, file.step)?
                .ok_or_else(|| CliError::Config("tick input needs --step".into()))?;
            let session = match pick("session", input.session.clone(), file.session.clone())? {
                Some(s) => Session::parse(&s).map_err(|e| CliError::Config(e.to_string()))?,
                None => Session::default(),
            };
            let series = input.ticks.iter().map(|p| read_ticks(p)).collect::<Result<Vec<_>, _>>()?;
            load_and_resample(&series, step, session, 1)?
        }
        _ => return Err(CliError::Config("give exactly one of --panel or --ticks".into())),
    };
    match factors {
        None => Ok(panel),
        Some(names) => {
            let labels = panel.labels();
            let mut fcols = Vec::new();
            for n in &names {
                let c = labels
                    .iter()
                    .position(|l| l == n)
                    .ok_or_else(|| CliError::Config(format!("no column labelled `{n}`")))?;
                fcols.push(c);
            }
            let mut cols: Vec<usize> = (0..labels.len()).filter(|c| !fcols.contains(c)).collect();
            cols.extend(&fcols);
            Ok(panel.select_columns(&cols, fcols.len())?)
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn finish(report: &UniverseReport, allow_invalid: bool) -> CliResult<()> {
    let flags = report.numeric_flags();
    if flags > 0 {
        eprintln!("covol: {flags} estimates or tests were numerically invalid (see the `error` and `valid` fields)");
        if !allow_invalid {
            return Err(CliError::Numeric(format!("{flags} invalid results")));
        }
    }
    Ok(())
}

fn sim_config(a: &SimArgs, file: &FileConfig) -> CliResult<SimConfig> {
    let model = ModelId::from_number(pick("model", a.model, file.model)?.unwrap_or(2))?;
    let mut sim = SimConfig { model, ..SimConfig::default() };
    sim.stocks = pick("stocks", a.stocks, file.stocks)?.unwrap_or(sim.stocks);
    sim.years = pick("years", a.years, file.years)?.unwrap_or(sim.years);
    let minutes = pick("minutes", a.minutes, file.minutes)?;
    let seconds = pick("seconds", a.seconds, file.seconds)?;
    sim.delta_n = match (minutes, seconds) {
        (Some(_), Some(_)) => return Err(CliError::Config("give minutes or seconds, not both".into())),
        (Some(m), None) => delta_from_minutes(m),
        (None, Some(s)) => delta_from_seconds(s),
        (None, None) => sim.delta_n,
    };
    sim.substeps = pick("substeps", a.substeps, file.substeps)?.unwrap_or(sim.substeps);
    sim.seed = pick("seed", a.seed, file.seed)?.unwrap_or(0);
    sim.fixed_vol = pick_switch("fixed_vol", a.fixed_vol, file.fixed_vol)?;
    sim.validate()?;
    Ok(sim)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Estimate(a) => {
            let panel = load_input(&a.input, &file)?;
            let (estimator, method, allow) = estimator_for(&a.est, &file, panel.delta_n())?;
            let tests = !pick_switch("no_se", a.no_se, file.no_se)?;
            let opts = AnalysisOptions {
                estimator,
                method,
                tests,
                alternative: Alternative::TwoSided,
                procedure: FdrProcedure::BenjaminiHochberg,
                q: 0.05,
            };
            let report = analyse_universe(&panel, &opts)?;
            write_json(&a.out, &report)?;
            if let Some(p) = &a.csv {
                write_estimates_csv(&report, create(p)?)?;
            }
            finish(&report, allow)
        }
        Command::Test(a) => {
            let panel = load_input(&a.input, &file)?;
            let (estimator, method, allow) = estimator_for(&a.est, &file, panel.delta_n())?;
            if method == Method::Naive {
                return Err(CliError::Config("the naive estimator has no asymptotic variance to test with".into()));
            }
            let q = pick("q", a.q, file.q)?.unwrap_or(0.05);
            if !(q > 0.0 && q < 1.0) {
                return Err(CliError::Config(format!("q must lie in (0, 1), got {q}")));
            }
            let procedure = match pick("procedure", a.procedure.clone(), file.procedure.clone())?.as_deref() {
                None | Some("bh") => FdrProcedure::BenjaminiHochberg,
                Some("by") => FdrProcedure::BenjaminiYekutieli,
                Some(other) => return Err(CliError::Config(format!("unknown procedure `{other}` (bh or by)"))),
            };
            let alternative = if pick_switch("one_sided", a.one_sided, file.one_sided)? {
                Alternative::Greater
            } else {
                Alternative::TwoSided
            };
            let opts = AnalysisOptions { estimator, method, tests: true, alternative, procedure, q };
            let report = analyse_universe(&panel, &opts)?;
            write_json(&a.out, &report)?;
            finish(&report, allow)
        }
        Command::Report(a) => {
            let text = fs::read_to_string(&a.input)
                .map_err(|e| CliError::Data(crate::error::DataError::Read { path: a.input.display().to_string(), source: e }))?;
            let report: UniverseReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(crate::error::DataError::Invalid(format!("{}: {e}", a.input.display()))))?;
            fs::create_dir_all(&a.out_dir)?;
            let (h, e) = idiovol_network(&report)?;
            write_heatmap(&h, create(&a.out_dir.join("heatmap_idiovol.csv"))?)?;
            write_edges(&e, create(&a.out_dir.join("edges_idiovol.csv"))?)?;
            let (h, e) = resid_network(&report)?;
            write_heatmap(&h, create(&a.out_dir.join("heatmap_resid.csv"))?)?;
            write_edges(&e, create(&a.out_dir.join("edges_resid.csv"))?)?;
            Ok(())
        }
        Command::Simulate(a) => {
            let sim = sim_config(&a.sim, &file)?;
            let (panel, latent) = simulate_model(&sim)?;
            write_panel(&panel, create(&a.out)?)?;
            if let Some(p) = &a.truth {
                if sim.stocks < 2 {
                    return Err(CliError::Config("true pair values need at least two stocks".into()));
                }
                write_json(p, &TrueQuantities::new(&latent.vol, 0, 1))?;
            }
            Ok(())
        }
        Command::Mc(a) => {
            let sim = sim_config(&a.sim, &file)?;
            let base = McConfig::default();
            let estimator = estimator_base(&file, base.estimator.clone())?;
            let methods = match pick("methods", a.methods.clone(), file.methods.clone())? {
                Some(ms) => ms.iter().map(|m| parse_method(m)).collect::<CliResult<Vec<_>>>()?,
                None => base.methods.clone(),
            };
            let cfg = McConfig {
                sim,
                reps: pick("reps", a.reps, file.reps)?.unwrap_or(base.reps),
                thetas: pick("thetas", a.thetas.clone(), file.thetas.clone())?.unwrap_or(base.thetas.clone()),
                methods,
                tests: !pick_switch("no_tests", a.no_tests, file.no_tests)?,
                estimator,
                ..base
            };
            let summary = mc_run(&cfg)?;
            summary.write_csv(&mut create(&a.out)?)?;
            Ok(())
        }
    }
}
