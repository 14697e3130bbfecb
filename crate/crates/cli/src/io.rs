//! Tick files in, synchronized log-price panels out.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};
use covol::{Matrix, ReturnPanel};
use covol_sim::config::DAYS_PER_YEAR;
use rayon::prelude::*;

use crate::error::DataError;

/// Intraday trading window, both ends included.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Session {
    pub open: NaiveTime,
    pub close: NaiveTime,
}

impl Default for Session {
    fn default() -> Self {
        Self {
            open: NaiveTime::from_hms_opt(9, 30, 0).expect("valid time"),
            close: NaiveTime::from_hms_opt(16, 0, 0).expect("valid time"),
        }
    }
}

impl Session {
    /// Parses `HH:MM-HH:MM`.
    pub fn parse(s: &str) -> Result<Self, DataError> {
        let bad = || DataError::Invalid(format!("session `{s}` is not of the form HH:MM-HH:MM"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let t = |x: &str| NaiveTime::parse_from_str(x.trim(), "%H:%M").map_err(|_| bad());
        let out = Self { open: t(a)?, close: t(b)? };
        if out.close <= out.open {
            return Err(bad());
        }
        Ok(out)
    }

    pub fn seconds(&self) -> i64 {
        (self.close - self.open).num_seconds()
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        t >= self.open && t <= self.close
    }
}

/// One asset's trades, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct TickSeries {
    pub label: String,
    pub ticks: Vec<(NaiveDateTime, f64)>,
}

/// ISO-8601 with `T` or a space; an offset, when present, is dropped in
/// favour of the local wall-clock time.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_local());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads `timestamp,price` rows; timestamps must not decrease.
pub fn parse_ticks(label: &str, file: &str, r: impl Read) -> Result<TickSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let parse_err = |line: usize, msg: String| DataError::Parse { file: file.to_string(), line, msg };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(tc), Some(pc)) = (col("timestamp"), col("price")) else {
        return Err(parse_err(1, "header must name `timestamp` and `price`".into()));
    };
    let mut ticks: Vec<(NaiveDateTime, f64)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let ts = rec.get(tc).unwrap_or_default();
        let t = parse_timestamp(ts).ok_or_else(|| parse_err(line, format!("bad timestamp `{ts}`")))?;
        let p: f64 = rec
            .get(pc)
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err(line, format!("bad price `{}`", rec.get(pc).unwrap_or_default())))?;
        if !(p > 0.0 && p.is_finite()) {
            return Err(parse_err(line, format!("price must be positive, got {p}")));
        }
        if ticks.last().is_some_and(|&(prev, _)| t < prev) {
            return Err(DataError::NonmonotoneTimestamps { asset: label.to_string(), line });
        }
        ticks.push((t, p));
    }
    Ok(TickSeries { label: label.to_string(), ticks })
}

/// Tick file labelled by its file stem.
pub fn read_ticks(path: &Path) -> Result<TickSeries, DataError> {
    let f = File::open(path).map_err(|e| DataError::Read { path: path.display().to_string(), source: e })?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_ticks(&label, &path.display().to_string(), BufReader::new(f))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// In-session ticks per day, duplicate timestamps collapsed to their median.
fn clean(series: &TickSeries, session: Session) -> Result<BTreeMap<NaiveDate, Vec<(NaiveTime, f64)>>, DataError> {
    let mut days: BTreeMap<NaiveDate, Vec<(NaiveTime, f64)>> = BTreeMap::new();
    let mut seen: BTreeSet<NaiveDate> = BTreeSet::new();
    let mut i = 0;
    let ticks = &series.ticks;
    while i < ticks.len() {
        let t = ticks[i].0;
        let mut j = i;
        while j < ticks.len() && ticks[j].0 == t {
            j += 1;
        }
        seen.insert(t.date());
        if session.contains(t.time()) {
            let mut ps: Vec<f64> = ticks[i..j].iter().map(|x| x.1).collect();
            days.entry(t.date()).or_default().push((t.time(), median(&mut ps)));
        }
        i = j;
    }
    if let Some(d) = seen.iter().find(|d| !days.contains_key(d)) {
        return Err(DataError::EmptySession { asset: series.label.clone(), day: d.to_string() });
    }
    Ok(days)
}

/// Log prices on the grid for one day: previous tick, with the day's first
/// trade carried back to grid points before it.
fn sample_day(ticks: &[(NaiveTime, f64)], grid: &[NaiveTime]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    for &g in grid {
        while k + 1 < ticks.len() && ticks[k + 1].0 <= g {
            k += 1;
        }
        out.push(ticks[k].1.ln());
    }
    out
}

/// Observation step in years for a grid step on a 252-day year of sessions.
pub fn delta_for(step_seconds: u32, session: Session) -> f64 {
    f64::from(step_seconds) / (DAYS_PER_YEAR * session.seconds() as f64)
}

/// Previous-tick sampling of every asset onto a common intraday grid over
/// the days all assets trade. Each day's increments are chained onto the
/// previous day's last price, so no overnight return enters the panel.
/// The last `factor_count` series are the return factors.
pub fn load_and_resample(
    series: &[TickSeries],
    step_seconds: u32,
    session: Session,
    factor_count: usize,
) -> Result<ReturnPanel<f64>, DataError> {
    if series.is_empty() {
        return Err(DataError::Invalid("no assets given".into()));
    }
    let span = session.seconds();
    if step_seconds == 0 || span % i64::from(step_seconds) != 0 {
        return Err(DataError::Invalid(format!("a {step_seconds} s step does not divide the {span} s session")));
    }
    let grid: Vec<NaiveTime> = (0..=span / i64::from(step_seconds))
        .map(|m| session.open + chrono::Duration::seconds(m * i64::from(step_seconds)))
        .collect();
    let cleaned: Vec<_> = series.par_iter().map(|s| clean(s, session)).collect::<Result<_, _>>()?;
    let mut common: BTreeSet<NaiveDate> = cleaned[0].keys().copied().collect();
    for c in &cleaned[1..] {
        common.retain(|d| c.contains_key(d));
    }
    if common.is_empty() {
        return Err(DataError::NoCommonDays);
    }
    let d = series.len();
    let per_day = grid.len() - 1;
    let rows = 1 + common.len() * per_day;
    let mut data = vec![0.0; rows * d];
    let mut day_index = vec![0u32; rows];
    for (a, c) in cleaned.iter().enumerate() {
        let mut row = 0;
        for (k, day) in common.iter().enumerate() {
            let logs = sample_day(&c[day], &grid);
            if k == 0 {
                data[a] = logs[0];
            }
            for m in 1..logs.len() {
                row += 1;
                data[row * d + a] = data[(row - 1) * d + a] + (logs[m] - logs[m - 1]);
                day_index[row] = k as u32;
            }
        }
    }
    let labels = series.iter().map(|s| s.label.clone()).collect();
    let prices = Matrix::from_row_major(rows, d, data).map_err(|e| DataError::Invalid(e.to_string()))?;
    ReturnPanel::new(labels, prices, delta_for(step_seconds, session), day_index, factor_count)
        .map_err(|e| DataError::Invalid(e.to_string()))
}

/// `# covol panel delta_n=… factor_count=…`, a `day,<labels>` header, then one
/// row per grid point. Floats are written in their shortest round-trip form.
pub fn write_panel(panel: &ReturnPanel<f64>, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# covol panel delta_n={:?} factor_count={}", panel.delta_n(), panel.factor_count())?;
    writeln!(w, "day,{}", panel.labels().join(","))?;
    let p = panel.log_prices();
    for (i, day) in panel.day_index().iter().enumerate() {
        write!(w, "{day}")?;
        for a in 0..panel.dim() {
            write!(w, ",{:?}", p[(i, a)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_panel(r: impl Read, file: &str) -> Result<ReturnPanel<f64>, DataError> {
    let mut r = BufReader::new(r);
    let err = |line: usize, msg: String| DataError::Parse { file: file.to_string(), line, msg };
    let mut meta = String::new();
    r.read_line(&mut meta).map_err(|e| err(1, e.to_string()))?;
    let meta = meta.trim().strip_prefix("# covol panel").ok_or_else(|| err(1, "missing `# covol panel` line".into()))?;
    let (mut delta, mut factors) = (None, None);
    for kv in meta.split_whitespace() {
        match kv.split_once('=') {
            Some(("delta_n", v)) => delta = v.parse::<f64>().ok(),
            Some(("factor_count", v)) => factors = v.parse::<usize>().ok(),
            _ => return Err(err(1, format!("unexpected `{kv}`"))),
        }
    }
    let (Some(delta), Some(factors)) = (delta, factors) else {
        return Err(err(1, "delta_n and factor_count are required".into()));
    };
    let mut rdr = csv::ReaderBuilder::new().from_reader(r);
    let headers = rdr.headers().map_err(|e| err(2, e.to_string()))?.clone();
    if headers.get(0) != Some("day") {
        return Err(err(2, "first column must be `day`".into()));
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut data = Vec::new();
    let mut days = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 3;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        days.push(rec[0].parse::<u32>().map_err(|_| err(line, format!("bad day `{}`", &rec[0])))?);
        for v in rec.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(|_| err(line, format!("bad value `{v}`")))?);
        }
    }
    let prices = Matrix::from_row_major(days.len(), labels.len(), data).map_err(|e| err(0, e.to_string()))?;
    ReturnPanel::new(labels, prices, delta, days, factors).map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn read_panel_file(path: &Path) -> Result<ReturnPanel<f64>, DataError> {
    let f = File::open(path).map_err(|e| DataError::Read { path: path.display().to_string(), source: e })?;
    read_panel(f, &path.display().to_string())
}
