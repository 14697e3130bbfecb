use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use covol::EstimatorConfig;
use covol::Method;
use covol_cli::analysis::{pair_key, Estimate, PairResult, TestOutcome, UniverseReport, FdrSettings};
use covol_cli::report::idiovol_network;
use proptest::prelude::*;

fn covol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covol")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mc_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&covol(&["mc", "--model", "1", "--reps", "1", "--seed", "7", "--out", s(out)]));
    }
    let (ta, tb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(text.starts_with("table,method,theta,quantity,statistic,value"));
    assert!(text.contains("rejections,an,2.5,H01,alpha_0.05,"));
}

#[test]
fn simulate_is_deterministic_and_estimate_recovers_signs() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let panel2 = dir.path().join("panel2.csv");
    let truth = dir.path().join("truth.json");
    let sim = |out: &Path| {
        covol(&["simulate", "--model", "2", "--years", "10", "--minutes", "5", "--seed", "3", "--out", s(out), "--truth", s(&truth)])
    };
    ok(&sim(&panel));
    ok(&sim(&panel2));
    assert_eq!(fs::read(&panel).unwrap(), fs::read(&panel2).unwrap());

    let est = dir.path().join("est.json");
    let flat = dir.path().join("est.csv");
    ok(&covol(&["estimate", "--panel", s(&panel), "--theta", "2.5", "--out", s(&est), "--csv", s(&flat)]));
    let r: UniverseReport = serde_json::from_str(&fs::read_to_string(&est).unwrap()).unwrap();
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(r.stocks, ["Y1", "Y2"]);
    assert_eq!(r.factors, ["X"]);
    assert_eq!(r.method, Method::Lin);
    let pair = &r.pairs[&pair_key("Y1", "Y2")];
    assert!(pair.error.is_none());
    // Model 2 loads both IdioVols positively on C_X and on a common factor.
    let corr = pair.corr.unwrap();
    assert!(t["corr"].as_f64().unwrap() > 0.0 && corr.value > 0.0);
    assert!(corr.se.unwrap() > 0.0);
    let g = r.stock_results["Y1"].gamma[0];
    assert!(t["gamma_j"].as_f64().unwrap() > 0.0 && g.value > 0.0, "γ̂ = {}", g.value);
    assert!(r.stock_results["Y1"].r2.unwrap().value > 0.0);
    assert!(pair.cov_resid.is_some() && pair.corr_resid.is_some());
    let csv = fs::read_to_string(&flat).unwrap();
    assert!(csv.starts_with("kind,key,quantity,value,se"));
    assert!(csv.contains("pair,Y1|Y2,corr,"));

    let tests = dir.path().join("tests.json");
    ok(&covol(&["test", "--panel", s(&panel), "--theta", "2.5", "--method", "an", "--out", s(&tests)]));
    let r: UniverseReport = serde_json::from_str(&fs::read_to_string(&tests).unwrap()).unwrap();
    let pair = &r.pairs[&pair_key("Y1", "Y2")];
    assert!(pair.h01.unwrap().valid && pair.h03.is_some());
    assert!(r.stock_results["Y1"].h02.unwrap().p_value < 0.05);
    assert_eq!(r.fdr.as_ref().unwrap().q, 0.05);

    let out = dir.path().join("report");
    ok(&covol(&["report", "--input", s(&tests), "--out-dir", s(&out)]));
    for f in ["heatmap_idiovol.csv", "heatmap_resid.csv", "edges_idiovol.csv", "edges_resid.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let heat = fs::read_to_string(out.join("heatmap_idiovol.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), ",Y1,Y2");
}

fn report_with(pairs: Vec<(usize, usize, bool, f64)>, n: usize) -> UniverseReport {
    let stocks: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
    let mut map = BTreeMap::new();
    for (j, s, reject, corr) in pairs {
        let t = TestOutcome { statistic: 1.0, p_value: if reject { 0.001 } else { 0.5 }, valid: true, reject };
        map.insert(
            pair_key(&stocks[j], &stocks[s]),
            PairResult {
                stock_j: stocks[j].clone(),
                stock_s: stocks[s].clone(),
                corr: Some(Estimate { value: corr, se: Some(0.1) }),
                corr_resid: Some(Estimate { value: corr / 2.0, se: Some(0.1) }),
                h01: Some(t),
                h03: Some(t),
                ..PairResult::default()
            },
        );
    }
    UniverseReport {
        method: Method::Lin,
        theta: 2.5,
        k_n: 351,
        delta_n: covol::config::FIVE_MINUTES,
        n_increments: 1000,
        stocks,
        factors: vec!["X".into()],
        estimator: EstimatorConfig::default(),
        stock_results: BTreeMap::new(),
        pairs: map,
        fdr: Some(FdrSettings { procedure: "bh".into(), q: 0.05, alternative: "two_sided".into() }),
    }
}

#[test]
fn report_without_rejections_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tests.json");
    let r = report_with(vec![(0, 1, false, 0.4), (0, 2, false, -0.3), (1, 2, false, 0.9)], 3);
    fs::write(&input, serde_json::to_string(&r).unwrap()).unwrap();
    let out = dir.path().join("rep");
    ok(&covol(&["report", "--input", s(&input), "--out-dir", s(&out)]));
    let heat = fs::read_to_string(out.join("heatmap_idiovol.csv")).unwrap();
    let mut lines = heat.lines();
    assert_eq!(lines.next().unwrap(), ",S0,S1,S2");
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], format!("S{i}"));
        assert!(cells[1..].iter().all(|c| c.parse::<f64>().unwrap() == 0.0), "{line}");
    }
    assert_eq!(fs::read_to_string(out.join("edges_idiovol.csv")).unwrap().trim(), "source,target,weight");
}

#[test]
fn report_needs_test_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("est.json");
    let mut r = report_with(vec![(0, 1, true, 0.4)], 2);
    r.fdr = None;
    fs::write(&input, serde_json::to_string(&r).unwrap()).unwrap();
    let out = covol(&["report", "--input", s(&input), "--out-dir", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_separate_config_data_and_numeric_problems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "theta = 3.0\n").unwrap();
    let panel = dir.path().join("p.csv");
    ok(&covol(&["simulate", "--model", "2", "--years", "1", "--seed", "1", "--out", s(&panel)]));

    // Flag and config file disagree.
    let out = covol(&["--config", s(&cfg), "estimate", "--panel", s(&panel), "--theta", "2.0", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(covol(&["estimate", "--panel", s(&panel), "--method", "bogus", "--out", "/dev/null"]).status.code(), Some(2));
    assert_eq!(covol(&["estimate", "--bogus-flag"]).status.code(), Some(2));
    fs::write(&cfg, "thetaa = 3.0\n").unwrap();
    assert_eq!(covol(&["--config", s(&cfg), "mc", "--out", "/dev/null"]).status.code(), Some(2));

    // Missing and malformed data.
    let missing = dir.path().join("missing.csv");
    assert_eq!(covol(&["estimate", "--panel", s(&missing), "--out", "/dev/null"]).status.code(), Some(3));
    let ticks = dir.path().join("A.csv");
    fs::write(&ticks, "timestamp,price\n2021-03-01T10:00:00,10\n2021-03-01T09:40:00,10\n").unwrap();
    let out = covol(&["estimate", "--ticks", s(&ticks), "--step", "300", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("earlier"));

    // Constant prices: every truncation threshold is zero.
    let flat = dir.path().join("flat.csv");
    let mut text = String::from("# covol panel delta_n=0.0002 factor_count=1\nday,A,B,X\n");
    for i in 0..400 {
        text.push_str(&format!("{},0.0,0.0,0.0\n", i / 100));
    }
    fs::write(&flat, text).unwrap();
    let est = dir.path().join("flat.json");
    let out = covol(&["estimate", "--panel", s(&flat), "--theta", "0.05", "--out", s(&est)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let r: UniverseReport = serde_json::from_str(&fs::read_to_string(&est).unwrap()).unwrap();
    assert!(r.pairs[&pair_key("A", "B")].error.is_some());
    let out = covol(&["estimate", "--panel", s(&flat), "--theta", "0.05", "--allow-invalid", "--out", s(&est)]);
    ok(&out);
}

#[test]
fn tick_files_flow_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("p.csv");
    ok(&covol(&["simulate", "--model", "2", "--years", "0.5", "--seed", "4", "--out", s(&panel)]));
    let p = covol_cli::io::read_panel_file(&panel).unwrap();
    // Write each column back out as a tick file on a 5-minute grid.
    let start = chrono::NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let lp = p.log_prices();
    let mut files = Vec::new();
    for (a, label) in p.labels().iter().enumerate() {
        let path = dir.path().join(format!("{label}.csv"));
        let mut text = String::from("timestamp,price\n");
        let mut row = 0;
        for day in 0..(p.n_increments() / 78) {
            let date = start + chrono::Duration::days(day as i64);
            for m in 0..=78 {
                let t = date.and_hms_opt(9, 30, 0).unwrap() + chrono::Duration::minutes(5 * m);
                text.push_str(&format!("{},{}\n", t.format("%Y-%m-%dT%H:%M:%S"), (100f64.ln() + lp[(row + m as usize, a)]).exp()));
            }
            row += 78;
        }
        fs::write(&path, text).unwrap();
        files.push(path);
    }
    let est = dir.path().join("e.json");
    let mut args = vec!["estimate", "--ticks"];
    args.extend(files.iter().map(|f| s(f)));
    args.extend(["--step", "300", "--factors", "X", "--no-se", "--out", s(&est)]);
    ok(&covol(&args));
    let r: UniverseReport = serde_json::from_str(&fs::read_to_string(&est).unwrap()).unwrap();
    assert_eq!(r.factors, ["X"]);
    assert_eq!(r.n_increments, p.n_increments());
    // Same numbers as estimating on the panel directly.
    let direct = dir.path().join("d.json");
    ok(&covol(&["estimate", "--panel", s(&panel), "--no-se", "--out", s(&direct)]));
    let d: UniverseReport = serde_json::from_str(&fs::read_to_string(&direct).unwrap()).unwrap();
    assert!((r.delta_n - d.delta_n).abs() < 1e-15 * d.delta_n);
    let key = pair_key("Y1", "Y2");
    let (a, b) = (r.pairs[&key].cov_idiovol.unwrap().value, d.pairs[&key].cov_idiovol.unwrap().value);
    assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heatmaps_are_symmetric_with_zero_diagonal(
        n in 2usize..7,
        picks in proptest::collection::vec((any::<bool>(), -1.5f64..1.5), 21),
    ) {
        let mut pairs = Vec::new();
        let mut k = 0;
        for j in 0..n {
            for s in j + 1..n {
                pairs.push((j, s, picks[k].0, picks[k].1));
                k += 1;
            }
        }
        let (h, edges) = idiovol_network(&report_with(pairs.clone(), n)).unwrap();
        for a in 0..n {
            prop_assert_eq!(h.values[a][a], 0.0);
            for b in 0..n {
                prop_assert_eq!(h.values[a][b], h.values[b][a]);
                prop_assert!(h.values[a][b].abs() <= 1.0);
            }
        }
        prop_assert_eq!(edges.len(), pairs.iter().filter(|p| p.2).count());
    }
}
