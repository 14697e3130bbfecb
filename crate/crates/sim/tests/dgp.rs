use covol::avar::omega_terms;
use covol::factors::{corr_idio_returns, integrated_r2_rfm};
use covol::spot::{bipower_sigma2, detect_vol_jump_events, estimate_spot_path};
use covol::{EstimatorConfig, Functional, Method};
use covol_sim::cir::simulate_cir;
use covol_sim::mc::{mc_run, Estimand, McConfig};
use covol_sim::model::{simulate_vol, VolPath};
use covol_sim::oracle::{latent_quadcov, oracle_quadcov, quadcov_riemann, LatentFunctional};
use covol_sim::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn five_min(model: ModelId, years: f64, seed: u64) -> SimConfig {
    SimConfig::new(model, years, delta_from_minutes(5.0), seed)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn same_config_is_bit_identical_and_seeds_differ() {
    let cfg = SimConfig { store_fine: true, ..five_min(ModelId::Two, 0.2, 3) };
    let (p1, l1) = simulate_model(&cfg).unwrap();
    let (p2, l2) = simulate_model(&cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(*l1.vol, *l2.vol);
    assert_eq!(l1.jumps, l2.jumps);
    let (p3, _) = simulate_model(&SimConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(p1.log_prices(), p3.log_prices());
}

#[test]
fn cir_long_run_mean_is_mu() {
    let p = CirParams::default();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let path = simulate_cir(&p, p.mu, 50.0, 1e-3, &mut r);
    let mean = path.values.iter().sum::<f64>() / path.values.len() as f64;
    assert!((mean / p.mu - 1.0).abs() < 0.05, "mean {mean}");
}

#[test]
fn cir_realized_quadratic_variation_matches_sigma_squared_integral() {
    let p = CirParams::default();
    let dt = 1e-5;
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let path = simulate_cir(&p, p.mu, 10.0, dt, &mut r);
    let qv = oracle_quadcov(&path.values, &path.values).unwrap();
    let integral: f64 = path.values[..path.values.len() - 1].iter().map(|f| p.sigma * p.sigma * f * dt).sum();
    assert!((qv / integral - 1.0).abs() < 0.02, "qv {qv} vs {integral}");
}

#[test]
fn market_increments_carry_the_leverage_correlation() {
    // About 10⁶ five-minute bars.
    let mut cfg = five_min(ModelId::One, 51.0, 21);
    cfg.jump_intensity = 0.0;
    let (panel, latent) = simulate_model(&cfg).unwrap();
    let vol = &latent.vol;
    let x = vol.market();
    let inc = panel.increments();
    let d = panel.dim();
    let n = panel.n_increments();
    assert!(n >= 1_000_000);
    let df: Vec<f64> = (0..n).map(|i| vol.factors_at(i + 1)[0] - vol.factors_at(i)[0]).collect();
    let dx: Vec<f64> = (0..n).map(|i| inc[i * d + x]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, mx) = (mean(&df), mean(&dx));
    let cov: f64 = df.iter().zip(&dx).map(|(a, b)| (a - mf) * (b - mx)).sum();
    let vf: f64 = df.iter().map(|a| (a - mf).powi(2)).sum();
    let vx: f64 = dx.iter().map(|b| (b - mx).powi(2)).sum();
    let corr = cov / (vf * vx).sqrt();
    assert!((corr + 0.8).abs() < 0.02, "corr {corr}");
}

#[test]
fn floor_hits_are_rare_under_feller() {
    let vol = simulate_vol(&five_min(ModelId::Two, 10.0, 5), 0).unwrap();
    let rate = vol.floor_hits as f64 / (vol.fine_steps * vol.factors) as f64;
    assert!(rate < 1e-3, "floor-hit rate {rate}");
}

#[test]
fn market_jump_count_has_poisson_mean() {
    // Two bars a day keep 500 ten-year replications cheap; the jump layer does not depend on the grid.
    let cfg = SimConfig { substeps: 1, ..SimConfig::new(ModelId::One, 10.0, delta_from_minutes(195.0), 8) };
    let reps = 500;
    let counts: Vec<f64> =
        (0..reps).map(|r| simulate_replication(&cfg, r).unwrap().1.jump_count(cfg.stocks) as f64).collect();
    let mean = counts.iter().sum::<f64>() / reps as f64;
    let se = (20.0 / reps as f64).sqrt();
    assert!((mean - 20.0).abs() < 4.0 * se, "mean jump count {mean}");
}

#[test]
fn model_one_idiovols_have_no_common_variation() {
    let vol = simulate_vol(&five_min(ModelId::One, 10.0, 6), 0).unwrap();
    let (z1, z2) = (LatentFunctional::IdioVol(0), LatentFunctional::IdioVol(1));
    assert_eq!(quadcov_riemann(&vol, z1, z2), 0.0);
    let cross = latent_quadcov(&vol, z1, z2);
    let scale = (latent_quadcov(&vol, z1, z1) * latent_quadcov(&vol, z2, z2)).sqrt();
    assert!(cross.abs() < 1e-2 * scale, "cross {cross} vs {scale}");
}

#[test]
fn model_two_idiovol_loading_is_the_table_coefficient() {
    let vol = simulate_vol(&five_min(ModelId::Two, 10.0, 7), 0).unwrap();
    let (x, z1) = (LatentFunctional::MarketVariance, LatentFunctional::IdioVol(0));
    let exact = quadcov_riemann(&vol, x, z1) / quadcov_riemann(&vol, x, x);
    assert!((exact - 0.45).abs() < 1e-12, "{exact}");
    let realized = TrueQuantities::new(&vol, 0, 1).gamma_j;
    assert!((realized - 0.45).abs() < 1e-2, "{realized}");
}

#[test]
fn bipower_tracks_the_daily_average_variance() {
    let mut errs = Vec::new();
    for rep in 0..500 {
        let mut cfg = five_min(ModelId::One, 1.0 / 252.0, 12);
        cfg.jump_intensity = 0.0;
        let (panel, latent) = simulate_replication(&cfg, rep).unwrap();
        let d = panel.dim();
        let x = latent.vol.market();
        let r: Vec<f64> = panel.increments().chunks(d).map(|row| row[x]).collect();
        let bv = bipower_sigma2(&r, panel.delta_n()).unwrap();
        let truth = latent.vol.daily_average_cov(0)[(x, x)];
        errs.push((bv / truth - 1.0).abs());
    }
    let med = median(&mut errs);
    assert!(med < 0.25, "median relative error {med}");
}

fn spot_error(vol: &VolPath, panel: &covol::ReturnPanel<f64>, theta: f64) -> f64 {
    let cfg = EstimatorConfig::with_delta_theta(panel.delta_n(), theta);
    let path = estimate_spot_path(panel, &cfg).unwrap();
    let mut errs: Vec<f64> = (0..path.len())
        .map(|i| {
            let c = vol.spot_cov(i);
            path.get(i).iter().zip(c.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    median(&mut errs)
}

#[test]
fn wider_spot_window_is_more_accurate() {
    let mut cfg = five_min(ModelId::One, 1.0, 13);
    cfg.jump_intensity = 0.0;
    let (panel, latent) = simulate_model(&cfg).unwrap();
    let wide = spot_error(&latent.vol, &panel, 2.5);
    let narrow = spot_error(&latent.vol, &panel, 1.0);
    assert!(wide < narrow, "θ=2.5: {wide}, θ=1.0: {narrow}");
}

#[test]
fn smooth_volatility_rarely_flags_a_jump() {
    let est = EstimatorConfig::default();
    let mut fractions = Vec::new();
    for rep in 0..200 {
        let mut cfg = five_min(ModelId::One, 0.25, 14);
        cfg.jump_intensity = 0.0;
        let (panel, _) = simulate_replication(&cfg, rep).unwrap();
        let path = estimate_spot_path(&panel, &est).unwrap();
        fractions.push(detect_vol_jump_events(&path, &est).jump_fraction());
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    assert!(mean < 0.05, "false volatility-jump fraction {mean}");
}

#[test]
fn omegas_are_finite_with_positive_first_term() {
    let est = EstimatorConfig::with_delta_theta(delta_from_minutes(5.0), 2.5);
    for rep in 0..100 {
        let (panel, _) = simulate_replication(&five_min(ModelId::Two, 0.25, 15), rep).unwrap();
        let path = estimate_spot_path(&panel, &est).unwrap();
        let x = panel.dim() - 1;
        let z1 = Functional::idiovol(panel.dim(), 0, &[x]).unwrap();
        let cx = Functional::entry(panel.dim(), x, x).unwrap();
        let om = omega_terms(&z1, &cx, &z1, &cx, &path, None).unwrap();
        assert!(om.omega1.is_finite() && om.omega2.is_finite() && om.omega3.is_finite());
        assert!(om.omega1 > 0.0, "rep {rep}: {}", om.omega1);
    }
}

#[test]
fn zero_beta_gives_negligible_return_r2() {
    let est = EstimatorConfig::with_delta_theta(delta_from_minutes(1.0), 2.5);
    for rep in 0..10 {
        let mut cfg = SimConfig::new(ModelId::One, 0.5, delta_from_minutes(1.0), 16);
        cfg.beta = BetaFn { level: 0.0, amplitude: 0.0, frequency: 0.0 };
        let (panel, _) = simulate_replication(&cfg, rep).unwrap();
        let r2 = integrated_r2_rfm(&panel, 120, 0, &est).unwrap();
        assert!(r2.abs() < 0.02, "rep {rep}: R² {r2}");
    }
}

#[test]
fn idiosyncratic_return_correlation_matches_latent_oracle() {
    let est = EstimatorConfig::default();
    let mut errs = Vec::new();
    for rep in 0..200 {
        let (panel, latent) = simulate_replication(&five_min(ModelId::Two, 1.0, 17), rep).unwrap();
        let vol = &latent.vol;
        let (mut z12, mut z11, mut z22) = (0.0, 0.0, 0.0);
        for i in 0..vol.n_bars {
            let c = vol.integrated_cov(i);
            z12 += c[(0, 1)] - vol.ivxbb[i];
            z11 += c[(0, 0)] - vol.ivxbb[i];
            z22 += c[(1, 1)] - vol.ivxbb[i];
        }
        let oracle = z12 / (z11 * z22).sqrt();
        errs.push(corr_idio_returns(&panel, 24, 0, 1, &est).unwrap() - oracle);
    }
    let med = median(&mut errs);
    assert!(med.abs() < 0.05, "median error {med}");
}

#[test]
fn single_replication_tables_are_the_path_errors() {
    let mut sim = five_min(ModelId::Two, 1.0, 18);
    sim.fixed_vol = true;
    let cfg = McConfig { sim, reps: 1, thetas: vec![2.5], methods: vec![Method::Lin], tests: false, ..McConfig::default() };
    let s = mc_run(&cfg).unwrap();
    let o = &s.outcomes[0];
    for (k, e) in Estimand::ALL.iter().enumerate() {
        let bias = s.get("estimates", Method::Lin, 2.5, &e.to_string(), "median_bias").unwrap();
        match o.estimates[k] {
            Some(v) => {
                assert_eq!(bias, v - o.truth[k]);
                assert_eq!(s.get("estimates", Method::Lin, 2.5, &e.to_string(), "rmse").unwrap(), (v - o.truth[k]).abs());
                assert_eq!(s.get("estimates", Method::Lin, 2.5, &e.to_string(), "iqr").unwrap(), 0.0);
            }
            None => assert!(bias.is_nan()),
        }
    }
}
