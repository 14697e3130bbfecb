use std::sync::Arc;

use covol::{Matrix, ReturnPanel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cir::cir_step;
use crate::config::{BetaFn, CirParams, SimConfig};
use crate::error::{SimError, SimResult};

const VOL_STREAM: u64 = 0;
const PRICE_STREAM: u64 = 1;
const JUMP_STREAM: u64 = 2;

/// Independent generator for one `(replication, purpose)` pair.
fn stream(seed: u64, rep: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(rep * 8 + purpose);
    r
}

/// Fine-grid factor paths, kept only when `store_fine` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinePaths {
    pub dt: f64,
    /// `(steps + 1) × K`, row-major.
    pub f: Vec<f64>,
    /// Increments of the Brownian motion driving `f₁`.
    pub driver: Vec<f64>,
}

/// One realization of the volatility factors, reduced to what the price
/// layer and the oracles need: per-bar integrals and the fine-grid
/// quadratic covariation of the factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolPath {
    pub n_bars: usize,
    pub bars_per_day: usize,
    pub delta_n: f64,
    pub substeps: usize,
    pub factors: usize,
    pub stocks: usize,
    pub cir: CirParams,
    pub beta: BetaFn,
    pub leverage: f64,
    pub idio_corr: f64,
    pub idio_loadings: Vec<(f64, Vec<f64>)>,
    /// `(n_bars + 1) × K` factor values at bar boundaries.
    pub f_bars: Vec<f64>,
    /// `∫ C_X`, `∫ β C_X`, `∫ β² C_X` over each bar.
    pub ivx: Vec<f64>,
    pub ivxb: Vec<f64>,
    pub ivxbb: Vec<f64>,
    /// `∫ √C_X dD` and `∫ β √C_X dD` over each bar, `D` the driver of `f₁`.
    pub lev: Vec<f64>,
    pub levb: Vec<f64>,
    /// Per bar, packed upper triangle of `ρ_js ∫ √(C_Zj C_Zs)`.
    pub idio: Vec<f64>,
    /// `Σ Δf Δfᵀ` over the fine grid.
    pub qv_f: Matrix<f64>,
    pub floor_hits: usize,
    pub fine_steps: usize,
    pub fine: Option<FinePaths>,
}

fn packed(m: usize, a: usize, b: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    a * m - a * (a + 1) / 2 + b
}

impl VolPath {
    pub fn simulate(cfg: &SimConfig, rng: &mut impl Rng) -> SimResult<Self> {
        cfg.validate()?;
        let (n, sub, kf, m) = (cfg.n_bars(), cfg.substeps, cfg.factor_count(), cfg.stocks);
        let dt = cfg.delta_fine();
        let sdt = dt.sqrt();
        let loads = cfg.idio_loadings();
        let mp = m * (m + 1) / 2;
        let p = cfg.cir;
        let mut f = vec![p.mu; kf];
        let mut next = vec![0.0; kf];
        let mut z = vec![0.0; kf];
        let mut sq = vec![0.0; m];
        let mut out = Self {
            n_bars: n,
            bars_per_day: cfg.bars_per_day(),
            delta_n: cfg.delta_n,
            substeps: sub,
            factors: kf,
            stocks: m,
            cir: p,
            beta: cfg.beta,
            leverage: cfg.leverage,
            idio_corr: cfg.idio_corr,
            idio_loadings: loads.clone(),
            f_bars: Vec::with_capacity((n + 1) * kf),
            ivx: vec![0.0; n],
            ivxb: vec![0.0; n],
            ivxbb: vec![0.0; n],
            lev: vec![0.0; n],
            levb: vec![0.0; n],
            idio: vec![0.0; n * mp],
            qv_f: Matrix::zeros(kf, kf),
            floor_hits: 0,
            fine_steps: n * sub,
            fine: cfg.store_fine.then(|| FinePaths {
                dt,
                f: Vec::with_capacity((n * sub + 1) * kf),
                driver: Vec::with_capacity(n * sub),
            }),
        };
        if let Some(fp) = out.fine.as_mut() {
            fp.f.extend_from_slice(&f);
        }
        let mut qv = vec![0.0; kf * kf];
        for bar in 0..n {
            out.f_bars.extend_from_slice(&f);
            let (mut ivx, mut ivxb, mut ivxbb, mut lev, mut levb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let idio = &mut out.idio[bar * mp..(bar + 1) * mp];
            for s in 0..sub {
                let t = (bar * sub + s) as f64 * dt;
                let b = cfg.beta.at(t);
                let cx = f[0].max(0.0);
                let scx = cx.sqrt();
                ivx += cx * dt;
                ivxb += b * cx * dt;
                ivxbb += b * b * cx * dt;
                for zk in z.iter_mut() {
                    *zk = rng.sample(StandardNormal);
                }
                let dd = sdt * z[0];
                lev += scx * dd;
                levb += b * scx * dd;
                for (j, (c0, a)) in loads.iter().enumerate() {
                    let cz = c0 + a.iter().zip(&f).map(|(x, y)| x * y.max(0.0)).sum::<f64>();
                    sq[j] = cz.sqrt();
                }
                for j in 0..m {
                    idio[packed(m, j, j)] += sq[j] * sq[j] * dt;
                    for q in j + 1..m {
                        idio[packed(m, j, q)] += cfg.idio_corr * sq[j] * sq[q] * dt;
                    }
                }
                for k in 0..kf {
                    let (v, hit) = cir_step(&p, f[k], dt, z[k]);
                    next[k] = v;
                    out.floor_hits += usize::from(hit);
                }
                for a in 0..kf {
                    let da = next[a] - f[a];
                    for c in a..kf {
                        qv[a * kf + c] += da * (next[c] - f[c]);
                    }
                }
                f.copy_from_slice(&next);
                if let Some(fp) = out.fine.as_mut() {
                    fp.f.extend_from_slice(&f);
                    fp.driver.push(dd);
                }
            }
            out.ivx[bar] = ivx;
            out.ivxb[bar] = ivxb;
            out.ivxbb[bar] = ivxbb;
            out.lev[bar] = lev;
            out.levb[bar] = levb;
        }
        out.f_bars.extend_from_slice(&f);
        out.qv_f = Matrix::from_fn(kf, kf, |a, c| qv[a.min(c) * kf + a.max(c)]);
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.stocks + 1
    }

    /// Column of the market in the panel and in every covariance matrix.
    pub fn market(&self) -> usize {
        self.stocks
    }

    /// Factor values at the start of bar `i` (`i ≤ n_bars`).
    pub fn factors_at(&self, i: usize) -> &[f64] {
        &self.f_bars[i * self.factors..(i + 1) * self.factors]
    }

    pub fn time_of_bar(&self, i: usize) -> f64 {
        i as f64 * self.delta_n
    }

    pub fn idio_var(&self, j: usize, f: &[f64]) -> f64 {
        let (c0, a) = &self.idio_loadings[j];
        c0 + a.iter().zip(f).map(|(x, y)| x * y.max(0.0)).sum::<f64>()
    }

    /// Spot covariance of `(Y₁, …, Y_m, X)` at the start of bar `i`.
    pub fn spot_cov(&self, i: usize) -> Matrix<f64> {
        let f = self.factors_at(i);
        let b = self.beta.at(self.time_of_bar(i));
        let cx = f[0].max(0.0);
        let m = self.stocks;
        let cz: Vec<f64> = (0..m).map(|j| self.idio_var(j, f)).collect();
        Matrix::from_fn(m + 1, m + 1, |r, c| match (r == m, c == m) {
            (true, true) => cx,
            (true, false) | (false, true) => b * cx,
            (false, false) => {
                let rho = if r == c { 1.0 } else { self.idio_corr };
                b * b * cx + rho * (cz[r] * cz[c]).sqrt()
            }
        })
    }

    /// `∫ C_t dt` over bar `i`.
    pub fn integrated_cov(&self, i: usize) -> Matrix<f64> {
        let m = self.stocks;
        let mp = m * (m + 1) / 2;
        let idio = &self.idio[i * mp..(i + 1) * mp];
        Matrix::from_fn(m + 1, m + 1, |r, c| match (r == m, c == m) {
            (true, true) => self.ivx[i],
            (true, false) | (false, true) => self.ivxb[i],
            (false, false) => self.ivxbb[i] + idio[packed(m, r, c)],
        })
    }

    /// Average spot covariance over trading day `day`.
    pub fn daily_average_cov(&self, day: usize) -> Matrix<f64> {
        let d = self.dim();
        let mut acc = Matrix::zeros(d, d);
        for i in day * self.bars_per_day..(day + 1) * self.bars_per_day {
            let c = self.integrated_cov(i);
            for (x, y) in acc.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *x += y;
            }
        }
        acc.scaled(1.0 / (self.bars_per_day as f64 * self.delta_n))
    }

    /// Fine-grid path of factor `k`.
    pub fn fine_factor(&self, k: usize) -> SimResult<Vec<f64>> {
        let fp = self.fine.as_ref().ok_or(SimError::FinePathsMissing)?;
        Ok(fp.f.chunks(self.factors).map(|row| row[k]).collect())
    }

    /// Fine-grid path of `C_Zj`.
    pub fn fine_idio_var(&self, j: usize) -> SimResult<Vec<f64>> {
        let fp = self.fine.as_ref().ok_or(SimError::FinePathsMissing)?;
        Ok(fp.f.chunks(self.factors).map(|row| self.idio_var(j, row)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub asset: usize,
    pub time: f64,
    pub bar: usize,
    pub size: f64,
}

/// Latent state behind one simulated panel.
#[derive(Clone, Debug)]
pub struct LatentPaths {
    pub vol: Arc<VolPath>,
    pub jumps: Vec<JumpEvent>,
    pub replication: u64,
}

impl LatentPaths {
    pub fn jump_count(&self, asset: usize) -> usize {
        self.jumps.iter().filter(|j| j.asset == asset).count()
    }
}

/// Lower Cholesky factor of a packed symmetric `m × m` matrix; tiny or
/// negative pivots are clamped to zero.
fn cholesky_packed(m: usize, a: &[f64], l: &mut [f64]) {
    l.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[packed(m, i, j)];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                l[i * m + i] = s.max(0.0).sqrt();
            } else {
                let p = l[j * m + j];
                l[i * m + j] = if p > 0.0 { s / p } else { 0.0 };
            }
        }
    }
}

/// Draws bar increments of `(Y₁, …, Y_m, X)` given the volatility path:
/// exact conditional Gaussians for the continuous parts plus compound
/// Poisson jumps. Returns the `n × d` increments and the jumps.
pub fn simulate_prices(
    cfg: &SimConfig,
    vol: &VolPath,
    price_rng: &mut impl Rng,
    jump_rng: &mut impl Rng,
) -> SimResult<(Vec<f64>, Vec<JumpEvent>)> {
    let (n, m) = (vol.n_bars, vol.stocks);
    let d = m + 1;
    let mp = m * (m + 1) / 2;
    let rho = vol.leverage;
    let perp = (1.0 - rho * rho).max(0.0).sqrt();
    let mut inc = vec![0.0; n * d];
    let mut l = vec![0.0; m * m];
    let mut z = vec![0.0; m];
    for i in 0..n {
        let l11 = vol.ivx[i].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { vol.ivxb[i] / l11 } else { 0.0 };
        let l22 = (vol.ivxbb[i] - l21 * l21).max(0.0).sqrt();
        let (z1, z2): (f64, f64) = (price_rng.sample(StandardNormal), price_rng.sample(StandardNormal));
        let xc = rho * vol.lev[i] + perp * l11 * z1;
        let bx = rho * vol.levb[i] + perp * (l21 * z1 + l22 * z2);
        cholesky_packed(m, &vol.idio[i * mp..(i + 1) * mp], &mut l);
        for zj in z.iter_mut() {
            *zj = price_rng.sample(StandardNormal);
        }
        let row = &mut inc[i * d..(i + 1) * d];
        for j in 0..m {
            let idio: f64 = (0..=j).map(|k| l[j * m + k] * z[k]).sum();
            row[j] = bx + idio;
        }
        row[m] = xc;
    }
    let mut jumps = Vec::new();
    let span = n as f64 * vol.delta_n;
    let mean = cfg.jump_intensity * span;
    if mean > 0.0 {
        let count = Poisson::new(mean).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let size = Normal::new(0.0, cfg.jump_sd).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        for asset in 0..d {
            let c = count.sample(jump_rng) as usize;
            for _ in 0..c {
                let time = jump_rng.random_range(0.0..span);
                let bar = ((time / vol.delta_n) as usize).min(n - 1);
                let s = size.sample(jump_rng);
                inc[bar * d + asset] += s;
                jumps.push(JumpEvent { asset, time, bar, size: s });
            }
        }
    }
    Ok((inc, jumps))
}

pub fn panel_labels(stocks: usize) -> Vec<String> {
    (1..=stocks).map(|j| format!("Y{j}")).chain(std::iter::once("X".to_string())).collect()
}

/// Assembles the `(Y₁, …, Y_m, X)` panel with the market as the single return factor.
pub fn build_panel(vol: &VolPath, inc: &[f64]) -> SimResult<ReturnPanel<f64>> {
    let n = vol.n_bars;
    let mut day_index = vec![0u32; n + 1];
    for i in 0..n {
        day_index[i + 1] = (i / vol.bars_per_day) as u32;
    }
    Ok(ReturnPanel::from_increments(panel_labels(vol.stocks), inc, vol.delta_n, day_index, 1)?)
}

/// Volatility path used by replication `rep`: shared across replications
/// in fixed-volatility mode.
pub fn simulate_vol(cfg: &SimConfig, rep: u64) -> SimResult<VolPath> {
    let r = if cfg.fixed_vol { 0 } else { rep };
    VolPath::simulate(cfg, &mut stream(cfg.seed, r, VOL_STREAM))
}

/// Replication `rep` on a given volatility path.
pub fn simulate_on(cfg: &SimConfig, vol: Arc<VolPath>, rep: u64) -> SimResult<(ReturnPanel<f64>, LatentPaths)> {
    let (inc, jumps) =
        simulate_prices(cfg, &vol, &mut stream(cfg.seed, rep, PRICE_STREAM), &mut stream(cfg.seed, rep, JUMP_STREAM))?;
    let panel = build_panel(&vol, &inc)?;
    Ok((panel, LatentPaths { vol, jumps, replication: rep }))
}

/// Replication `rep`, simulating its own volatility path unless fixed.
pub fn simulate_replication(cfg: &SimConfig, rep: u64) -> SimResult<(ReturnPanel<f64>, LatentPaths)> {
    let vol = Arc::new(simulate_vol(cfg, rep)?);
    simulate_on(cfg, vol, rep)
}

/// The panel and latent paths for `cfg.seed`.
pub fn simulate_model(cfg: &SimConfig) -> SimResult<(ReturnPanel<f64>, LatentPaths)> {
    simulate_replication(cfg, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{delta_from_minutes, ModelId};

    fn small(model: ModelId) -> SimConfig {
        SimConfig { years: 0.1, store_fine: true, ..SimConfig::new(model, 0.1, delta_from_minutes(5.0), 11) }
    }

    #[test]
    fn packed_indexing() {
        let m = 4;
        let mut seen = vec![false; m * (m + 1) / 2];
        for a in 0..m {
            for b in a..m {
                assert_eq!(packed(m, a, b), packed(m, b, a));
                seen[packed(m, a, b)] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn integrated_cov_sums_spot_cov() {
        let cfg = small(ModelId::Two);
        let vol = simulate_vol(&cfg, 0).unwrap();
        // Bar integrals against a Riemann sum of the bar-start spot matrix.
        let i = 100;
        let a = vol.integrated_cov(i).scaled(1.0 / vol.delta_n);
        let b = vol.spot_cov(i);
        assert!(a.max_abs_diff(&b) < 0.05 * b.frobenius_norm());
        assert_eq!(vol.fine_factor(0).unwrap().len(), vol.fine_steps + 1);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 0.4, 3.0, 0.5, 2.0];
        let mut l = vec![0.0; 9];
        cholesky_packed(3, &a, &mut l);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((s - a[packed(3, i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn panel_shape_and_days() {
        let cfg = small(ModelId::One);
        let (panel, latent) = simulate_model(&cfg).unwrap();
        assert_eq!(panel.dim(), 3);
        assert_eq!(panel.factor_count(), 1);
        assert_eq!(panel.n_increments(), cfg.n_bars());
        assert_eq!(panel.increment_day(78), 1);
        assert_eq!(panel.labels()[2], "X");
        assert_eq!(latent.vol.dim(), 3);
    }
}
