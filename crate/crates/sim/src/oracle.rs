//! True values of the estimands, computed from the latent paths.

use covol::{Functional, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::model::VolPath;

/// `Σ ΔH ΔG` over a common grid.
pub fn oracle_quadcov(h: &[f64], g: &[f64]) -> SimResult<f64> {
    if h.len() != g.len() {
        return Err(SimError::GridMismatch { left: h.len(), right: g.len() });
    }
    Ok(h.windows(2).zip(g.windows(2)).map(|(a, b)| (a[1] - a[0]) * (b[1] - b[0])).sum())
}

/// The latent volatilities the estimands are built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentFunctional {
    /// `C_X`, the spot variance of the market.
    MarketVariance,
    /// `C_Zj`, the idiosyncratic variance of stock `j`.
    IdioVol(usize),
}

impl LatentFunctional {
    /// Loadings on `(f₁, …, f_K)`; every latent volatility is affine in the factors.
    pub fn loadings(&self, vol: &VolPath) -> Vec<f64> {
        match *self {
            Self::MarketVariance => {
                let mut a = vec![0.0; vol.factors];
                a[0] = 1.0;
                a
            }
            Self::IdioVol(j) => vol.idio_loadings[j].1.clone(),
        }
    }

    /// `u` with `∂F/∂C = u uᵀ` at a spot matrix whose market beta is `beta`.
    pub fn direction(&self, vol: &VolPath, beta: f64) -> Vec<f64> {
        let mut u = vec![0.0; vol.dim()];
        match *self {
            Self::MarketVariance => u[vol.market()] = 1.0,
            Self::IdioVol(j) => {
                u[j] = 1.0;
                u[vol.market()] = -beta;
            }
        }
        u
    }

    /// The matching estimator functional on the simulated panel.
    pub fn functional(&self, stocks: usize) -> covol::Result<Functional<f64>> {
        let d = stocks + 1;
        match *self {
            Self::MarketVariance => Functional::entry(d, stocks, stocks),
            Self::IdioVol(j) => Functional::idiovol(d, j, &[stocks]),
        }
    }
}

/// `[A, B]` over the fine grid, from the factor quadratic covariation.
pub fn latent_quadcov(vol: &VolPath, a: LatentFunctional, b: LatentFunctional) -> f64 {
    let (la, lb) = (a.loadings(vol), b.loadings(vol));
    vol.qv_f.quad_form(&la, &lb).expect("loadings have K entries")
}

/// Factor-model quantities for stocks `j`, `s` with `Π = C_X`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueQuantities {
    pub qv_xx: f64,
    pub qv_xj: f64,
    pub qv_xs: f64,
    pub qv_jj: f64,
    pub qv_ss: f64,
    pub qv_js: f64,
    pub gamma_j: f64,
    pub gamma_s: f64,
    pub r2_j: f64,
    pub corr: f64,
    pub resid_js: f64,
    pub corr_resid: f64,
}

impl TrueQuantities {
    pub fn new(vol: &VolPath, j: usize, s: usize) -> Self {
        use LatentFunctional::*;
        let q = |a, b| latent_quadcov(vol, a, b);
        let (xx, xj, xs) = (q(MarketVariance, MarketVariance), q(MarketVariance, IdioVol(j)), q(MarketVariance, IdioVol(s)));
        let (jj, ss, js) = (q(IdioVol(j), IdioVol(j)), q(IdioVol(s), IdioVol(s)), q(IdioVol(j), IdioVol(s)));
        let (gj, gs) = (xj / xx, xs / xx);
        let rjj = jj - gj * gj * xx;
        let rss = ss - gs * gs * xx;
        let rjs = js - gj * gs * xx;
        Self {
            qv_xx: xx,
            qv_xj: xj,
            qv_xs: xs,
            qv_jj: jj,
            qv_ss: ss,
            qv_js: js,
            gamma_j: gj,
            gamma_s: gs,
            r2_j: xj * xj / (xx * jj),
            corr: js / (jj * ss).sqrt(),
            resid_js: rjs,
            corr_resid: rjs / (rjj * rss).sqrt(),
        }
    }
}

/// Riemann sum over the observation grid of the asymptotic covariance
/// `Σ_T` of the estimators of `[H_r, G_r]` for the listed pairs.
pub fn sigma_oracle(vol: &VolPath, pairs: &[(LatentFunctional, LatentFunctional)], theta: f64) -> Matrix<f64> {
    let kappa = pairs.len();
    let mut fs: Vec<LatentFunctional> = Vec::new();
    for &(h, g) in pairs {
        for f in [h, g] {
            if !fs.contains(&f) {
                fs.push(f);
            }
        }
    }
    let idx = |f: LatentFunctional| fs.iter().position(|&x| x == f).expect("listed");
    let loads: Vec<Vec<f64>> = fs.iter().map(|f| f.loadings(vol)).collect();
    let nf = fs.len();
    let s2 = vol.cir.sigma * vol.cir.sigma;
    let (c1, c2, c3) = (6.0 / theta.powi(3), 151.0 * theta / 140.0, 1.5 / theta);
    let mut acc = vec![0.0; kappa * kappa];
    let mut cc = vec![0.0; nf * nf];
    let mut cb = vec![0.0; nf * nf];
    for i in 0..vol.n_bars {
        let c = vol.spot_cov(i);
        let beta = vol.beta.at(vol.time_of_bar(i));
        let f = vol.factors_at(i);
        let us: Vec<Vec<f64>> = fs.iter().map(|x| x.direction(vol, beta)).collect();
        for a in 0..nf {
            for b in 0..nf {
                let q = c.quad_form(&us[a], &us[b]).expect("direction has d entries");
                cc[a * nf + b] = 2.0 * q * q;
                cb[a * nf + b] = (0..vol.factors).map(|k| loads[a][k] * loads[b][k] * s2 * f[k].max(0.0)).sum();
            }
        }
        for (r, &(hr, gr)) in pairs.iter().enumerate() {
            for (s, &(hs, gs)) in pairs.iter().enumerate() {
                let (hr, gr, hs, gs) = (idx(hr), idx(gr), idx(hs), idx(gs));
                let at = |m: &[f64], a: usize, b: usize| m[a * nf + b];
                let t1 = at(&cc, hr, hs) * at(&cc, gr, gs) + at(&cc, gr, hs) * at(&cc, hr, gs);
                let t2 = at(&cb, hr, hs) * at(&cb, gr, gs) + at(&cb, gr, hs) * at(&cb, hr, gs);
                let t3 = at(&cc, hr, hs) * at(&cb, gr, gs)
                    + at(&cc, gr, gs) * at(&cb, hr, hs)
                    + at(&cc, hr, gs) * at(&cb, gr, hs)
                    + at(&cc, gr, hs) * at(&cb, hr, gs);
                acc[r * kappa + s] += (c1 * t1 + c2 * t2 + c3 * t3) * vol.delta_n;
            }
        }
    }
    Matrix::from_row_major(kappa, kappa, acc).expect("κ × κ")
}

/// Riemann approximation `∫ d⟨A, B⟩/dt dt` of the latent quadratic
/// covariation, `σ² Σ_k a_k b_k ∫ f_k`.
pub fn quadcov_riemann(vol: &VolPath, a: LatentFunctional, b: LatentFunctional) -> f64 {
    let (la, lb) = (a.loadings(vol), b.loadings(vol));
    let s2 = vol.cir.sigma * vol.cir.sigma;
    (0..vol.n_bars)
        .map(|i| {
            let f = vol.factors_at(i);
            (0..vol.factors).map(|k| la[k] * lb[k] * s2 * f[k].max(0.0)).sum::<f64>() * vol.delta_n
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_path_has_zero_quadcov() {
        assert_eq!(oracle_quadcov(&[1.0; 10], &[2.0; 10]).unwrap(), 0.0);
        assert!(matches!(oracle_quadcov(&[1.0; 3], &[1.0; 4]), Err(SimError::GridMismatch { left: 3, right: 4 })));
        assert_eq!(oracle_quadcov(&[0.0, 1.0, 3.0], &[0.0, 2.0, 1.0]).unwrap(), 2.0 - 2.0);
    }
}
