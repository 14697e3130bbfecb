use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

/// Trading days per year.
pub const DAYS_PER_YEAR: f64 = 252.0;
/// Trading seconds per day (09:30 to 16:00).
pub const SECONDS_PER_DAY: f64 = 6.5 * 3600.0;

/// Observation step, in years, for bars of `seconds` seconds.
pub fn delta_from_seconds(seconds: f64) -> f64 {
    seconds / (DAYS_PER_YEAR * SECONDS_PER_DAY)
}

pub fn delta_from_minutes(minutes: f64) -> f64 {
    delta_from_seconds(60.0 * minutes)
}

/// `df = κ(μ − f)dt + σ√f dB`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub kappa: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for CirParams {
    fn default() -> Self {
        Self { kappa: 5.0, mu: 0.09, sigma: 0.35 }
    }
}

impl CirParams {
    pub fn feller(&self) -> bool {
        2.0 * self.kappa * self.mu > self.sigma * self.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelId {
    /// `C_Zj = 0.1 + 1.5 f_{j+1}`: IdioVols independent of each other and of `C_X`.
    One,
    /// `C_Z1 = 0.1 + 0.45 C_X + f₂ + 0.4 f₄`, `C_Z2 = 0.1 + 0.35 C_X + 0.3 f₃ + 0.6 f₄`.
    Two,
}

impl ModelId {
    pub fn from_number(n: u8) -> SimResult<Self> {
        match n {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(SimError::InvalidConfig(format!("unknown model {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }
}

/// `β_t = level + amplitude · sin(frequency · t)`, `t` in years.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaFn {
    pub level: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for BetaFn {
    fn default() -> Self {
        Self { level: 0.5, amplitude: 0.1, frequency: 100.0 }
    }
}

impl BetaFn {
    pub fn at(&self, t: f64) -> f64 {
        self.level + self.amplitude * (self.frequency * t).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub model: ModelId,
    /// Number of stocks; model 2 needs exactly two.
    pub stocks: usize,
    /// Time span in years of 252 trading days.
    pub years: f64,
    /// Observation step in years.
    pub delta_n: f64,
    /// Fine simulation steps per observation.
    pub substeps: usize,
    pub seed: u64,
    /// Correlation between the market Brownian motion and the driver of `C_X`.
    pub leverage: f64,
    pub cir: CirParams,
    /// Jumps per year in each price.
    pub jump_intensity: f64,
    pub jump_sd: f64,
    /// Correlation of the idiosyncratic Brownian motions.
    pub idio_corr: f64,
    pub beta: BetaFn,
    /// Reuse one volatility realization for every replication.
    pub fixed_vol: bool,
    /// Keep the fine-grid factor paths in [`LatentPaths`](crate::LatentPaths).
    pub store_fine: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            model: ModelId::Two,
            stocks: 2,
            years: 10.0,
            delta_n: delta_from_minutes(5.0),
            substeps: 10,
            seed: 0,
            leverage: -0.8,
            cir: CirParams::default(),
            jump_intensity: 2.0,
            jump_sd: 0.02,
            idio_corr: 0.4,
            beta: BetaFn::default(),
            fixed_vol: false,
            store_fine: false,
        }
    }
}

impl SimConfig {
    pub fn new(model: ModelId, years: f64, delta_n: f64, seed: u64) -> Self {
        Self { model, years, delta_n, seed, ..Self::default() }
    }

    pub fn delta_fine(&self) -> f64 {
        self.delta_n / self.substeps as f64
    }

    pub fn bars_per_day(&self) -> usize {
        (1.0 / (DAYS_PER_YEAR * self.delta_n)).round() as usize
    }

    pub fn days(&self) -> usize {
        (self.years * DAYS_PER_YEAR).round() as usize
    }

    pub fn n_bars(&self) -> usize {
        self.days() * self.bars_per_day()
    }

    /// Number of CIR building blocks: `f₁ = C_X` plus one per stock in
    /// model 1, four in model 2.
    pub fn factor_count(&self) -> usize {
        match self.model {
            ModelId::One => (1 + self.stocks).max(4),
            ModelId::Two => 4,
        }
    }

    pub fn validate(&self) -> SimResult<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !self.cir.feller() {
            return bad("CIR parameters violate the Feller condition".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if !(self.delta_n > 0.0 && self.years > 0.0) {
            return bad("delta_n and years must be positive".into());
        }
        let per_day = 1.0 / (DAYS_PER_YEAR * self.delta_n);
        if (per_day - per_day.round()).abs() > 1e-6 || per_day < 2.0 {
            return bad(format!("a trading day must hold a whole number (≥ 2) of bars, got {per_day}"));
        }
        if self.days() == 0 {
            return bad("the span must cover at least one day".into());
        }
        if self.stocks == 0 || (self.model == ModelId::Two && self.stocks != 2) {
            return bad(format!("model {} cannot have {} stocks", self.model.number(), self.stocks));
        }
        if !(self.leverage.abs() <= 1.0) {
            return bad("leverage must lie in [-1, 1]".into());
        }
        let m = self.stocks as f64;
        if !(self.idio_corr < 1.0 && self.idio_corr > -1.0 / (m - 1.0).max(1.0)) {
            return bad(format!("idiosyncratic correlation {} is not positive definite", self.idio_corr));
        }
        if !(self.jump_intensity >= 0.0 && self.jump_sd >= 0.0) {
            return bad("jump parameters must be nonnegative".into());
        }
        Ok(())
    }

    /// Intercept and loadings of each `C_Zj` on `(f₁, …, f_K)`.
    pub fn idio_loadings(&self) -> Vec<(f64, Vec<f64>)> {
        let k = self.factor_count();
        match self.model {
            ModelId::One => (0..self.stocks)
                .map(|j| {
                    let mut a = vec![0.0; k];
                    a[j + 1] = 1.5;
                    (0.1, a)
                })
                .collect(),
            ModelId::Two => vec![(0.1, vec![0.45, 1.0, 0.0, 0.4]), (0.1, vec![0.35, 0.0, 0.3, 0.6])],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let c = SimConfig::default();
        assert_eq!(c.bars_per_day(), 78);
        assert_eq!(c.n_bars(), 2520 * 78);
        assert!(c.cir.feller());
        c.validate().unwrap();
        let one = SimConfig { model: ModelId::One, stocks: 10, ..SimConfig::default() };
        assert_eq!(one.factor_count(), 11);
        one.validate().unwrap();
        assert_eq!(SimConfig { delta_n: delta_from_seconds(30.0), ..c }.bars_per_day(), 780);
    }

    #[test]
    fn rejects_bad_configs() {
        let c = SimConfig { cir: CirParams { sigma: 2.0, ..CirParams::default() }, ..SimConfig::default() };
        assert!(c.validate().is_err());
        assert!(SimConfig { stocks: 3, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { delta_n: 0.0013, ..SimConfig::default() }.validate().is_err());
    }
}
