//! Estimator tuning parameters and their flat key/value file format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the "no volatility jump" events `A_i` are decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolJumpRule {
    /// Any asset whose spot variance moves by at least `vol_jump_abs`.
    DiagonalVariance,
    /// Any asset whose spot volatility moves by at least `sqrt(vol_jump_abs)`
    /// (0.01 in variance units is 10 volatility points).
    DiagonalVolatility,
    /// Frobenius norm of the matrix change against `Δₙ^ϖ′`.
    Frobenius,
}

/// What is discarded when an increment exceeds its asset's threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRule {
    /// Drop the whole increment vector if any component trips.
    #[default]
    Vector,
    /// Zero only the components that trip.
    Componentwise,
}

/// Tuning parameters shared by the spot, quadratic covariation and
/// asymptotic-variance estimators. Time is measured in years.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub delta_n: f64,
    /// Window scale; `k_n = ceil(theta / sqrt(delta_n))`.
    pub theta: f64,
    /// Price-truncation exponent.
    pub varpi: f64,
    pub trunc_mult: f64,
    /// Disables price-jump truncation entirely when false.
    pub price_trunc_enabled: bool,
    #[serde(default)]
    pub trunc_rule: TruncationRule,
    pub varpi_prime: f64,
    pub vol_jump_abs: f64,
    pub vol_jump_rule: VolJumpRule,
    pub r_jump_activity: f64,
    pub vol_trunc_enabled: bool,
    /// Forbid estimation windows that straddle a day boundary.
    pub forbid_day_spanning: bool,
}

/// Five-minute bars on a 252-day, 6.5-hour trading year.
pub const FIVE_MINUTES: f64 = 1.0 / (252.0 * 6.5 * 12.0);

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            delta_n: FIVE_MINUTES,
            theta: 2.5,
            varpi: 0.49,
            trunc_mult: 3.0,
            price_trunc_enabled: true,
            trunc_rule: TruncationRule::Vector,
            varpi_prime: 0.1,
            vol_jump_abs: 0.01,
            vol_jump_rule: VolJumpRule::DiagonalVolatility,
            r_jump_activity: 0.0,
            vol_trunc_enabled: false,
            forbid_day_spanning: false,
        }
    }
}

impl EstimatorConfig {
    pub fn with_delta_theta(delta_n: f64, theta: f64) -> Self {
        Self { delta_n, theta, ..Self::default() }
    }

    /// Local window length `k_n = ⌈θ Δₙ^{-1/2}⌉`.
    pub fn k_n(&self) -> usize {
        (self.theta / self.delta_n.sqrt()).ceil() as usize
    }

    /// `θ` implied by the rounded window, `k_n Δₙ^{1/2}`.
    pub fn effective_theta(&self) -> f64 {
        self.k_n() as f64 * self.delta_n.sqrt()
    }

    /// Threshold used by the asymptotic (Frobenius) volatility-jump rule.
    pub fn asymptotic_vol_threshold(&self) -> f64 {
        self.delta_n.powf(self.varpi_prime)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.delta_n > 0.0 && self.delta_n.is_finite()) {
            return bad(format!("delta_n must be positive, got {}", self.delta_n));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if !(self.varpi > 0.0 && self.varpi < 0.5) {
            return bad(format!("varpi must lie in (0, 1/2), got {}", self.varpi));
        }
        if !(self.trunc_mult > 0.0) {
            return bad(format!("trunc_mult must be positive, got {}", self.trunc_mult));
        }
        if !(self.r_jump_activity >= 0.0 && self.r_jump_activity < 0.5) {
            return bad(format!("r_jump_activity must lie in [0, 1/2), got {}", self.r_jump_activity));
        }
        if !(self.vol_jump_abs > 0.0) {
            return bad(format!("vol_jump_abs must be positive, got {}", self.vol_jump_abs));
        }
        if self.vol_trunc_enabled {
            let upper = (0.5 - self.r_jump_activity).min(0.125);
            if !(self.varpi_prime > 0.0 && self.varpi_prime < upper) {
                return bad(format!("varpi_prime must lie in (0, {upper}), got {}", self.varpi_prime));
            }
            let lower = (2.0 * self.varpi_prime + 9.0) / (4.0 * (5.0 - self.r_jump_activity));
            if self.varpi <= lower {
                return bad(format!("varpi must exceed {lower:.4} when volatility truncation is on, got {}", self.varpi));
            }
        }
        if self.k_n() < 2 {
            return bad(format!("k_n = {} must be at least 2", self.k_n()));
        }
        Ok(())
    }

    /// Checks the window against a panel with `increments` returns.
    pub fn validate_for(&self, increments: usize) -> Result<()> {
        self.validate()?;
        let k = self.k_n();
        if 4 * k >= increments {
            return Err(Error::PanelTooShort { increments, k_n: k });
        }
        Ok(())
    }

    /// Stable 64-bit fingerprint of every field (FNV-1a over the key/value text).
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_kv_string().as_bytes())
    }

    /// Serializes to `key = value` lines, one per field.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        // `{:?}` on f64 prints the shortest representation that round-trips.
        let _ = writeln!(s, "delta_n = {:?}", self.delta_n);
        let _ = writeln!(s, "theta = {:?}", self.theta);
        let _ = writeln!(s, "varpi = {:?}", self.varpi);
        let _ = writeln!(s, "trunc_mult = {:?}", self.trunc_mult);
        let _ = writeln!(s, "price_trunc_enabled = {}", self.price_trunc_enabled);
        let trunc_rule = match self.trunc_rule {
            TruncationRule::Vector => "vector",
            TruncationRule::Componentwise => "componentwise",
        };
        let _ = writeln!(s, "trunc_rule = \"{trunc_rule}\"");
        let _ = writeln!(s, "varpi_prime = {:?}", self.varpi_prime);
        let _ = writeln!(s, "vol_jump_abs = {:?}", self.vol_jump_abs);
        let rule = match self.vol_jump_rule {
            VolJumpRule::DiagonalVariance => "diagonal_variance",
            VolJumpRule::DiagonalVolatility => "diagonal_volatility",
            VolJumpRule::Frobenius => "frobenius",
        };
        let _ = writeln!(s, "vol_jump_rule = \"{rule}\"");
        let _ = writeln!(s, "r_jump_activity = {:?}", self.r_jump_activity);
        let _ = writeln!(s, "vol_trunc_enabled = {}", self.vol_trunc_enabled);
        let _ = writeln!(s, "forbid_day_spanning = {}", self.forbid_day_spanning);
        s
    }

    /// Parses the key/value format. Missing keys take their defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid_and_window_is_rounded_up() {
        let cfg = EstimatorConfig::default();
        cfg.validate().unwrap();
        // 2.5 / sqrt(1/19656) = 350.499..
        assert_eq!(cfg.k_n(), 351);
    }

    #[test]
    fn window_condition_enforced_when_vol_truncation_on() {
        let cfg = EstimatorConfig { vol_trunc_enabled: true, varpi: 0.45, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = EstimatorConfig { vol_trunc_enabled: true, varpi_prime: 0.2, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn short_panel_is_rejected() {
        let cfg = EstimatorConfig::with_delta_theta(0.01, 1.0);
        assert_eq!(cfg.k_n(), 10);
        assert!(matches!(cfg.validate_for(40), Err(Error::PanelTooShort { .. })));
        cfg.validate_for(41).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(EstimatorConfig::from_kv_str("thetta = 2.0").is_err());
    }

    proptest! {
        #[test]
        fn kv_round_trip_is_bit_exact(
            delta in 1e-8f64..1e-2, theta in 0.01f64..10.0, varpi in 0.01f64..0.49,
            mult in 0.1f64..10.0, vp in 0.001f64..0.12, abs in 1e-6f64..1.0,
            rule in 0u8..3, vt: bool, pt: bool, span: bool, cw: bool,
        ) {
            let cfg = EstimatorConfig {
                delta_n: delta, theta, varpi, trunc_mult: mult, price_trunc_enabled: pt,
                trunc_rule: if cw { TruncationRule::Componentwise } else { TruncationRule::Vector },
                varpi_prime: vp, vol_jump_abs: abs,
                vol_jump_rule: [VolJumpRule::DiagonalVariance, VolJumpRule::DiagonalVolatility, VolJumpRule::Frobenius][rule as usize],
                r_jump_activity: 0.0, vol_trunc_enabled: vt, forbid_day_spanning: span,
            };
            let back = EstimatorConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
            prop_assert_eq!(back.delta_n.to_bits(), cfg.delta_n.to_bits());
            prop_assert_eq!(back.theta.to_bits(), cfg.theta.to_bits());
            prop_assert_eq!(back.vol_jump_abs.to_bits(), cfg.vol_jump_abs.to_bits());
            prop_assert_eq!(back, cfg);
        }
    }
}
