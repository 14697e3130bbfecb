//! Estimators of quadratic covariations between smooth functionals of the
//! spot covariance matrix of a high-frequency return panel.
//!
//! The usual flow is panel → [`spot::estimate_spot_path`] →
//! [`spot::detect_vol_jump_events`] → [`quadcov`] estimates → [`avar`] and
//! [`inference`]. [`factors`] combines blocks of estimates into loadings,
//! correlations and R² for idiosyncratic-volatility factor models.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision to `f64`.

pub mod avar;
pub mod config;
pub mod error;
pub mod factors;
pub mod functional;
pub mod inference;
pub mod matrix;
pub mod panel;
pub mod quadcov;
mod reduce;
pub mod scalar;
pub mod spot;

pub use config::{EstimatorConfig, TruncationRule, VolJumpRule};
pub use error::{Error, Result};
pub use functional::{ComposeOp, Functional, Operand};
pub use matrix::Matrix;
pub use panel::ReturnPanel;
pub use quadcov::{FunctionalTrack, Method, QuadCovEstimate};
pub use scalar::Scalar;
pub use spot::{SpotCovPath, VolJumpMask};

pub type Matrix64 = Matrix<f64>;
pub type Functional64 = Functional<f64>;
pub type ReturnPanel64 = ReturnPanel<f64>;
pub type SpotCovPath64 = SpotCovPath<f64>;
pub type FunctionalTrack64 = FunctionalTrack<f64>;
pub type QuadCovEstimate64 = QuadCovEstimate<f64>;
pub type AvarMatrix64 = avar::AvarMatrix<f64>;
pub type IdioVolModelSpec64 = factors::IdioVolModelSpec<f64>;
pub type QuadCovSystem64 = factors::QuadCovSystem<f64>;

/// A spot path plus the volatility-jump mask the estimators should use.
///
/// The mask is only applied when `vol_trunc_enabled` or
/// `forbid_day_spanning` is set in the configuration.
#[derive(Clone, Debug)]
pub struct SpotContext<T> {
    pub path: SpotCovPath<T>,
    pub mask: Option<VolJumpMask>,
}

impl<T: Scalar> SpotContext<T> {
    pub fn from_panel(panel: &ReturnPanel<T>, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate_for(panel.n_increments())?;
        let path = spot::estimate_spot_path(panel, cfg)?;
        let mask = if cfg.vol_trunc_enabled || cfg.forbid_day_spanning {
            Some(spot::detect_vol_jump_events(&path, cfg))
        } else {
            None
        };
        Ok(Self { path, mask })
    }

    pub fn mask(&self) -> Option<&VolJumpMask> {
        self.mask.as_ref()
    }
}
