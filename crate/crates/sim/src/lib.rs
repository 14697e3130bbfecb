//! Stochastic-volatility Monte Carlo for the `covol` estimators.
//!
//! Four CIR factors drive the market variance and the idiosyncratic
//! variances of the stocks; prices follow a one-factor return model with a
//! time-varying beta, leverage on the market and compound-Poisson jumps.
//! Every simulated panel comes with its latent paths, from which the
//! [`oracle`] module computes the true values of each estimand.

pub mod cir;
pub mod config;
pub mod error;
pub mod mc;
pub mod model;
pub mod oracle;

pub use config::{delta_from_minutes, delta_from_seconds, BetaFn, CirParams, ModelId, SimConfig};
pub use error::{SimError, SimResult};
pub use model::{simulate_model, simulate_replication, LatentPaths, VolPath};
pub use oracle::{oracle_quadcov, LatentFunctional, TrueQuantities};
