use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Synchronized log-price grid for `d` assets.
///
/// `log_prices` has `n + 1` rows. `day_index[k]` is the trading day of the
/// increment ending at row `k` (`day_index[0]` repeats `day_index[1]`).
/// The last `factor_count` columns are the return factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel<T> {
    labels: Vec<String>,
    log_prices: Matrix<T>,
    delta_n: T,
    day_index: Vec<u32>,
    factor_count: usize,
}

impl<T: Scalar> ReturnPanel<T> {
    pub fn new(
        labels: Vec<String>,
        log_prices: Matrix<T>,
        delta_n: T,
        day_index: Vec<u32>,
        factor_count: usize,
    ) -> Result<Self> {
        let d = log_prices.cols();
        if d == 0 || labels.len() != d {
            return Err(Error::DimensionMismatch { expected: d.max(1), found: labels.len() });
        }
        if factor_count > d {
            return Err(Error::DimensionMismatch { expected: d, found: factor_count });
        }
        if log_prices.rows() < 2 {
            return Err(Error::TooFewObservations { needed: 2, found: log_prices.rows() });
        }
        if day_index.len() != log_prices.rows() {
            return Err(Error::DimensionMismatch { expected: log_prices.rows(), found: day_index.len() });
        }
        if day_index.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("day index must be nondecreasing".into()));
        }
        if !(delta_n > T::zero()) || !delta_n.is_finite() {
            return Err(Error::Domain("delta_n must be positive".into()));
        }
        if log_prices.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("log prices must be finite".into()));
        }
        Ok(Self { labels, log_prices, delta_n, day_index, factor_count })
    }

    /// Single-day panel from log prices with no factor columns.
    pub fn from_log_prices(labels: Vec<String>, log_prices: Matrix<T>, delta_n: T) -> Result<Self> {
        let rows = log_prices.rows();
        Self::new(labels, log_prices, delta_n, vec![0; rows], 0)
    }

    /// Builds the price grid by cumulating an `n × d` row-major increment array from zero.
    pub fn from_increments(
        labels: Vec<String>,
        increments: &[T],
        delta_n: T,
        day_index: Vec<u32>,
        factor_count: usize,
    ) -> Result<Self> {
        let d = labels.len();
        if d == 0 || increments.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, found: increments.len() });
        }
        let n = increments.len() / d;
        let mut data = vec![T::zero(); (n + 1) * d];
        for i in 0..n {
            for a in 0..d {
                data[(i + 1) * d + a] = data[i * d + a] + increments[i * d + a];
            }
        }
        Self::new(labels, Matrix::from_row_major(n + 1, d, data)?, delta_n, day_index, factor_count)
    }

    pub fn with_factor_count(mut self, factor_count: usize) -> Result<Self> {
        if factor_count > self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: factor_count });
        }
        self.factor_count = factor_count;
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn log_prices(&self) -> &Matrix<T> {
        &self.log_prices
    }

    pub fn delta_n(&self) -> T {
        self.delta_n
    }

    pub fn day_index(&self) -> &[u32] {
        &self.day_index
    }

    pub fn factor_count(&self) -> usize {
        self.factor_count
    }

    pub fn dim(&self) -> usize {
        self.log_prices.cols()
    }

    pub fn stock_count(&self) -> usize {
        self.dim() - self.factor_count
    }

    /// Column indices of the return factors.
    pub fn factor_columns(&self) -> Vec<usize> {
        (self.stock_count()..self.dim()).collect()
    }

    /// Number of increments `n`.
    pub fn n_increments(&self) -> usize {
        self.log_prices.rows() - 1
    }

    /// `n × d` row-major increments `Y_i − Y_{i−1}`.
    pub fn increments(&self) -> Vec<T> {
        let d = self.dim();
        let p = self.log_prices.as_slice();
        (0..self.n_increments() * d).map(|k| p[k + d] - p[k]).collect()
    }

    /// Day of increment `i` (0-based).
    pub fn increment_day(&self, i: usize) -> u32 {
        self.day_index[i + 1]
    }

    /// Restricts the panel to the given columns, keeping the order given.
    pub fn select_columns(&self, cols: &[usize], factor_count: usize) -> Result<Self> {
        let d = self.dim();
        if let Some(&bad) = cols.iter().find(|&&c| c >= d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad + 1 });
        }
        let rows: Vec<usize> = (0..self.log_prices.rows()).collect();
        let labels = cols.iter().map(|&c| self.labels[c].clone()).collect();
        Self::new(labels, self.log_prices.select(&rows, cols), self.delta_n, self.day_index.clone(), factor_count)
    }
}
