//! Factor-model quantities built from a matrix of quadratic-covariation
//! estimates between idiosyncratic volatilities and IdioVol factors.

use serde::{Deserialize, Serialize};

use crate::avar::{sigma_matrix_tracks, AvarMatrix};
use crate::config::{EstimatorConfig, TruncationRule};
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::matrix::Matrix;
use crate::panel::ReturnPanel;
use crate::quadcov::{qc_tracks, FunctionalTrack, Method, QuadCovEstimate};
use crate::scalar::Scalar;
use crate::spot::{SpotCovPath, TruncationThresholds, VolJumpMask};

/// Stock `j` regressed on return factors, and the IdioVol factors `Π`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdioVolModelSpec<T> {
    pub stock: usize,
    pub factors: Vec<usize>,
    pub idiovol_factors: Vec<Functional<T>>,
}

impl<T: Scalar> IdioVolModelSpec<T> {
    /// IdioVol factors default to the variances of the return factors.
    pub fn new(dim: usize, stock: usize, factors: &[usize]) -> Result<Self> {
        let pis = factors.iter().map(|&f| Functional::entry(dim, f, f)).collect::<Result<_>>()?;
        Self::with_idiovol_factors(dim, stock, factors, pis)
    }

    pub fn with_idiovol_factors(dim: usize, stock: usize, factors: &[usize], pis: Vec<Functional<T>>) -> Result<Self> {
        if pis.is_empty() {
            return Err(Error::Domain("at least one IdioVol factor is required".into()));
        }
        if let Some(p) = pis.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: p.dim() });
        }
        Functional::<T>::idiovol(dim, stock, factors)?;
        Ok(Self { stock, factors: factors.to_vec(), idiovol_factors: pis })
    }

    pub fn idiovol(&self) -> Functional<T> {
        let dim = self.idiovol_factors[0].dim();
        Functional::idiovol(dim, self.stock, &self.factors).expect("validated at construction")
    }
}

/// Estimated symmetric matrix `Q[a][b] = [F_a, F_b]ᶜ` for a list of
/// functionals, with `Σ̂` over its upper triangle when the method allows it.
#[derive(Clone, Debug)]
pub struct QuadCovSystem<T> {
    names: Vec<String>,
    q: Matrix<T>,
    pairs: Vec<(usize, usize)>,
    estimates: Vec<QuadCovEstimate<T>>,
    avar: Option<AvarMatrix<T>>,
    delta_n: T,
    method: Method,
}

/// A derived scalar and its gradient with respect to the entries of `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct Derived<T> {
    pub value: T,
    pub grad: Matrix<T>,
}

impl<T: Scalar> Derived<T> {
    fn entry(k: usize, a: usize, b: usize, q: &Matrix<T>) -> Self {
        let mut grad = Matrix::zeros(k, k);
        grad[(a, b)] = T::one();
        Self { value: q[(a, b)], grad }
    }

    fn lin(&self, a: T, other: &Self, b: T) -> Self {
        let k = self.grad.rows();
        Self {
            value: a * self.value + b * other.value,
            grad: Matrix::from_fn(k, k, |r, c| a * self.grad[(r, c)] + b * other.grad[(r, c)]),
        }
    }

    /// `x / sqrt(y z)`.
    fn corr(x: &Self, y: &Self, z: &Self) -> Self {
        let k = x.grad.rows();
        let s = (y.value * z.value).sqrt();
        let value = x.value / s;
        let half = T::lit(0.5);
        let gy = -half * value / y.value;
        let gz = -half * value / z.value;
        let grad = Matrix::from_fn(k, k, |r, c| x.grad[(r, c)] / s + gy * y.grad[(r, c)] + gz * z.grad[(r, c)]);
        Self { value, grad }
    }

    fn ratio(x: &Self, y: &Self) -> Self {
        let k = x.grad.rows();
        let value = x.value / y.value;
        let grad = Matrix::from_fn(k, k, |r, c| (x.grad[(r, c)] - value * y.grad[(r, c)]) / y.value);
        Self { value, grad }
    }
}

/// A derived estimate with its delta-method variance (`None` for the naive
/// method or when `Σ̂` was not requested).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedEstimate<T> {
    pub value: T,
    pub avar: Option<T>,
}

impl<T: Scalar> QuadCovSystem<T> {
    /// Estimates every `[F_a, F_b]ᶜ` (`a ≤ b`) and, for AN/LIN when
    /// `with_avar` is set, `Σ̂` over the same list of pairs.
    pub fn estimate(
        functionals: &[Functional<T>],
        path: &SpotCovPath<T>,
        mask: Option<&VolJumpMask>,
        method: Method,
        with_avar: bool,
    ) -> Result<Self> {
        let tracks: Vec<FunctionalTrack<T>> =
            functionals.iter().map(|f| FunctionalTrack::new(f, path)).collect::<Result<_>>()?;
        let refs: Vec<&FunctionalTrack<T>> = tracks.iter().collect();
        Self::from_tracks(&refs, path, mask, method, with_avar)
    }

    pub fn from_tracks(
        tracks: &[&FunctionalTrack<T>],
        path: &SpotCovPath<T>,
        mask: Option<&VolJumpMask>,
        method: Method,
        with_avar: bool,
    ) -> Result<Self> {
        let k = tracks.len();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
        let mut q = Matrix::zeros(k, k);
        let mut estimates = Vec::with_capacity(pairs.len());
        for &(a, b) in &pairs {
            let e = qc_tracks(method, tracks[a], tracks[b], path, mask)?;
            q[(a, b)] = e.value;
            q[(b, a)] = e.value;
            estimates.push(e);
        }
        let avar = if with_avar && method != Method::Naive {
            Some(sigma_matrix_tracks(tracks, &pairs, path, mask)?)
        } else {
            None
        };
        Ok(Self {
            names: tracks.iter().map(|t| t.name().to_string()).collect(),
            q,
            pairs,
            estimates,
            avar,
            delta_n: path.delta_n(),
            method,
        })
    }

    /// Builds a system directly from a symmetric `Q` (no `Σ̂`).
    pub fn from_matrix(q: Matrix<T>, delta_n: T, method: Method) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::DimensionMismatch { expected: q.rows(), found: q.cols() });
        }
        let k = q.rows();
        let pairs = (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
        Ok(Self { names: (0..k).map(|a| format!("F{a}")).collect(), q, pairs, estimates: Vec::new(), avar: None, delta_n, method })
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn delta_n(&self) -> T {
        self.delta_n
    }

    pub fn avar(&self) -> Option<&AvarMatrix<T>> {
        self.avar.as_ref()
    }

    /// Upper-triangle pairs, in the order used by `Σ̂`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn estimate_for(&self, a: usize, b: usize) -> Option<&QuadCovEstimate<T>> {
        let (a, b) = (a.min(b), a.max(b));
        self.pairs.iter().position(|&p| p == (a, b)).and_then(|i| self.estimates.get(i))
    }

    pub fn pair_index(&self, a: usize, b: usize) -> usize {
        let (a, b) = (a.min(b), a.max(b));
        self.pairs.iter().position(|&p| p == (a, b)).expect("index within system")
    }

    /// Folds a gradient over the full `Q` onto its upper-triangle entries.
    pub fn fold(&self, grad: &Matrix<T>) -> Vec<T> {
        self.pairs
            .iter()
            .map(|&(a, b)| if a == b { grad[(a, a)] } else { grad[(a, b)] + grad[(b, a)] })
            .collect()
    }

    /// Delta-method variance `gᵀ Σ̂ g` of a derived quantity.
    pub fn delta_var(&self, d: &Derived<T>) -> Option<T> {
        let avar = self.avar.as_ref()?;
        avar.sigma.quad_form(&self.fold(&d.grad), &self.fold(&d.grad)).ok()
    }

    fn finish(&self, d: Derived<T>) -> DerivedEstimate<T> {
        DerivedEstimate { avar: self.delta_var(&d), value: d.value }
    }

    pub fn entry(&self, a: usize, b: usize) -> Derived<T> {
        Derived::entry(self.q.rows(), a, b, &self.q)
    }

    /// `γ = W⁻¹ y` with `W = Q[Π,Π]`, `y = Q[Π, z]`, and gradients of each `γ_k`.
    pub fn gamma(&self, pis: &[usize], z: usize) -> Result<Vec<Derived<T>>> {
        let k = self.q.rows();
        let w = self.q.select(pis, pis);
        let lu = w.lu().map_err(|_| Error::SingularFactorQuadCov)?;
        let y: Vec<T> = pis.iter().map(|&p| self.q[(p, z)]).collect();
        let gamma = lu.solve(&y)?;
        let mut out = Vec::with_capacity(pis.len());
        for kk in 0..pis.len() {
            let mut e = vec![T::zero(); pis.len()];
            e[kk] = T::one();
            let row = lu.solve_transposed(&e)?;
            let mut grad = Matrix::zeros(k, k);
            for (p, &pp) in pis.iter().enumerate() {
                grad[(pp, z)] = grad[(pp, z)] + row[p];
                for (q, &pq) in pis.iter().enumerate() {
                    grad[(pp, pq)] = grad[(pp, pq)] - row[p] * gamma[q];
                }
            }
            out.push(Derived { value: gamma[kk], grad });
        }
        Ok(out)
    }

    /// `γ_jᵀ W γ_s`, the part of `[z_j, z_s]` explained by `Π`.
    pub fn common(&self, pis: &[usize], zj: usize, zs: usize) -> Result<Derived<T>> {
        let k = self.q.rows();
        let w = self.q.select(pis, pis);
        let lu = w.lu().map_err(|_| Error::SingularFactorQuadCov)?;
        let yj: Vec<T> = pis.iter().map(|&p| self.q[(p, zj)]).collect();
        let ys: Vec<T> = pis.iter().map(|&p| self.q[(p, zs)]).collect();
        let gj = lu.solve_transposed(&yj)?; // W⁻ᵀ y_j
        let gs = lu.solve(&ys)?; // W⁻¹ y_s
        let gamma_j = lu.solve(&yj)?;
        // Evaluated as γ_jᵀ W γ_s; with symmetric W this equals y_jᵀ W⁻¹ y_s,
        // whose partials are below.
        let value = w.quad_form(&gamma_j, &gs)?;
        let mut grad = Matrix::zeros(k, k);
        for (p, &pp) in pis.iter().enumerate() {
            grad[(pp, zj)] = grad[(pp, zj)] + gs[p];
            grad[(pp, zs)] = grad[(pp, zs)] + gj[p];
            for (q, &pq) in pis.iter().enumerate() {
                grad[(pp, pq)] = grad[(pp, pq)] - gj[p] * gs[q];
            }
        }
        Ok(Derived { value, grad })
    }

    /// `[z_j, z_s] − γ_jᵀ W γ_s`.
    pub fn resid(&self, pis: &[usize], zj: usize, zs: usize) -> Result<Derived<T>> {
        let c = self.common(pis, zj, zs)?;
        Ok(self.entry(zj, zs).lin(T::one(), &c, -T::one()))
    }

    pub fn corr(&self, zj: usize, zs: usize) -> Result<Derived<T>> {
        let (x, y, z) = (self.entry(zj, zs), self.entry(zj, zj), self.entry(zs, zs));
        positive(y.value, "IdioVol of the first stock")?;
        positive(z.value, "IdioVol of the second stock")?;
        if zj == zs {
            return Ok(Derived { value: T::one(), grad: Matrix::zeros(self.q.rows(), self.q.rows()) });
        }
        Ok(Derived::corr(&x, &y, &z))
    }

    pub fn corr_resid(&self, pis: &[usize], zj: usize, zs: usize) -> Result<Derived<T>> {
        let y = self.resid(pis, zj, zj)?;
        let z = self.resid(pis, zs, zs)?;
        positive(y.value, "residual IdioVol of the first stock")?;
        positive(z.value, "residual IdioVol of the second stock")?;
        if zj == zs {
            return Ok(Derived { value: T::one(), grad: Matrix::zeros(self.q.rows(), self.q.rows()) });
        }
        let x = self.resid(pis, zj, zs)?;
        Ok(Derived::corr(&x, &y, &z))
    }

    pub fn r2(&self, pis: &[usize], zj: usize) -> Result<Derived<T>> {
        let den = self.entry(zj, zj);
        positive(den.value, "IdioVol")?;
        Ok(Derived::ratio(&self.common(pis, zj, zj)?, &den))
    }

    pub fn q_measure(&self, pis: &[usize], zj: usize, zs: usize) -> Result<Derived<T>> {
        let den = self.entry(zj, zs);
        if den.value == T::zero() {
            return Err(Error::ZeroDenominator("Q measure"));
        }
        Ok(Derived::ratio(&self.common(pis, zj, zs)?, &den))
    }

    pub fn evaluate(&self, d: Derived<T>) -> DerivedEstimate<T> {
        self.finish(d)
    }
}

fn positive<T: Scalar>(v: T, what: &str) -> Result<()> {
    if v > T::zero() {
        Ok(())
    } else {
        Err(Error::NonpositiveDiagonal(format!("{what} quadratic variation estimate {v}")))
    }
}

/// Everything about one pair of stocks `(j, s)` sharing return factors and
/// IdioVol factors: `Q` is laid out as `[Π_1..Π_m, C_Zj, C_Zs]`.
#[derive(Clone, Debug)]
pub struct PairAnalysis<T> {
    pub system: QuadCovSystem<T>,
    pub n_pi: usize,
    pub same_stock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary<T> {
    pub gamma_j: Vec<DerivedEstimate<T>>,
    pub gamma_s: Vec<DerivedEstimate<T>>,
    pub r2_j: Option<DerivedEstimate<T>>,
    pub r2_s: Option<DerivedEstimate<T>>,
    pub corr: Option<DerivedEstimate<T>>,
    pub corr_resid: Option<DerivedEstimate<T>>,
    pub q_measure: Option<DerivedEstimate<T>>,
    pub cov_idiovol: DerivedEstimate<T>,
    pub cov_resid: Option<DerivedEstimate<T>>,
}

impl<T: Scalar> PairAnalysis<T> {
    pub fn new(
        spec_j: &IdioVolModelSpec<T>,
        spec_s: &IdioVolModelSpec<T>,
        path: &SpotCovPath<T>,
        mask: Option<&VolJumpMask>,
        method: Method,
        with_avar: bool,
    ) -> Result<Self> {
        if spec_j.idiovol_factors != spec_s.idiovol_factors {
            return Err(Error::Domain("both stocks must share the IdioVol factors".into()));
        }
        let same_stock = spec_j.stock == spec_s.stock && spec_j.factors == spec_s.factors;
        let mut fs = spec_j.idiovol_factors.clone();
        fs.push(spec_j.idiovol());
        if !same_stock {
            fs.push(spec_s.idiovol());
        }
        let n_pi = spec_j.idiovol_factors.len();
        let system = QuadCovSystem::estimate(&fs, path, mask, method, with_avar)?;
        Ok(Self { system, n_pi, same_stock })
    }

    pub fn pis(&self) -> Vec<usize> {
        (0..self.n_pi).collect()
    }

    pub fn zj(&self) -> usize {
        self.n_pi
    }

    pub fn zs(&self) -> usize {
        if self.same_stock {
            self.n_pi
        } else {
            self.n_pi + 1
        }
    }

    pub fn gamma(&self, stock_j: bool) -> Result<Vec<DerivedEstimate<T>>> {
        let z = if stock_j { self.zj() } else { self.zs() };
        Ok(self.system.gamma(&self.pis(), z)?.into_iter().map(|d| self.system.evaluate(d)).collect())
    }

    pub fn resid_estimate(&self) -> Result<Derived<T>> {
        self.system.resid(&self.pis(), self.zj(), self.zs())
    }

    /// All derived quantities; ones whose denominators are not positive are `None`.
    pub fn summary(&self) -> Result<PairSummary<T>> {
        let s = &self.system;
        let pis = self.pis();
        let (zj, zs) = (self.zj(), self.zs());
        let ev = |d: Result<Derived<T>>| d.ok().map(|d| s.evaluate(d));
        Ok(PairSummary {
            gamma_j: self.gamma(true)?,
            gamma_s: self.gamma(false)?,
            r2_j: ev(s.r2(&pis, zj)),
            r2_s: ev(s.r2(&pis, zs)),
            corr: ev(s.corr(zj, zs)),
            corr_resid: ev(s.corr_resid(&pis, zj, zs)),
            q_measure: ev(s.q_measure(&pis, zj, zs)),
            cov_idiovol: s.evaluate(s.entry(zj, zs)),
            cov_resid: ev(s.resid(&pis, zj, zs)),
        })
    }
}

/// `γ̂` and its delta-method covariance.
pub fn gamma_loadings<T: Scalar>(
    spec: &IdioVolModelSpec<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
    method: Method,
) -> Result<(Vec<T>, Option<Matrix<T>>)> {
    let pa = PairAnalysis::new(spec, spec, path, mask, method, method != Method::Naive)?;
    let ds = pa.system.gamma(&pa.pis(), pa.zj())?;
    let values = ds.iter().map(|d| d.value).collect();
    let avar = pa.system.avar().map(|a| {
        let g: Vec<Vec<T>> = ds.iter().map(|d| pa.system.fold(&d.grad)).collect();
        Matrix::from_fn(g.len(), g.len(), |r, c| a.sigma.quad_form(&g[r], &g[c]).expect("fold has κ entries"))
    });
    Ok((values, avar))
}

/// `[C_Zj, C_Zs]ᶜ − γ̂_jᵀ [Π,Π]ᶜ γ̂_s`.
pub fn resid_quadcov<T: Scalar>(
    spec_j: &IdioVolModelSpec<T>,
    spec_s: &IdioVolModelSpec<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
    method: Method,
) -> Result<QuadCovEstimate<T>> {
    let pa = PairAnalysis::new(spec_j, spec_s, path, mask, method, false)?;
    let d = pa.resid_estimate()?;
    let base = pa.system.estimate_for(pa.zj(), pa.zs()).expect("pair estimated");
    Ok(QuadCovEstimate {
        value: d.value,
        method,
        pair_id: (format!("resid {}", base.pair_id.0), format!("resid {}", base.pair_id.1)),
        fingerprint: base.fingerprint,
        summand_count: base.summand_count,
        negative_warning: pa.same_stock && d.value < T::zero(),
    })
}

/// Quadratic-covariation correlation of the IdioVols of stocks `j` and `s`.
pub fn corr_idiovol<T: Scalar>(
    spec_j: &IdioVolModelSpec<T>,
    spec_s: &IdioVolModelSpec<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
    method: Method,
) -> Result<T> {
    let pa = PairAnalysis::new(spec_j, spec_s, path, mask, method, false)?;
    Ok(pa.system.corr(pa.zj(), pa.zs())?.value)
}

pub fn corr_resid<T: Scalar>(
    spec_j: &IdioVolModelSpec<T>,
    spec_s: &IdioVolModelSpec<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
    method: Method,
) -> Result<T> {
    let pa = PairAnalysis::new(spec_j, spec_s, path, mask, method, false)?;
    Ok(pa.system.corr_resid(&pa.pis(), pa.zj(), pa.zs())?.value)
}

pub fn r2_idiovolfm<T: Scalar>(
    spec: &IdioVolModelSpec<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
    method: Method,
) -> Result<T> {
    let pa = PairAnalysis::new(spec, spec, path, mask, method, false)?;
    Ok(pa.system.r2(&pa.pis(), pa.zj())?.value)
}

pub fn q_measure<T: Scalar>(
    spec_j: &IdioVolModelSpec<T>,
    spec_s: &IdioVolModelSpec<T>,
    path: &SpotCovPath<T>,
    mask: Option<&VolJumpMask>,
    method: Method,
) -> Result<T> {
    let pa = PairAnalysis::new(spec_j, spec_s, path, mask, method, false)?;
    Ok(pa.system.q_measure(&pa.pis(), pa.zj(), pa.zs())?.value)
}

/// Block spot covariances `Ĉ_b` over non-overlapping blocks of `block_len`
/// increments, price-truncated as in the spot estimator.
fn block_spots<T: Scalar>(panel: &ReturnPanel<T>, block_len: usize, cfg: &EstimatorConfig) -> Result<Vec<Matrix<T>>> {
    let d = panel.dim();
    let needed = panel.factor_count() + 2;
    if block_len < needed {
        return Err(Error::BlockTooShort { block: block_len, needed });
    }
    let n = panel.n_increments();
    if n < block_len {
        return Err(Error::TooFewObservations { needed: block_len, found: n });
    }
    let inc = panel.increments();
    let th = if cfg.price_trunc_enabled { Some(TruncationThresholds::compute(panel, cfg)?) } else { None };
    let mut out = Vec::with_capacity(n / block_len);
    for b in 0..n / block_len {
        let mut m = Matrix::zeros(d, d);
        for i in b * block_len..(b + 1) * block_len {
            let mut x = inc[i * d..(i + 1) * d].to_vec();
            if let Some(th) = &th {
                let day = panel.increment_day(i);
                let trips: Vec<bool> = (0..d).map(|a| x[a].abs() > th.get(a, day).expect("threshold per day")).collect();
                match cfg.trunc_rule {
                    TruncationRule::Vector if trips.contains(&true) => continue,
                    TruncationRule::Vector => {}
                    TruncationRule::Componentwise => {
                        for a in (0..d).filter(|&a| trips[a]) {
                            x[a] = T::zero();
                        }
                    }
                }
            }
            for r in 0..d {
                for c in 0..d {
                    m[(r, c)] = m[(r, c)] + x[r] * x[c];
                }
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// Integrated idiosyncratic covariance `∫ C_{Zi Zj}` over blocks (up to the
/// common `Δₙ` scale), with the `l/(l − d_F)` small-block correction.
fn integrated_idio<T: Scalar>(blocks: &[Matrix<T>], i: usize, j: usize, factors: &[usize], l: usize) -> Result<T> {
    let corr = T::from_count(l) / T::from_count(l - factors.len());
    let mut s = T::zero();
    for m in blocks {
        let v = if factors.is_empty() {
            m[(i, j)]
        } else {
            let a = m.select(factors, factors);
            let ci: Vec<T> = factors.iter().map(|&f| m[(f, i)]).collect();
            let cj: Vec<T> = factors.iter().map(|&f| m[(f, j)]).collect();
            let x = a.solve(&cj).map_err(|_| Error::SingularFactorBlock)?;
            (m[(i, j)] - ci.iter().zip(&x).fold(T::zero(), |acc, (p, q)| acc + *p * *q)) * corr
        };
        s = s + v;
    }
    Ok(s)
}

/// `1 − ∫C_Zj / ∫C_Yj` for stock column `j`, from block spot estimates.
pub fn integrated_r2_rfm<T: Scalar>(panel: &ReturnPanel<T>, block_len: usize, j: usize, cfg: &EstimatorConfig) -> Result<T> {
    let blocks = block_spots(panel, block_len, cfg)?;
    let factors = panel.factor_columns();
    let z = integrated_idio(&blocks, j, j, &factors, block_len)?;
    let y = blocks.iter().fold(T::zero(), |acc, m| acc + m[(j, j)]);
    if !(y > T::zero()) {
        return Err(Error::NonpositiveDiagonal("integrated return variance".into()));
    }
    Ok(T::one() - z / y)
}

/// `∫C_{ZiZj} / sqrt(∫C_Zi ∫C_Zj)` from block spot estimates.
pub fn corr_idio_returns<T: Scalar>(
    panel: &ReturnPanel<T>,
    block_len: usize,
    i: usize,
    j: usize,
    cfg: &EstimatorConfig,
) -> Result<T> {
    let blocks = block_spots(panel, block_len, cfg)?;
    let factors = panel.factor_columns();
    let zij = integrated_idio(&blocks, i, j, &factors, block_len)?;
    let zi = integrated_idio(&blocks, i, i, &factors, block_len)?;
    let zj = integrated_idio(&blocks, j, j, &factors, block_len)?;
    if !(zi > T::zero() && zj > T::zero()) {
        return Err(Error::NonpositiveDiagonal("integrated idiosyncratic variance".into()));
    }
    Ok(zij / (zi * zj).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_gamma_is_a_ratio() {
        let q = Matrix::<f64>::from_rows(&[vec![2.0, 0.9], vec![0.9, 1.0]]).unwrap();
        let s = QuadCovSystem::from_matrix(q, 0.01, Method::Lin).unwrap();
        let g = s.gamma(&[0], 1).unwrap();
        assert!((g[0].value - 0.45).abs() < 1e-15);
        let r = s.resid(&[0], 1, 1).unwrap();
        let c = s.common(&[0], 1, 1).unwrap();
        assert!((r.value + c.value - 1.0).abs() < 1e-15);
        assert!((s.r2(&[0], 1).unwrap().value - 0.405).abs() < 1e-12);
    }

    #[test]
    fn correlation_of_a_stock_with_itself_is_one() {
        let q = Matrix::<f64>::from_rows(&[vec![2.0, 0.9], vec![0.9, 1.0]]).unwrap();
        let s = QuadCovSystem::from_matrix(q, 0.01, Method::Lin).unwrap();
        assert_eq!(s.corr(1, 1).unwrap().value, 1.0);
    }

    #[test]
    fn nonpositive_diagonal_and_zero_denominator() {
        let q = Matrix::from_rows(&[vec![2.0, 0.0, 0.1], vec![0.0, -1.0, 0.0], vec![0.1, 0.0, 1.0]]).unwrap();
        let s = QuadCovSystem::from_matrix(q, 0.01, Method::Lin).unwrap();
        assert!(matches!(s.corr(1, 2), Err(Error::NonpositiveDiagonal(_))));
        assert!(matches!(s.q_measure(&[0], 1, 2), Err(Error::ZeroDenominator(_))));
        let sing = QuadCovSystem::from_matrix(Matrix::zeros(2, 2), 0.01, Method::Lin).unwrap();
        assert!(matches!(sing.gamma(&[0], 1), Err(Error::SingularFactorQuadCov)));
    }
}
