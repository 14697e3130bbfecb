//! Smooth scalar maps of a covariance matrix with closed-form gradients.
//!
//! Every entry `C[g][h]` is treated as an independent argument, so the
//! gradient of `C[0][1]` is a single 1 at `(0, 1)` and the gradient of a
//! quadratic form picks up both triangles separately.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Lu, Matrix};
use crate::scalar::Scalar;

/// Relative asymmetry tolerated by the checked evaluation entry points.
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr<T> {
    Entry { a: usize, b: usize },
    Const(T),
    Add(Arc<Expr<T>>, Arc<Expr<T>>),
    Sub(Arc<Expr<T>>, Arc<Expr<T>>),
    Mul(Arc<Expr<T>>, Arc<Expr<T>>),
    Div(Arc<Expr<T>>, Arc<Expr<T>>),
    Scale(Arc<Expr<T>>, T),
    /// `C_jj − C_{j,F} C_F⁻¹ C_{F,j}`, the residual variance of `j` on `F`.
    IdioVol { stock: usize, factors: Vec<usize> },
    /// `k`-th entry of `C_F⁻¹ C_{F,j}`.
    Beta { stock: usize, factors: Vec<usize>, k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeOp {
    Add,
    Sub,
    Mul,
    Div,
    Scale,
}

/// Right operand of [`Functional::compose`].
#[derive(Clone, Debug)]
pub enum Operand<T> {
    Functional(Functional<T>),
    Scalar(T),
}

/// A scalar function `H(C)` of a `dim × dim` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Functional<T> {
    dim: usize,
    expr: Arc<Expr<T>>,
}

impl<T: Scalar> Functional<T> {
    /// `C[a][b]` (0-based).
    pub fn entry(dim: usize, a: usize, b: usize) -> Result<Self> {
        check_index(dim, a)?;
        check_index(dim, b)?;
        Ok(Self { dim, expr: Arc::new(Expr::Entry { a, b }) })
    }

    pub fn constant(dim: usize, c: T) -> Self {
        Self { dim, expr: Arc::new(Expr::Const(c)) }
    }

    pub fn idiovol(dim: usize, stock: usize, factors: &[usize]) -> Result<Self> {
        check_block(dim, stock, factors)?;
        if factors.is_empty() {
            return Self::entry(dim, stock, stock);
        }
        Ok(Self { dim, expr: Arc::new(Expr::IdioVol { stock, factors: factors.to_vec() }) })
    }

    pub fn beta(dim: usize, stock: usize, factors: &[usize], k: usize) -> Result<Self> {
        check_block(dim, stock, factors)?;
        if k >= factors.len() {
            return Err(Error::DimensionMismatch { expected: factors.len(), found: k + 1 });
        }
        Ok(Self { dim, expr: Arc::new(Expr::Beta { stock, factors: factors.to_vec(), k }) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expr(&self) -> &Expr<T> {
        &self.expr
    }

    pub fn compose(op: ComposeOp, lhs: &Self, rhs: Operand<T>) -> Result<Self> {
        match (op, rhs) {
            (ComposeOp::Scale, Operand::Scalar(s)) => Ok(lhs.scale(s)),
            (ComposeOp::Scale, Operand::Functional(f)) => lhs.mul(&f),
            (op, Operand::Scalar(s)) => lhs.binary(op, &Self::constant(lhs.dim, s)),
            (op, Operand::Functional(f)) => lhs.binary(op, &f),
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.binary(ComposeOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.binary(ComposeOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.binary(ComposeOp::Mul, rhs)
    }

    pub fn div(&self, rhs: &Self) -> Result<Self> {
        self.binary(ComposeOp::Div, rhs)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { dim: self.dim, expr: Arc::new(Expr::Scale(self.expr.clone(), s)) }
    }

    fn binary(&self, op: ComposeOp, rhs: &Self) -> Result<Self> {
        if self.dim != rhs.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rhs.dim });
        }
        let (l, r) = (self.expr.clone(), rhs.expr.clone());
        let expr = match op {
            ComposeOp::Add => Expr::Add(l, r),
            ComposeOp::Sub => Expr::Sub(l, r),
            ComposeOp::Mul | ComposeOp::Scale => Expr::Mul(l, r),
            ComposeOp::Div => Expr::Div(l, r),
        };
        Ok(Self { dim: self.dim, expr: Arc::new(expr) })
    }

    /// True when the gradient does not depend on `C`.
    pub fn is_linear(&self) -> bool {
        fn lin<T: Scalar>(e: &Expr<T>) -> bool {
            match e {
                Expr::Entry { .. } | Expr::Const(_) => true,
                Expr::Add(l, r) | Expr::Sub(l, r) => lin(l) && lin(r),
                Expr::Scale(x, _) => lin(x),
                Expr::Mul(l, r) => (is_const(l) && lin(r)) || (lin(l) && is_const(r)),
                Expr::Div(l, r) => lin(l) && is_const(r),
                Expr::IdioVol { .. } | Expr::Beta { .. } => false,
            }
        }
        fn is_const<T: Scalar>(e: &Expr<T>) -> bool {
            match e {
                Expr::Const(_) => true,
                Expr::Entry { .. } | Expr::IdioVol { .. } | Expr::Beta { .. } => false,
                Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                    is_const(l) && is_const(r)
                }
                Expr::Scale(x, _) => is_const(x),
            }
        }
        lin(&self.expr)
    }

    /// Entries `(g, h)` on which the gradient can be nonzero, sorted and unique.
    pub fn support(&self) -> Vec<(usize, usize)> {
        fn walk<T>(e: &Expr<T>, out: &mut Vec<(usize, usize)>) {
            match e {
                Expr::Entry { a, b } => out.push((*a, *b)),
                Expr::Const(_) => {}
                Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Expr::Scale(x, _) => walk(x, out),
                Expr::IdioVol { stock, factors } => {
                    out.push((*stock, *stock));
                    for &p in factors {
                        out.push((*stock, p));
                        out.push((p, *stock));
                        for &q in factors {
                            out.push((p, q));
                        }
                    }
                }
                Expr::Beta { stock, factors, .. } => {
                    for &p in factors {
                        out.push((p, *stock));
                        for &q in factors {
                            out.push((p, q));
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.expr, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `H(C)`; rejects non-symmetric or wrongly sized input.
    pub fn value(&self, c: &Matrix<T>) -> Result<T> {
        self.check_input(c)?;
        self.value_unchecked(c.as_slice())
    }

    /// `∂H/∂C_{gh}` as a dense matrix.
    pub fn gradient(&self, c: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(c)?;
        let (_, g) = self.eval_unchecked(c.as_slice())?;
        Matrix::from_row_major(self.dim, self.dim, g)
    }

    /// Value and dense row-major gradient at a row-major `dim × dim` slice.
    /// No symmetry check, so single entries can be perturbed.
    pub fn eval_unchecked(&self, c: &[T]) -> Result<(T, Vec<T>)> {
        if c.len() != self.dim * self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim * self.dim, found: c.len() });
        }
        let mut grad = vec![T::zero(); c.len()];
        let v = eval(&self.expr, c, self.dim, T::one(), &mut grad)?;
        Ok((v, grad))
    }

    pub fn value_unchecked(&self, c: &[T]) -> Result<T> {
        if c.len() != self.dim * self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim * self.dim, found: c.len() });
        }
        value(&self.expr, c, self.dim)
    }

    fn check_input(&self, c: &Matrix<T>) -> Result<()> {
        if c.rows() != self.dim || c.cols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: c.rows().max(c.cols()) });
        }
        if !c.is_symmetric(T::lit(SYMMETRY_TOL)) {
            return Err(Error::Domain(format!("input matrix is not symmetric (asymmetry {})", c.asymmetry())));
        }
        Ok(())
    }
}

fn check_index(dim: usize, i: usize) -> Result<()> {
    if i >= dim {
        return Err(Error::DimensionMismatch { expected: dim, found: i + 1 });
    }
    Ok(())
}

fn check_block(dim: usize, stock: usize, factors: &[usize]) -> Result<()> {
    check_index(dim, stock)?;
    for (n, &f) in factors.iter().enumerate() {
        check_index(dim, f)?;
        if f == stock || factors[..n].contains(&f) {
            return Err(Error::Domain(format!("factor column {f} repeated or equal to the stock column")));
        }
    }
    Ok(())
}

/// Factor block `A = C_FF`, column `v = C_{F,j}` and row `w = C_{j,F}`.
fn factor_block<T: Scalar>(c: &[T], d: usize, stock: usize, factors: &[usize]) -> Result<(Lu<T>, Vec<T>, Vec<T>)> {
    let m = factors.len();
    let a = Matrix::from_fn(m, m, |p, q| c[factors[p] * d + factors[q]]);
    let lu = a.lu().map_err(|_| Error::SingularFactorBlock)?;
    let v = factors.iter().map(|&p| c[p * d + stock]).collect();
    let w = factors.iter().map(|&p| c[stock * d + p]).collect();
    Ok((lu, v, w))
}

fn value<T: Scalar>(e: &Expr<T>, c: &[T], d: usize) -> Result<T> {
    Ok(match e {
        Expr::Entry { a, b } => c[a * d + b],
        Expr::Const(k) => *k,
        Expr::Add(l, r) => value(l, c, d)? + value(r, c, d)?,
        Expr::Sub(l, r) => value(l, c, d)? - value(r, c, d)?,
        Expr::Mul(l, r) => value(l, c, d)? * value(r, c, d)?,
        Expr::Div(l, r) => value(l, c, d)? / value(r, c, d)?,
        Expr::Scale(x, s) => value(x, c, d)? * *s,
        Expr::IdioVol { stock, factors } => {
            let (lu, v, w) = factor_block(c, d, *stock, factors)?;
            let x = lu.solve(&v)?;
            c[stock * d + stock] - dot(&w, &x)
        }
        Expr::Beta { stock, factors, k } => {
            let (lu, v, _) = factor_block(c, d, *stock, factors)?;
            lu.solve(&v)?[*k]
        }
    })
}

/// Returns the value and adds `weight · ∂e/∂C` into `grad`.
fn eval<T: Scalar>(e: &Expr<T>, c: &[T], d: usize, weight: T, grad: &mut [T]) -> Result<T> {
    match e {
        Expr::Entry { a, b } => {
            grad[a * d + b] = grad[a * d + b] + weight;
            Ok(c[a * d + b])
        }
        Expr::Const(k) => Ok(*k),
        Expr::Add(l, r) => Ok(eval(l, c, d, weight, grad)? + eval(r, c, d, weight, grad)?),
        Expr::Sub(l, r) => Ok(eval(l, c, d, weight, grad)? - eval(r, c, d, -weight, grad)?),
        Expr::Scale(x, s) => Ok(eval(x, c, d, weight * *s, grad)? * *s),
        Expr::Mul(l, r) => {
            let lv = value(l, c, d)?;
            let rv = value(r, c, d)?;
            eval(l, c, d, weight * rv, grad)?;
            eval(r, c, d, weight * lv, grad)?;
            Ok(lv * rv)
        }
        Expr::Div(l, r) => {
            let lv = value(l, c, d)?;
            let rv = value(r, c, d)?;
            eval(l, c, d, weight / rv, grad)?;
            eval(r, c, d, -weight * lv / (rv * rv), grad)?;
            Ok(lv / rv)
        }
        Expr::IdioVol { stock, factors } => {
            let (lu, v, w) = factor_block(c, d, *stock, factors)?;
            let x = lu.solve(&v)?; // A⁻¹ v
            let y = lu.solve_transposed(&w)?; // A⁻ᵀ w
            let j = *stock;
            grad[j * d + j] = grad[j * d + j] + weight;
            for (p, &fp) in factors.iter().enumerate() {
                grad[j * d + fp] = grad[j * d + fp] - weight * x[p];
                grad[fp * d + j] = grad[fp * d + j] - weight * y[p];
                for (q, &fq) in factors.iter().enumerate() {
                    grad[fp * d + fq] = grad[fp * d + fq] + weight * y[p] * x[q];
                }
            }
            Ok(c[j * d + j] - dot(&w, &x))
        }
        Expr::Beta { stock, factors, k } => {
            let (lu, v, _) = factor_block(c, d, *stock, factors)?;
            let beta = lu.solve(&v)?;
            let mut e_k = vec![T::zero(); factors.len()];
            e_k[*k] = T::one();
            // Row k of A⁻¹ is A⁻ᵀ e_k.
            let row = lu.solve_transposed(&e_k)?;
            for (p, &fp) in factors.iter().enumerate() {
                grad[fp * d + stock] = grad[fp * d + stock] + weight * row[p];
                for (q, &fq) in factors.iter().enumerate() {
                    grad[fp * d + fq] = grad[fp * d + fq] - weight * row[p] * beta[q];
                }
            }
            Ok(beta[*k])
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

impl<T: fmt::Display> fmt::Display for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Entry { a, b } => write!(f, "C[{a},{b}]"),
            Expr::Const(k) => write!(f, "{k}"),
            Expr::Add(l, r) => write!(f, "({l} + {r})"),
            Expr::Sub(l, r) => write!(f, "({l} - {r})"),
            Expr::Mul(l, r) => write!(f, "({l} * {r})"),
            Expr::Div(l, r) => write!(f, "({l} / {r})"),
            Expr::Scale(x, s) => write!(f, "({s} * {x})"),
            Expr::IdioVol { stock, factors } => write!(f, "idiovol({stock};{factors:?})"),
            Expr::Beta { stock, factors, k } => write!(f, "beta({stock};{factors:?};{k})"),
        }
    }
}

impl<T: fmt::Display> fmt::Display for Functional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c2() -> Matrix<f64> {
        Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()
    }

    #[test]
    fn selector_idiovol_and_beta_values() {
        let c = c2();
        assert_eq!(Functional::entry(2, 0, 0).unwrap().value(&c).unwrap(), 2.0);
        assert_eq!(Functional::idiovol(2, 0, &[1]).unwrap().value(&c).unwrap(), 1.75);
        assert_eq!(Functional::beta(2, 0, &[1], 0).unwrap().value(&c).unwrap(), 0.5);
    }

    #[test]
    fn idiovol_gradient_closed_form() {
        let g = Functional::idiovol(2, 0, &[1]).unwrap().gradient(&c2()).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_abs_diff_eq!(g[(0, 1)], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 0)], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 1)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn selector_gradient_is_unit_matrix() {
        let g = Functional::entry(2, 1, 1).unwrap().gradient(&c2()).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn composition_values_and_gradients() {
        let id = Matrix::<f64>::identity(2);
        let s = Functional::entry(2, 0, 0).unwrap().add(&Functional::entry(2, 1, 1).unwrap()).unwrap();
        assert_eq!(s.value(&id).unwrap(), 2.0);
        assert_eq!(s.gradient(&id).unwrap(), Matrix::diag(&[1.0, 1.0]));

        let sc = Functional::entry(2, 0, 0).unwrap().scale(0.45);
        assert_eq!(sc.gradient(&id).unwrap()[(0, 0)], 0.45);

        let q = Functional::compose(
            ComposeOp::Div,
            &Functional::entry(2, 0, 1).unwrap(),
            Operand::Functional(Functional::entry(2, 1, 1).unwrap()),
        )
        .unwrap();
        assert_eq!(q.value(&c2()).unwrap(), 0.5);
        assert_abs_diff_eq!(q.gradient(&c2()).unwrap()[(1, 1)], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = Functional::<f64>::entry(2, 0, 0).unwrap();
        let b = Functional::<f64>::entry(3, 0, 0).unwrap();
        assert!(matches!(a.add(&b), Err(Error::DimensionMismatch { .. })));
        assert!(Functional::<f64>::entry(2, 2, 0).is_err());
    }

    #[test]
    fn singular_factor_block_and_asymmetric_input() {
        let c = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let f = Functional::idiovol(2, 0, &[1]).unwrap();
        assert_eq!(f.value(&c), Err(Error::SingularFactorBlock));
        let asym = Matrix::from_rows(&[vec![2.0, 0.4], vec![0.5, 1.0]]).unwrap();
        assert!(matches!(f.value(&asym), Err(Error::Domain(_))));
    }

    #[test]
    fn support_covers_gradient() {
        let f = Functional::<f64>::idiovol(3, 0, &[2]).unwrap();
        assert_eq!(f.support(), vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert!(Functional::<f64>::entry(3, 1, 2).unwrap().scale(2.0).is_linear());
        assert!(!f.is_linear());
    }

    #[test]
    fn works_in_single_precision() {
        let c = Matrix::<f32>::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(Functional::idiovol(2, 0, &[1]).unwrap().value(&c).unwrap(), 1.75f32);
    }
}
