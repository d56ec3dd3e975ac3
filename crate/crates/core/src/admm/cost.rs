use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// A differentiable scalar objective over the global decision vector.
pub trait SmoothCost: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.value(x), self.gradient(x))
    }
}

/// `J(x) = ||D x + f||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub d: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(d: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        if d.nrows() != f.len() {
            return Err(Error::DimensionMismatch {
                what: "quadratic cost rows of D vs length of f",
                expected: d.nrows(),
                actual: f.len(),
            });
        }
        Ok(Self { d, f })
    }

    /// The zero cost over an `n`-dimensional decision vector.
    pub fn zero(n: usize) -> Self {
        Self { d: DMatrix::zeros(0, n), f: DVector::zeros(0) }
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.d * x + &self.f
    }
}

impl SmoothCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.d.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.residual(x).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * self.d.tr_mul(&self.residual(x))
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = self.residual(x);
        (r.norm_squared(), 2.0 * self.d.tr_mul(&r))
    }
}

/// One node's share `J_i` of the global objective.
#[derive(Debug, Clone)]
pub enum LocalCost {
    /// Solved in closed form each round.
    Quadratic(QuadraticCost),
    /// Solved by the inner unconstrained minimizer each round.
    General(Arc<dyn SmoothCost>),
}

impl LocalCost {
    pub fn dim(&self) -> usize {
        match self {
            LocalCost::Quadratic(q) => q.dim(),
            LocalCost::General(c) => c.dim(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            LocalCost::Quadratic(q) => q.value(x),
            LocalCost::General(c) => c.value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LocalCost::Quadratic(q) => q.gradient(x),
            LocalCost::General(c) => c.gradient(x),
        }
    }

    pub fn as_smooth(&self) -> &dyn SmoothCost {
        match self {
            LocalCost::Quadratic(q) => q,
            LocalCost::General(c) => c.as_ref(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, LocalCost::Quadratic(_))
    }
}

/// Locally held equality constraints `A_i x = b_i`. May have zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LocalConstraint {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "constraint rows of A vs length of b",
                expected: a.nrows(),
                actual: b.len(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn empty(n: usize) -> Self {
        Self { a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        if self.rows() == 0 {
            0.0
        } else {
            self.residual(x).norm()
        }
    }

    /// Appends the rows of `other` below this constraint's rows.
    pub fn stack(&self, other: &LocalConstraint) -> LocalConstraint {
        let n = self.a.ncols();
        LocalConstraint {
            a: crate::linalg::vstack(&[&self.a, &other.a], n),
            b: crate::linalg::vstack_vec(&[&self.b, &other.b]),
        }
    }
}

/// Sum of several smooth costs.
#[derive(Debug, Clone)]
pub struct SumCost {
    dim: usize,
    terms: Vec<Arc<dyn SmoothCost>>,
}

impl SumCost {
    pub fn new(dim: usize, terms: Vec<Arc<dyn SmoothCost>>) -> Self {
        Self { dim, terms }
    }
}

impl SmoothCost for SumCost {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for t in &self.terms {
            g += t.gradient(x);
        }
        g
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut v = 0.0;
        let mut g = DVector::zeros(self.dim);
        for t in &self.terms {
            let (tv, tg) = t.value_and_gradient(x);
            v += tv;
            g += tg;
        }
        (v, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let q = QuadraticCost::new(
            DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]),
            DVector::from_vec(vec![0.3, -1.0]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.2, -0.4, 1.3]);
        let g = q.gradient(&x);
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (q.value(&xp) - q.value(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert!(QuadraticCost::new(DMatrix::zeros(2, 3), DVector::zeros(3)).is_err());
        assert!(LocalConstraint::new(DMatrix::zeros(1, 3), DVector::zeros(2)).is_err());
        assert_eq!(LocalConstraint::empty(4).violation(&DVector::zeros(4)), 0.0);
    }
}
