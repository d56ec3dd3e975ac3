//! Centralized reference solvers for `min sum_i J_i(x)` subject to `A x = b`.

use nalgebra::{DMatrix, DVector};

use super::cost::{LocalConstraint, LocalCost, QuadraticCost, SmoothCost};
use super::inner::{minimize, InnerSolverConfig};
use super::ConsensusProblem;
use crate::linalg::{min_norm_solution, null_space, numeric_rank, reduce_rows};
use crate::{Error, Result};

const ROW_TOL: f64 = 1e-10;

/// Solves the centralized form of `problem`.
///
/// All-quadratic problems go through the equality-constrained KKT system.
/// Otherwise the summed cost is minimized over the affine feasible set
/// starting from the projection of `x0` (required in that case).
pub fn centralized_solve(problem: &ConsensusProblem, x0: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let constraints = problem.stacked_constraints();
    if problem.all_quadratic() {
        let costs: Vec<&QuadraticCost> = problem
            .nodes()
            .iter()
            .map(|n| match &n.cost {
                LocalCost::Quadratic(q) => q,
                LocalCost::General(_) => unreachable!(),
            })
            .collect();
        centralized_quadratic(problem.dim(), &costs, &constraints)
    } else {
        let x0 = x0.ok_or_else(|| Error::InvalidArgument("general centralized solve needs a start point".into()))?;
        let total = TotalCost { problem };
        let cfg = InnerSolverConfig { grad_tol: 1e-10, max_iters: 20_000, ..problem.inner };
        centralized_general(&total, &constraints, x0, &cfg)
    }
}

#[derive(Debug)]
struct TotalCost<'a> {
    problem: &'a ConsensusProblem,
}

impl SmoothCost for TotalCost<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.problem.total_cost(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for n in self.problem.nodes() {
            g += n.cost.gradient(x);
        }
        g
    }
}

/// Exact minimizer of `sum_i ||D_i x + f_i||^2` subject to `A x = b`.
///
/// Redundant but consistent constraint rows are dropped before the KKT system
/// `[2 H, A^T; A, 0]` is formed; a singular reduced KKT system is an error.
pub fn centralized_quadratic(dim: usize, costs: &[&QuadraticCost], constraints: &LocalConstraint) -> Result<DVector<f64>> {
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for c in costs {
        if c.d.ncols() != dim {
            return Err(Error::DimensionMismatch { what: "quadratic cost columns", expected: dim, actual: c.d.ncols() });
        }
        h += c.d.tr_mul(&c.d);
        g += c.d.tr_mul(&c.f);
    }
    let (a, b) = reduce_rows(&constraints.a, &constraints.b, ROW_TOL)?;
    let m = a.nrows();
    let size = dim + m;
    let mut kkt = DMatrix::zeros(size, size);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(&(2.0 * &h));
    kkt.view_mut((dim, 0), (m, dim)).copy_from(&a);
    kkt.view_mut((0, dim), (dim, m)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, dim).copy_from(&(-2.0 * g));
    rhs.rows_mut(dim, m).copy_from(&b);

    if numeric_rank(&kkt, 1e-12) < size {
        return Err(Error::IllPosed("KKT system is singular: the minimizer is not unique".into()));
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::IllPosed("KKT system is singular".into()))?;
    Ok(sol.rows(0, dim).into_owned())
}

/// Minimizes a smooth cost over `{x : A x = b}` in null-space coordinates.
pub fn centralized_general(
    cost: &dyn SmoothCost,
    constraints: &LocalConstraint,
    x0: &DVector<f64>,
    cfg: &InnerSolverConfig,
) -> Result<DVector<f64>> {
    let (a, b) = reduce_rows(&constraints.a, &constraints.b, ROW_TOL)?;
    let z = null_space(&a, 1e-10);
    // project the start onto the feasible set
    let start = if a.nrows() > 0 {
        let shift = min_norm_solution(&a, &(&a * x0 - &b))?;
        x0 - shift
    } else {
        x0.clone()
    };
    let reduced = Reduced { cost, origin: &start, basis: &z };
    let y = minimize(&reduced, &DVector::zeros(z.ncols()), cfg)?.x;
    Ok(&start + &z * y)
}

#[derive(Debug)]
struct Reduced<'a> {
    cost: &'a dyn SmoothCost,
    origin: &'a DVector<f64>,
    basis: &'a DMatrix<f64>,
}

impl SmoothCost for Reduced<'_> {
    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn value(&self, y: &DVector<f64>) -> f64 {
        self.cost.value(&(self.origin + self.basis * y))
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&self.cost.gradient(&(self.origin + self.basis * y)))
    }

    fn value_and_gradient(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let (v, g) = self.cost.value_and_gradient(&(self.origin + self.basis * y));
        (v, self.basis.tr_mul(&g))
    }
}
