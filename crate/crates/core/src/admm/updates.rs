//! Per-node update steps of one ADMM round.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cost::{LocalConstraint, QuadraticCost, SmoothCost};
use super::inner::{minimize, InnerSolverConfig};
use super::{Hyperparams, NodeAdmmState};
use crate::{Error, Result};

/// Read access to the estimates received from neighbours in the current round.
pub trait NeighborEstimates {
    fn estimate(&self, j: usize) -> Option<&DVector<f64>>;
}

/// A full snapshot indexed by node id.
impl NeighborEstimates for [DVector<f64>] {
    fn estimate(&self, j: usize) -> Option<&DVector<f64>> {
        self.get(j)
    }
}

impl NeighborEstimates for Vec<DVector<f64>> {
    fn estimate(&self, j: usize) -> Option<&DVector<f64>> {
        self.get(j)
    }
}

impl NeighborEstimates for BTreeMap<usize, DVector<f64>> {
    fn estimate(&self, j: usize) -> Option<&DVector<f64>> {
        self.get(&j)
    }
}

fn gather<'a, E: NeighborEstimates + ?Sized>(
    node: usize,
    neighbors: &[usize],
    inbox: &'a E,
) -> Result<Vec<&'a DVector<f64>>> {
    neighbors
        .iter()
        .map(|&j| inbox.estimate(j).ok_or(Error::MissingNeighbor { node, neighbor: j }))
        .collect()
}

/// `p_i + alpha_p * sum_j (x_i - x_j)` using this round's received estimates.
pub fn dual_update_p<E: NeighborEstimates + ?Sized>(
    state: &NodeAdmmState,
    node: usize,
    neighbors: &[usize],
    inbox: &E,
    alpha_p: f64,
) -> Result<DVector<f64>> {
    let xs = gather(node, neighbors, inbox)?;
    let mut p = state.p.clone();
    for xj in xs {
        p += alpha_p * (&state.x - xj);
    }
    Ok(p)
}

/// `r_i + alpha_r * (A_i x_i - b_i)`; unchanged when the node holds no rows.
pub fn dual_update_r(state: &NodeAdmmState, constraint: &LocalConstraint, alpha_r: f64) -> DVector<f64> {
    if constraint.rows() == 0 {
        return state.r.clone();
    }
    &state.r + alpha_r * constraint.residual(&state.x)
}

/// Precomputed factorization for a node with a quadratic cost.
///
/// `M = 2 D^T D + 2 alpha_r A^T A + 2 alpha_p deg I` and the constant part of
/// the right-hand side `2 alpha_r A^T b - 2 D^T f` do not change between
/// rounds, so they are built once per problem.
#[derive(Debug, Clone)]
pub struct QuadraticFactor {
    chol: Cholesky<f64, Dyn>,
    constant: DVector<f64>,
}

impl QuadraticFactor {
    pub fn new(cost: &QuadraticCost, constraint: &LocalConstraint, degree: usize, hyper: &Hyperparams) -> Result<Self> {
        let n = cost.d.ncols();
        let mut m: DMatrix<f64> = 2.0 * cost.d.tr_mul(&cost.d);
        if constraint.rows() > 0 {
            m += 2.0 * hyper.alpha_r * constraint.a.tr_mul(&constraint.a);
        }
        for k in 0..n {
            m[(k, k)] += 2.0 * hyper.alpha_p * degree as f64;
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let chol = m.clone().cholesky().ok_or_else(|| {
            Error::IllPosed("local update matrix is singular (no cost curvature, constraints or neighbours)".into())
        })?;
        // reject numerically singular factors too
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
        if min_pivot * min_pivot < 1e-13 * scale {
            return Err(Error::IllPosed("local update matrix is numerically singular".into()));
        }
        let mut constant = -2.0 * cost.d.tr_mul(&cost.f);
        if constraint.rows() > 0 {
            constant += 2.0 * hyper.alpha_r * constraint.a.tr_mul(&constraint.b);
        }
        Ok(Self { chol, constant })
    }
}

/// Closed-form primal step for `J_i(x) = ||D x + f||^2`.
///
/// `state.p` and `state.r` must already hold the round-`k+1` multipliers while
/// `state.x` is still `x_i^k`.
pub fn primal_update_quadratic<E: NeighborEstimates + ?Sized>(
    state: &NodeAdmmState,
    node: usize,
    neighbors: &[usize],
    inbox: &E,
    constraint: &LocalConstraint,
    factor: &QuadraticFactor,
    alpha_p: f64,
) -> Result<DVector<f64>> {
    let xs = gather(node, neighbors, inbox)?;
    let mut rhs = &factor.constant - &state.p;
    if constraint.rows() > 0 {
        rhs -= constraint.a.tr_mul(&state.r);
    }
    for xj in xs {
        rhs += alpha_p * (&state.x + xj);
    }
    Ok(factor.chol.solve(&rhs))
}

/// The objective minimized by a node's primal step.
#[derive(Debug)]
pub struct LocalSubproblem<'a> {
    pub cost: &'a dyn SmoothCost,
    pub constraint: &'a LocalConstraint,
    pub p: &'a DVector<f64>,
    pub r: &'a DVector<f64>,
    /// `(x_i^k + x_j^k) / 2` for every neighbour.
    pub midpoints: Vec<DVector<f64>>,
    pub alpha_p: f64,
    pub alpha_r: f64,
}

impl<'a> LocalSubproblem<'a> {
    pub fn new<E: NeighborEstimates + ?Sized>(
        state: &'a NodeAdmmState,
        node: usize,
        neighbors: &[usize],
        inbox: &E,
        cost: &'a dyn SmoothCost,
        constraint: &'a LocalConstraint,
        hyper: &Hyperparams,
    ) -> Result<Self> {
        let midpoints = gather(node, neighbors, inbox)?
            .into_iter()
            .map(|xj| 0.5 * (&state.x + xj))
            .collect();
        Ok(Self {
            cost,
            constraint,
            p: &state.p,
            r: &state.r,
            midpoints,
            alpha_p: hyper.alpha_p,
            alpha_r: hyper.alpha_r,
        })
    }
}

impl SmoothCost for LocalSubproblem<'_> {
    fn dim(&self) -> usize {
        self.cost.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (mut v, mut g) = self.cost.value_and_gradient(x);
        v += self.p.dot(x);
        g += self.p;
        if self.constraint.rows() > 0 {
            let res = self.constraint.residual(x);
            v += self.r.dot(&res) + self.alpha_r * res.norm_squared();
            g += self.constraint.a.tr_mul(&(self.r + 2.0 * self.alpha_r * &res));
        }
        for m in &self.midpoints {
            let d = x - m;
            v += self.alpha_p * d.norm_squared();
            g += 2.0 * self.alpha_p * d;
        }
        (v, g)
    }
}

/// Primal step for a general smooth cost, solved numerically from `x_i^k`.
pub fn primal_update_general<E: NeighborEstimates + ?Sized>(
    state: &NodeAdmmState,
    node: usize,
    neighbors: &[usize],
    inbox: &E,
    cost: &dyn SmoothCost,
    constraint: &LocalConstraint,
    hyper: &Hyperparams,
    inner: &InnerSolverConfig,
) -> Result<DVector<f64>> {
    let sub = LocalSubproblem::new(state, node, neighbors, inbox, cost, constraint, hyper)?;
    Ok(minimize(&sub, &state.x, inner)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn p_unchanged_under_agreement() {
        let s = NodeAdmmState::new(v(&[1.0, 2.0]), 0);
        let inbox = vec![v(&[0.0, 0.0]), v(&[1.0, 2.0]), v(&[1.0, 2.0])];
        let p = dual_update_p(&s, 0, &[1, 2], &inbox, 1.0).unwrap();
        assert_eq!(p, v(&[0.0, 0.0]));
    }

    #[test]
    fn p_direct_formula() {
        let s = NodeAdmmState::new(v(&[1.0, 0.0]), 0);
        let inbox = vec![v(&[1.0, 0.0]), v(&[0.0, 0.0])];
        assert_eq!(dual_update_p(&s, 0, &[1], &inbox, 1.0).unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn missing_neighbor_is_a_protocol_error() {
        let s = NodeAdmmState::new(v(&[1.0]), 0);
        let inbox: BTreeMap<usize, DVector<f64>> = [(1, v(&[0.0]))].into_iter().collect();
        assert_eq!(
            dual_update_p(&s, 0, &[1, 3], &inbox, 1.0),
            Err(Error::MissingNeighbor { node: 0, neighbor: 3 })
        );
    }

    #[test]
    fn r_update() {
        let c = LocalConstraint::new(DMatrix::from_row_slice(1, 1, &[1.0]), v(&[0.5])).unwrap();
        let s = NodeAdmmState::new(v(&[1.0]), 1);
        assert_eq!(dual_update_r(&s, &c, 2.0), v(&[1.0]));
        let exact = NodeAdmmState::new(v(&[0.5]), 1);
        assert_eq!(dual_update_r(&exact, &c, 2.0), v(&[0.0]));
        let none = NodeAdmmState::new(v(&[0.5]), 0);
        assert_eq!(dual_update_r(&none, &LocalConstraint::empty(1), 2.0).len(), 0);
    }

    #[test]
    fn isolated_node_reaches_its_own_minimum() {
        let c = v(&[0.3, -1.2]);
        let cost = QuadraticCost::new(DMatrix::identity(2, 2), -c.clone()).unwrap();
        let con = LocalConstraint::empty(2);
        let hyper = Hyperparams::default();
        let f = QuadraticFactor::new(&cost, &con, 0, &hyper).unwrap();
        let s = NodeAdmmState::new(v(&[5.0, 5.0]), 0);
        let empty: Vec<DVector<f64>> = vec![];
        let x = primal_update_quadratic(&s, 0, &[], &empty, &con, &f, 1.0).unwrap();
        assert!((x - c).amax() < 1e-14);
    }

    #[test]
    fn singular_update_matrix_is_ill_posed() {
        let cost = QuadraticCost::zero(2);
        let r = QuadraticFactor::new(&cost, &LocalConstraint::empty(2), 0, &Hyperparams::default());
        assert!(matches!(r, Err(Error::IllPosed(_))));
    }

    #[test]
    fn zero_cost_general_update_is_the_proximal_average() {
        let cost = QuadraticCost::zero(2);
        let con = LocalConstraint::empty(2);
        let s = NodeAdmmState::new(v(&[1.0, 3.0]), 0);
        let inbox = vec![v(&[1.0, 3.0]), v(&[-1.0, 1.0])];
        let x = primal_update_general(
            &s,
            0,
            &[1],
            &inbox,
            &cost,
            &con,
            &Hyperparams::default(),
            &InnerSolverConfig::default(),
        )
        .unwrap();
        assert!((x - v(&[0.0, 2.0])).amax() < 1e-8);
    }
}
