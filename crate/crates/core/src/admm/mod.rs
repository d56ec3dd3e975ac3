//! Consensus ADMM with locally held linear constraints.
//!
//! Every node `i` keeps a copy `x_i` of the global decision vector, an
//! aggregated consistency multiplier `p_i` and a multiplier `r_i` for its own
//! constraints `A_i x = b_i`. One synchronous round is
//!
//! ```text
//! p_i <- p_i + alpha_p * sum_{j in N_i} (x_i - x_j)
//! r_i <- r_i + alpha_r * (A_i x_i - b_i)
//! x_i <- argmin_x  J_i(x) + p_i^T x + r_i^T (A_i x - b_i)
//!                 + alpha_p * sum_{j in N_i} ||x - (x_i + x_j)/2||^2
//!                 + alpha_r * ||A_i x - b_i||^2
//! ```
//!
//! where all right-hand sides use the estimates from the start of the round.
//! The only thing exchanged between neighbours is `x_i`.

mod centralized;
mod cost;
mod executor;
mod inner;
mod updates;

pub use centralized::{centralized_general, centralized_quadratic, centralized_solve};
pub use cost::{LocalConstraint, LocalCost, QuadraticCost, SmoothCost, SumCost};
pub use executor::{
    run_rounds, run_rounds_with, ExecutionMode, Message, RoundDiagnostics, RunOptions, RunOutput, Transcript,
};
pub use inner::{minimize, InnerMethod, InnerResult, InnerSolverConfig};
pub use updates::{
    dual_update_p, dual_update_r, primal_update_general, primal_update_quadratic, LocalSubproblem, NeighborEstimates,
    QuadraticFactor,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Penalty weights and the fixed round count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha_p: f64,
    pub alpha_r: f64,
    pub iterations: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { alpha_p: 1.0, alpha_r: 1.0, iterations: 200 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0 && self.alpha_r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalties must be positive (alpha_p = {}, alpha_r = {})",
                self.alpha_p, self.alpha_r
            )));
        }
        Ok(())
    }
}

/// The data one node holds: its cost share, its constraints and its neighbours.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub cost: LocalCost,
    pub constraint: LocalConstraint,
    pub neighbors: Vec<usize>,
}

/// A distributed problem: `min sum_i J_i(x)` subject to every `A_i x = b_i`,
/// solved over a fixed communication graph.
///
/// The caller is responsible for the union of local constraints implying the
/// intended centralized constraint set.
#[derive(Debug, Clone)]
pub struct ConsensusProblem {
    dim: usize,
    nodes: Vec<NodeSpec>,
    pub hyper: Hyperparams,
    pub inner: InnerSolverConfig,
}

impl ConsensusProblem {
    pub fn new(dim: usize, nodes: Vec<NodeSpec>, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.cost.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "local cost dimension",
                    expected: dim,
                    actual: node.cost.dim(),
                });
            }
            if node.constraint.a.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    what: "local constraint columns",
                    expected: dim,
                    actual: node.constraint.a.ncols(),
                });
            }
            for &j in &node.neighbors {
                if j >= n {
                    return Err(Error::UnknownVertex(j));
                }
                if j == i {
                    return Err(Error::InvalidGraph(format!("node {i} lists itself as a neighbour")));
                }
                if !nodes[j].neighbors.contains(&i) {
                    return Err(Error::InvalidGraph(format!("neighbour lists are not symmetric for {{{i},{j}}}")));
                }
            }
        }
        Ok(Self { dim, nodes, hyper, inner: InnerSolverConfig::default() })
    }

    pub fn with_inner(mut self, inner: InnerSolverConfig) -> Self {
        self.inner = inner;
        self
    }

    pub fn with_hyper(mut self, hyper: Hyperparams) -> Self {
        self.hyper = hyper;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.neighbors.clone()).collect()
    }

    pub fn is_connected(&self) -> bool {
        crate::framework::is_connected(&self.neighbor_lists())
    }

    /// Number of undirected communication links.
    pub fn link_count(&self) -> usize {
        self.nodes.iter().map(|n| n.neighbors.len()).sum::<usize>() / 2
    }

    /// `J(x) = sum_i J_i(x)`.
    pub fn total_cost(&self, x: &DVector<f64>) -> f64 {
        self.nodes.iter().map(|n| n.cost.value(x)).sum()
    }

    /// All local constraints stacked in node order.
    pub fn stacked_constraints(&self) -> LocalConstraint {
        self.nodes
            .iter()
            .fold(LocalConstraint::empty(self.dim), |acc, n| acc.stack(&n.constraint))
    }

    pub fn all_quadratic(&self) -> bool {
        self.nodes.iter().all(|n| n.cost.is_quadratic())
    }

    /// Fresh states with every node starting from `x0` and zero multipliers.
    pub fn initial_states(&self, x0: &DVector<f64>) -> Vec<NodeAdmmState> {
        self.nodes
            .iter()
            .map(|n| NodeAdmmState::new(x0.clone(), n.constraint.rows()))
            .collect()
    }
}

/// One node's ADMM state: its copy of the decision vector and its multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAdmmState {
    pub x: DVector<f64>,
    /// Aggregated consistency multiplier; must start at zero.
    pub p: DVector<f64>,
    /// Multiplier of the local constraint rows.
    pub r: DVector<f64>,
}

impl NodeAdmmState {
    pub fn new(x: DVector<f64>, constraint_rows: usize) -> Self {
        let n = x.len();
        Self { x, p: DVector::zeros(n), r: DVector::zeros(constraint_rows) }
    }
}
