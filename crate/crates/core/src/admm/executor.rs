//! Synchronous round executor.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::LocalCost;
use super::updates::{
    dual_update_p, dual_update_r, primal_update_general, primal_update_quadratic, QuadraticFactor,
};
use super::{ConsensusProblem, NodeAdmmState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionMode {
    /// Nodes are updated one after another in id order.
    #[default]
    Sequential,
    /// Nodes within a round are updated on the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub mode: ExecutionMode,
    /// Keep every exchanged message.
    pub record_transcript: bool,
}

/// A single estimate sent from one node to a neighbour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub payload: DVector<f64>,
}

pub type Transcript = Vec<Message>;

/// Per-round convergence curves. Index `[round][node]` where two-dimensional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    /// `max ||x_i - x_j||` over communication links after each round.
    pub consensus_residual: Vec<f64>,
    /// `||A_i x_i - b_i||` per node after each round.
    pub constraint_violation: Vec<Vec<f64>>,
    /// `J(x_i) = sum_k J_k(x_i)` per node after each round.
    pub centralized_cost: Vec<Vec<f64>>,
}

impl RoundDiagnostics {
    pub fn rounds(&self) -> usize {
        self.consensus_residual.len()
    }

    pub fn final_consensus_residual(&self) -> Option<f64> {
        self.consensus_residual.last().copied()
    }

    pub fn final_max_violation(&self) -> Option<f64> {
        self.constraint_violation
            .last()
            .map(|v| v.iter().cloned().fold(0.0, f64::max))
    }

    /// Largest per-node constraint violation of each round.
    pub fn max_violation_curve(&self) -> Vec<f64> {
        self.constraint_violation
            .iter()
            .map(|v| v.iter().cloned().fold(0.0, f64::max))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub states: Vec<NodeAdmmState>,
    pub diagnostics: RoundDiagnostics,
    pub transcript: Option<Transcript>,
}

impl RunOutput {
    pub fn estimates(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.x.clone()).collect()
    }
}

pub fn run_rounds(problem: &ConsensusProblem, initial: Vec<NodeAdmmState>) -> Result<RunOutput> {
    run_rounds_with(problem, initial, RunOptions::default())
}

enum Prepared {
    Quadratic(QuadraticFactor),
    General,
}

/// Runs exactly `problem.hyper.iterations` synchronous rounds.
///
/// Each round every node sends its current `x_i` to each neighbour, then
/// applies the `p`, `r` and primal updates against that snapshot. Sequential
/// and parallel modes produce bit-identical results.
pub fn run_rounds_with(problem: &ConsensusProblem, initial: Vec<NodeAdmmState>, opts: RunOptions) -> Result<RunOutput> {
    let n = problem.node_count();
    if initial.len() != n {
        return Err(Error::DimensionMismatch { what: "initial node states", expected: n, actual: initial.len() });
    }
    for (i, s) in initial.iter().enumerate() {
        let rows = problem.nodes()[i].constraint.rows();
        if s.x.len() != problem.dim() || s.p.len() != problem.dim() || s.r.len() != rows {
            return Err(Error::DimensionMismatch { what: "node state", expected: problem.dim(), actual: s.x.len() });
        }
    }
    if !problem.is_connected() {
        return Err(Error::Disconnected);
    }

    let prepared: Vec<Prepared> = problem
        .nodes()
        .iter()
        .map(|node| match &node.cost {
            LocalCost::Quadratic(q) => {
                QuadraticFactor::new(q, &node.constraint, node.neighbors.len(), &problem.hyper).map(Prepared::Quadratic)
            }
            LocalCost::General(_) => Ok(Prepared::General),
        })
        .collect::<Result<_>>()?;

    let mut states = initial;
    let mut diagnostics = RoundDiagnostics::default();
    let mut transcript = opts.record_transcript.then(Vec::new);
    let hyper = problem.hyper;

    for round in 0..hyper.iterations {
        // exchange: every node receives the neighbours' x_i^k
        let snapshot: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
        if let Some(t) = transcript.as_mut() {
            for (i, node) in problem.nodes().iter().enumerate() {
                for &j in &node.neighbors {
                    t.push(Message { round, from: i, to: j, payload: snapshot[i].clone() });
                }
            }
        }

        let step = |i: usize, state: &NodeAdmmState| -> Result<NodeAdmmState> {
            let node = &problem.nodes()[i];
            let mut next = state.clone();
            next.p = dual_update_p(state, i, &node.neighbors, &snapshot, hyper.alpha_p)?;
            next.r = dual_update_r(state, &node.constraint, hyper.alpha_r);
            next.x = match (&prepared[i], &node.cost) {
                (Prepared::Quadratic(f), _) => primal_update_quadratic(
                    &next,
                    i,
                    &node.neighbors,
                    &snapshot,
                    &node.constraint,
                    f,
                    hyper.alpha_p,
                )?,
                (Prepared::General, cost) => primal_update_general(
                    &next,
                    i,
                    &node.neighbors,
                    &snapshot,
                    cost.as_smooth(),
                    &node.constraint,
                    &hyper,
                    &problem.inner,
                )?,
            };
            Ok(next)
        };

        states = match opts.mode {
            ExecutionMode::Sequential => states.iter().enumerate().map(|(i, s)| step(i, s)).collect::<Result<_>>()?,
            ExecutionMode::Parallel => states.par_iter().enumerate().map(|(i, s)| step(i, s)).collect::<Result<_>>()?,
        };

        record_round(problem, &states, &mut diagnostics);
    }

    Ok(RunOutput { states, diagnostics, transcript })
}

fn record_round(problem: &ConsensusProblem, states: &[NodeAdmmState], diag: &mut RoundDiagnostics) {
    let mut residual: f64 = 0.0;
    for (i, node) in problem.nodes().iter().enumerate() {
        for &j in &node.neighbors {
            if j > i {
                residual = residual.max((&states[i].x - &states[j].x).norm());
            }
        }
    }
    diag.consensus_residual.push(residual);
    diag.constraint_violation.push(
        problem
            .nodes()
            .iter()
            .zip(states)
            .map(|(node, s)| node.constraint.violation(&s.x))
            .collect(),
    );
    diag.centralized_cost
        .push(states.iter().map(|s| problem.total_cost(&s.x)).collect());
}
