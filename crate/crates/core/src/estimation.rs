//! Shape reconstruction problems built from local measurements.
//!
//! Two measurement models are supported. Relative-position measurements
//! `p_i + v_ij ~ p_j` give a quadratic per-node cost that is solved in closed
//! form every round. Edge-length measurements give a non-convex cost that is
//! invariant to rotations as well as translations and is solved numerically.
//! In both cases anchor rows held by a few nodes pin the remaining freedom.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{
    run_rounds_with, ConsensusProblem, Hyperparams, LocalConstraint, LocalCost, NodeSpec, QuadraticCost,
    RoundDiagnostics, RunOptions, SmoothCost,
};
use crate::framework::{edge_lengths, Configuration, FrameworkGraph};
use crate::linalg::numeric_rank;
use crate::{Error, Result};

/// Estimates within this mean node distance of the truth count as converged.
pub const DEFAULT_CLASSIFY_TOL: f64 = 0.05;

/// Maximum edge-length residual for an estimate to count as length-consistent.
pub const LENGTH_CONSISTENCY_TOL: f64 = 1e-3;

/// Node `i` observes `p_j - p_i ~ v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePositionMeasurement {
    pub i: usize,
    pub j: usize,
    pub v: Vec<f64>,
}

/// Measured length of edge `edge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMeasurement {
    pub edge: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPin {
    pub vertex: usize,
    pub axis: usize,
    pub value: f64,
}

/// Linear rows that remove the rigid-motion ambiguity of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnchorSpec {
    /// `sum_i p_i = 0`, held by vertex 0.
    CentroidAtOrigin,
    /// `p_node = position`, held by `node`.
    AnchoredNode { node: usize, position: Vec<f64> },
    /// Single coordinates fixed, each held by its own vertex.
    AxisPins { pins: Vec<AxisPin> },
}

impl AnchorSpec {
    /// Lowers the spec to per-vertex constraint rows over the stacked positions.
    pub fn lower(&self, g: &FrameworkGraph) -> Result<Vec<LocalConstraint>> {
        let d = g.dim();
        let nd = g.state_dim();
        let mut rows: Vec<(Vec<DVector<f64>>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); g.n()];
        match self {
            AnchorSpec::CentroidAtOrigin => {
                for a in 0..d {
                    let mut row = DVector::zeros(nd);
                    for i in 0..g.n() {
                        row[i * d + a] = 1.0;
                    }
                    rows[0].0.push(row);
                    rows[0].1.push(0.0);
                }
            }
            AnchorSpec::AnchoredNode { node, position } => {
                if *node >= g.n() {
                    return Err(Error::UnknownVertex(*node));
                }
                if position.len() != d {
                    return Err(Error::DimensionMismatch { what: "anchor position", expected: d, actual: position.len() });
                }
                for a in 0..d {
                    let mut row = DVector::zeros(nd);
                    row[node * d + a] = 1.0;
                    rows[*node].0.push(row);
                    rows[*node].1.push(position[a]);
                }
            }
            AnchorSpec::AxisPins { pins } => {
                for pin in pins {
                    if pin.vertex >= g.n() {
                        return Err(Error::UnknownVertex(pin.vertex));
                    }
                    if pin.axis >= d {
                        return Err(Error::InvalidArgument(format!("axis {} outside dimension {d}", pin.axis)));
                    }
                    let mut row = DVector::zeros(nd);
                    row[pin.vertex * d + pin.axis] = 1.0;
                    rows[pin.vertex].0.push(row);
                    rows[pin.vertex].1.push(pin.value);
                }
            }
        }
        Ok(rows
            .into_iter()
            .map(|(r, b)| {
                if r.is_empty() {
                    LocalConstraint::empty(nd)
                } else {
                    let a = DMatrix::from_rows(&r.iter().map(|v| v.transpose()).collect::<Vec<_>>());
                    LocalConstraint { a, b: DVector::from_vec(b) }
                }
            })
            .collect())
    }

    /// Pins every coordinate of `feet[..]` heights plus enough horizontal
    /// coordinates to remove all rigid motions of a 3D robot standing on three
    /// feet: `z` of all three, `x, y` of the first and `y` of the second.
    pub fn support_feet(feet: [usize; 3], truth: &Configuration) -> Self {
        let p = |v: usize, a: usize| truth.point(v)[a];
        let mut pins: Vec<AxisPin> = feet.iter().map(|&v| AxisPin { vertex: v, axis: 2, value: p(v, 2) }).collect();
        pins.push(AxisPin { vertex: feet[0], axis: 0, value: p(feet[0], 0) });
        pins.push(AxisPin { vertex: feet[0], axis: 1, value: p(feet[0], 1) });
        pins.push(AxisPin { vertex: feet[1], axis: 1, value: p(feet[1], 1) });
        AnchorSpec::AxisPins { pins }
    }
}

fn stacked_rows(parts: &[LocalConstraint], nd: usize) -> DMatrix<f64> {
    parts.iter().fold(LocalConstraint::empty(nd), |acc, c| acc.stack(c)).a
}

/// Per-node quadratic cost `J_i = sum_{j in N_i} ||p_j - p_i - v_ij||^2`.
///
/// Measurements may be given in one or both directions; a missing reverse
/// measurement is synthesized as `-v_ij`.
pub fn build_position_problem(
    g: &FrameworkGraph,
    measurements: &[RelativePositionMeasurement],
    anchors: &AnchorSpec,
    hyper: Hyperparams,
) -> Result<ConsensusProblem> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let d = g.dim();
    let nd = g.state_dim();
    let mut table: BTreeMap<(usize, usize), &[f64]> = BTreeMap::new();
    for m in measurements {
        if g.edge_index(m.i, m.j).is_none() {
            return Err(Error::InvalidArgument(format!("measurement between non-adjacent vertices {} and {}", m.i, m.j)));
        }
        if m.v.len() != d {
            return Err(Error::DimensionMismatch { what: "relative position", expected: d, actual: m.v.len() });
        }
        if table.insert((m.i, m.j), &m.v).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate measurement {} -> {}", m.i, m.j)));
        }
    }
    let lookup = |i: usize, j: usize| -> Result<DVector<f64>> {
        if let Some(v) = table.get(&(i, j)) {
            Ok(DVector::from_column_slice(v))
        } else if let Some(v) = table.get(&(j, i)) {
            Ok(-DVector::from_column_slice(v))
        } else {
            Err(Error::MissingMeasurement(g.edge_index(i, j).expect("adjacent")))
        }
    };

    let constraints = anchors.lower(g)?;
    let a_all = stacked_rows(&constraints, nd);
    let translations = crate::framework::rigid_motion_basis(&Configuration::new(d, DVector::zeros(nd))?)
        .columns(0, d)
        .into_owned();
    let found = numeric_rank(&(&a_all * translations), 1e-10);
    if found < d {
        return Err(Error::UnderAnchored { found, required: d });
    }

    let mut nodes = Vec::with_capacity(g.n());
    for (i, constraint) in constraints.into_iter().enumerate() {
        let nbrs = g.neighbors(i);
        let mut dm = DMatrix::zeros(nbrs.len() * d, nd);
        let mut f = DVector::zeros(nbrs.len() * d);
        for (r, &j) in nbrs.iter().enumerate() {
            let v = lookup(i, j)?;
            for a in 0..d {
                dm[(r * d + a, j * d + a)] = 1.0;
                dm[(r * d + a, i * d + a)] = -1.0;
                f[r * d + a] = -v[a];
            }
        }
        nodes.push(NodeSpec {
            cost: LocalCost::Quadratic(QuadraticCost { d: dm, f }),
            constraint,
            neighbors: nbrs,
        });
    }
    ConsensusProblem::new(nd, nodes, hyper)
}

/// One weighted squared length residual `w (||p_a - p_b|| - target)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthTerm {
    pub a: usize,
    pub b: usize,
    pub target: f64,
    pub weight: f64,
}

/// Sum of [`LengthTerm`]s over a stacked point vector.
///
/// At coincident endpoints the residual's gradient is taken as zero.
#[derive(Debug, Clone)]
pub struct LengthResidualCost {
    pub point_dim: usize,
    pub state_dim: usize,
    pub terms: Vec<LengthTerm>,
}

impl SmoothCost for LengthResidualCost {
    fn dim(&self) -> usize {
        self.state_dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let d = self.point_dim;
        self.terms
            .iter()
            .map(|t| {
                let len = (x.rows(t.a * d, d) - x.rows(t.b * d, d)).norm();
                t.weight * (len - t.target).powi(2)
            })
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.point_dim;
        let mut g = DVector::zeros(self.state_dim);
        let mut v = 0.0;
        for t in &self.terms {
            let diff = x.rows(t.a * d, d) - x.rows(t.b * d, d);
            let len = diff.norm();
            let res = len - t.target;
            v += t.weight * res * res;
            if len > 0.0 {
                let scaled = diff * (2.0 * t.weight * res / len);
                let mut ga = g.rows_mut(t.a * d, d);
                ga += &scaled;
                let mut gb = g.rows_mut(t.b * d, d);
                gb -= &scaled;
            }
        }
        (v, g)
    }
}

/// Per-node cost `J_i = 1/2 sum_{k adjacent to i} (L_k(x) - L_m,k)^2`.
///
/// Each edge appears at both endpoints with weight one half so that
/// `sum_i J_i` is exactly the centralized length cost.
pub fn build_distance_problem(
    g: &FrameworkGraph,
    measurements: &[DistanceMeasurement],
    anchors: &AnchorSpec,
    hyper: Hyperparams,
) -> Result<ConsensusProblem> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let nd = g.state_dim();
    let d = g.dim();
    let mut measured: Vec<Option<f64>> = vec![None; g.edge_count()];
    for m in measurements {
        if m.edge >= g.edge_count() {
            return Err(Error::UnknownEdge(m.edge));
        }
        if !(m.length >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative length for edge {}", m.edge)));
        }
        if measured[m.edge].replace(m.length).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate length for edge {}", m.edge)));
        }
    }
    let constraints = anchors.lower(g)?;
    let required = d * (d + 1) / 2;
    let found = numeric_rank(&stacked_rows(&constraints, nd), 1e-10);
    if found < required {
        return Err(Error::UnderAnchored { found, required });
    }

    let mut nodes = Vec::with_capacity(g.n());
    for (i, constraint) in constraints.into_iter().enumerate() {
        let mut terms = Vec::new();
        for k in g.incident_edges(i) {
            let [a, b] = g.edges()[k];
            let target = measured[k].ok_or(Error::MissingMeasurement(k))?;
            terms.push(LengthTerm { a, b, target, weight: 0.5 });
        }
        let cost = LengthResidualCost { point_dim: d, state_dim: nd, terms };
        nodes.push(NodeSpec { cost: LocalCost::General(Arc::new(cost)), constraint, neighbors: g.neighbors(i) });
    }
    ConsensusProblem::new(nd, nodes, hyper)
}

#[derive(Debug, Clone)]
pub struct EstimateOutput {
    /// Every node's copy of the reconstructed configuration.
    pub estimates: Vec<Configuration>,
    pub diagnostics: RoundDiagnostics,
    /// Mean node distance to the truth, evaluated on node 0's copy.
    pub error: Option<f64>,
}

pub fn estimate_state(
    problem: &ConsensusProblem,
    initial_guess: &Configuration,
    truth: Option<&Configuration>,
) -> Result<EstimateOutput> {
    estimate_state_with(problem, initial_guess, truth, RunOptions::default())
}

/// Runs the consensus rounds from a common initial guess.
pub fn estimate_state_with(
    problem: &ConsensusProblem,
    initial_guess: &Configuration,
    truth: Option<&Configuration>,
    opts: RunOptions,
) -> Result<EstimateOutput> {
    if initial_guess.coords().len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial guess",
            expected: problem.dim(),
            actual: initial_guess.coords().len(),
        });
    }
    let out = run_rounds_with(problem, problem.initial_states(initial_guess.coords()), opts)?;
    let d = initial_guess.dim();
    let estimates = out
        .states
        .into_iter()
        .map(|s| Configuration::new(d, s.x))
        .collect::<Result<Vec<_>>>()?;
    let error = truth.map(|t| estimates[0].mean_point_distance(t));
    Ok(EstimateOutput { estimates, diagnostics: out.diagnostics, error })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionClass {
    ConvergedToTruth,
    /// Far from the truth. `length_consistent` separates genuine alternate
    /// realizations of the measured lengths from unfinished iterates.
    AlternateMinimum { length_consistent: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: SolutionClass,
    pub mean_error: f64,
    /// `max_k |L_k(estimate) - L_k(truth)|`.
    pub max_length_residual: f64,
}

pub fn classify_solution(
    g: &FrameworkGraph,
    estimate: &Configuration,
    truth: &Configuration,
    tol: f64,
) -> Result<Classification> {
    let mean_error = estimate.mean_point_distance(truth);
    let le = edge_lengths(g, estimate)?;
    let lt = edge_lengths(g, truth)?;
    let max_length_residual = (&*le - &*lt).amax();
    let class = if mean_error <= tol {
        SolutionClass::ConvergedToTruth
    } else {
        SolutionClass::AlternateMinimum { length_consistent: max_length_residual <= LENGTH_CONSISTENCY_TOL }
    };
    Ok(Classification { class, mean_error, max_length_residual })
}

/// Exact relative-position measurements in both directions along every edge.
pub fn exact_position_measurements(g: &FrameworkGraph, x: &Configuration) -> Vec<RelativePositionMeasurement> {
    let mut out = Vec::with_capacity(2 * g.edge_count());
    for &[i, j] in g.edges() {
        let v: Vec<f64> = (x.point(j) - x.point(i)).iter().copied().collect();
        out.push(RelativePositionMeasurement { i, j, v: v.clone() });
        out.push(RelativePositionMeasurement { i: j, j: i, v: v.iter().map(|c| -c).collect() });
    }
    out
}

/// Exact length measurements for every edge.
pub fn exact_distance_measurements(g: &FrameworkGraph, x: &Configuration) -> Result<Vec<DistanceMeasurement>> {
    Ok(edge_lengths(g, x)?
        .iter()
        .enumerate()
        .map(|(edge, &length)| DistanceMeasurement { edge, length })
        .collect())
}
