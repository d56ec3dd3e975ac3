//! Velocity-space coordination.
//!
//! The decision variable is the stacked node velocity `xdot`. Nodes agree on a
//! plan that minimizes a shared cost while each node enforces only the
//! constraints it holds itself; consensus spreads them to everyone else.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{
    run_rounds_with, ConsensusProblem, Hyperparams, LocalConstraint, LocalCost, NodeSpec, QuadraticCost,
    RoundDiagnostics, RunOptions, Transcript,
};
use crate::framework::{edge_lengths, edge_rate_map, rigidity_matrix, Configuration, FrameworkGraph};
use crate::{Error, Result};

/// Fractional distance from a length limit at which the limit becomes active.
pub const EDGE_LIMIT_BAND: f64 = 0.02;
/// Additional retreat needed before an active limit is released.
pub const EDGE_LIMIT_HYSTERESIS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlObjective {
    /// `||R(x) xdot||^2`: move the actuators as little as possible.
    MinEdgeRate,
    /// `||xdot - v*||^2` with `v*` descending `||L(x) - L_nominal||^2`.
    NominalTracking { l_nominal: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitSide {
    AtMax,
    AtMin,
}

/// A linear equality on `xdot`, lowered to rows `(A, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VelocityConstraint {
    /// Every listed vertex stays still.
    FeetPinned { vertices: Vec<usize> },
    /// One coordinate of one vertex stays still.
    AxisPinned { vertex: usize, axis: usize },
    NodeVelocity { vertex: usize, v: Vec<f64> },
    /// Mass-weighted mean velocity equals `v`.
    CenterOfMass { masses: Vec<f64>, v: Vec<f64> },
    /// The edge neither grows nor shrinks: `R_k(x) xdot = 0`.
    EdgeLimitActive { edge: usize, side: LimitSide },
    Raw { a: Vec<Vec<f64>>, b: Vec<f64> },
}

impl VelocityConstraint {
    pub fn lower(&self, g: &FrameworkGraph, x: &Configuration) -> Result<LocalConstraint> {
        let d = g.dim();
        let nd = g.state_dim();
        let check_vertex = |v: usize| if v < g.n() { Ok(()) } else { Err(Error::UnknownVertex(v)) };
        let check_vec = |v: &[f64]| {
            if v.len() == d {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what: "constraint velocity", expected: d, actual: v.len() })
            }
        };
        match self {
            VelocityConstraint::FeetPinned { vertices } => {
                let mut a = DMatrix::zeros(vertices.len() * d, nd);
                for (r, &v) in vertices.iter().enumerate() {
                    check_vertex(v)?;
                    for k in 0..d {
                        a[(r * d + k, v * d + k)] = 1.0;
                    }
                }
                LocalConstraint::new(a, DVector::zeros(vertices.len() * d))
            }
            VelocityConstraint::AxisPinned { vertex, axis } => {
                check_vertex(*vertex)?;
                if *axis >= d {
                    return Err(Error::InvalidArgument(format!("axis {axis} outside dimension {d}")));
                }
                let mut a = DMatrix::zeros(1, nd);
                a[(0, vertex * d + axis)] = 1.0;
                LocalConstraint::new(a, DVector::zeros(1))
            }
            VelocityConstraint::NodeVelocity { vertex, v } => {
                check_vertex(*vertex)?;
                check_vec(v)?;
                let mut a = DMatrix::zeros(d, nd);
                for k in 0..d {
                    a[(k, vertex * d + k)] = 1.0;
                }
                LocalConstraint::new(a, DVector::from_column_slice(v))
            }
            VelocityConstraint::CenterOfMass { masses, v } => {
                check_vec(v)?;
                if masses.len() != g.n() {
                    return Err(Error::DimensionMismatch { what: "node masses", expected: g.n(), actual: masses.len() });
                }
                let total: f64 = masses.iter().sum();
                if !(total > 0.0) || masses.iter().any(|m| *m < 0.0) {
                    return Err(Error::InvalidArgument("masses must be nonnegative with a positive total".into()));
                }
                let mut a = DMatrix::zeros(d, nd);
                for (i, m) in masses.iter().enumerate() {
                    for k in 0..d {
                        a[(k, i * d + k)] = m / total;
                    }
                }
                LocalConstraint::new(a, DVector::from_column_slice(v))
            }
            VelocityConstraint::EdgeLimitActive { edge, .. } => {
                if *edge >= g.edge_count() {
                    return Err(Error::UnknownEdge(*edge));
                }
                let r = rigidity_matrix(g, x)?;
                LocalConstraint::new(r.rows(*edge, 1).into_owned(), DVector::zeros(1))
            }
            VelocityConstraint::Raw { a, b } => {
                if a.iter().any(|row| row.len() != nd) {
                    return Err(Error::DimensionMismatch { what: "raw constraint columns", expected: nd, actual: a.iter().map(Vec::len).find(|&l| l != nd).unwrap_or(nd) });
                }
                let m = DMatrix::from_fn(a.len(), nd, |r, c| a[r][c]);
                LocalConstraint::new(m, DVector::from_column_slice(b))
            }
        }
    }
}

/// Lowers and stacks one node's constraint list.
pub fn lower_constraints(g: &FrameworkGraph, x: &Configuration, list: &[VelocityConstraint]) -> Result<LocalConstraint> {
    list.iter()
        .try_fold(LocalConstraint::empty(g.state_dim()), |acc, c| Ok(acc.stack(&c.lower(g, x)?)))
}

/// An agreed node-velocity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityPlan {
    pub xdot: DVector<f64>,
}

impl VelocityPlan {
    pub fn new(xdot: DVector<f64>) -> Result<Self> {
        if xdot.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("velocity plan has non-finite entries".into()));
        }
        Ok(Self { xdot })
    }

    pub fn zeros(n: usize) -> Self {
        Self { xdot: DVector::zeros(n) }
    }
}

/// `v* = -R(x)^T (L(x) - L_nominal)`, the steepest-descent direction of
/// `1/2 ||L(x) - L_nominal||^2`.
pub fn target_velocity(g: &FrameworkGraph, x_hat: &Configuration, l_nominal: &[f64]) -> Result<DVector<f64>> {
    if l_nominal.len() != g.edge_count() {
        return Err(Error::DimensionMismatch { what: "nominal lengths", expected: g.edge_count(), actual: l_nominal.len() });
    }
    let l = edge_lengths(g, x_hat)?;
    let r = rigidity_matrix(g, x_hat)?;
    Ok(-r.tr_mul(&(&*l - DVector::from_column_slice(l_nominal))))
}

/// Per-vertex quadratic costs whose sum is the centralized control objective.
pub fn objective_costs(g: &FrameworkGraph, x_hat: &Configuration, objective: &ControlObjective) -> Result<Vec<QuadraticCost>> {
    x_hat.check_conforms(g)?;
    let d = g.dim();
    let nd = g.state_dim();
    match objective {
        ControlObjective::MinEdgeRate => {
            let r = rigidity_matrix(g, x_hat)?;
            let w = std::f64::consts::FRAC_1_SQRT_2;
            Ok((0..g.n())
                .map(|i| {
                    let inc = g.incident_edges(i);
                    let dm = DMatrix::from_fn(inc.len(), nd, |row, c| w * r[(inc[row], c)]);
                    QuadraticCost { d: dm, f: DVector::zeros(inc.len()) }
                })
                .collect())
        }
        ControlObjective::NominalTracking { l_nominal } => {
            if l_nominal.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::InvalidArgument("nominal lengths must be positive".into()));
            }
            let v = target_velocity(g, x_hat, l_nominal)?;
            Ok((0..g.n())
                .map(|i| {
                    let mut dm = DMatrix::zeros(d, nd);
                    for k in 0..d {
                        dm[(k, i * d + k)] = 1.0;
                    }
                    QuadraticCost { d: dm, f: -v.rows(i * d, d).into_owned() }
                })
                .collect())
        }
    }
}

/// One consensus agent per vertex, communicating along the robot's edges.
///
/// `assignments[i]` lists the constraints held by vertex `i` only.
pub fn build_control_problem(
    g: &FrameworkGraph,
    x_hat: &Configuration,
    objective: &ControlObjective,
    assignments: &[Vec<VelocityConstraint>],
    hyper: Hyperparams,
) -> Result<ConsensusProblem> {
    if assignments.len() != g.n() {
        return Err(Error::DimensionMismatch { what: "constraint assignments", expected: g.n(), actual: assignments.len() });
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let costs = objective_costs(g, x_hat, objective)?;
    let nodes = costs
        .into_iter()
        .zip(assignments)
        .enumerate()
        .map(|(i, (cost, list))| {
            Ok(NodeSpec {
                cost: LocalCost::Quadratic(cost),
                constraint: lower_constraints(g, x_hat, list)?,
                neighbors: g.neighbors(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ConsensusProblem::new(g.state_dim(), nodes, hyper)
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Every node's copy of the plan.
    pub plans: Vec<VelocityPlan>,
    pub diagnostics: RoundDiagnostics,
    pub transcript: Option<Transcript>,
}

/// Runs the consensus rounds from a common warm start.
pub fn coordinate_motion(problem: &ConsensusProblem, warm_start: &DVector<f64>, opts: RunOptions) -> Result<ControlOutput> {
    let out = run_rounds_with(problem, problem.initial_states(warm_start), opts)?;
    let plans = out
        .states
        .into_iter()
        .map(|s| VelocityPlan::new(s.x))
        .collect::<Result<Vec<_>>>()?;
    Ok(ControlOutput { plans, diagnostics: out.diagnostics, transcript: out.transcript })
}

/// Edge-rate actuator commands `R(x_hat) xdot`.
pub fn compute_action(g: &FrameworkGraph, x_hat: &Configuration, plan: &VelocityPlan) -> Result<DVector<f64>> {
    edge_rate_map(g, x_hat, &plan.xdot)
}

/// Explicit Euler step `x + dt * xdot`.
pub fn apply_plan(x: &Configuration, plan: &VelocityPlan, dt: f64) -> Result<Configuration> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if plan.xdot.len() != x.coords().len() {
        return Err(Error::DimensionMismatch { what: "plan", expected: x.coords().len(), actual: plan.xdot.len() });
    }
    Configuration::new(x.dim(), x.coords() + dt * &plan.xdot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLimit {
    pub min: f64,
    pub max: f64,
}

/// Tracks which edges sit at a length limit, with hysteresis.
#[derive(Debug, Clone)]
pub struct EdgeLimitMonitor {
    limits: Vec<Option<EdgeLimit>>,
    active: Vec<Option<LimitSide>>,
}

impl EdgeLimitMonitor {
    pub fn new(limits: Vec<Option<EdgeLimit>>) -> Self {
        let active = vec![None; limits.len()];
        Self { limits, active }
    }

    pub fn active(&self) -> &[Option<LimitSide>] {
        &self.active
    }

    /// Refreshes the active set from current lengths.
    pub fn update(&mut self, lengths: &[f64]) -> Result<()> {
        if lengths.len() != self.limits.len() {
            return Err(Error::DimensionMismatch { what: "edge lengths", expected: self.limits.len(), actual: lengths.len() });
        }
        for (k, (limit, &l)) in self.limits.iter().zip(lengths).enumerate() {
            let Some(lim) = limit else { continue };
            let near_max = l >= lim.max * (1.0 - EDGE_LIMIT_BAND);
            let near_min = l <= lim.min * (1.0 + EDGE_LIMIT_BAND);
            self.active[k] = match self.active[k] {
                Some(LimitSide::AtMax) if l >= lim.max * (1.0 - EDGE_LIMIT_BAND - EDGE_LIMIT_HYSTERESIS) => {
                    Some(LimitSide::AtMax)
                }
                Some(LimitSide::AtMin) if l <= lim.min * (1.0 + EDGE_LIMIT_BAND + EDGE_LIMIT_HYSTERESIS) => {
                    Some(LimitSide::AtMin)
                }
                _ if near_max => Some(LimitSide::AtMax),
                _ if near_min => Some(LimitSide::AtMin),
                _ => None,
            };
        }
        Ok(())
    }

    /// Adds a freeze row for every active edge at both of its endpoints.
    pub fn append_constraints(&self, g: &FrameworkGraph, assignments: &mut [Vec<VelocityConstraint>]) {
        for (k, side) in self.active.iter().enumerate() {
            if let Some(side) = side {
                for v in g.edges()[k] {
                    assignments[v].push(VelocityConstraint::EdgeLimitActive { edge: k, side: *side });
                }
            }
        }
    }
}
