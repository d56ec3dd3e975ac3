//! Scenario files.
//!
//! Scenarios are JSON. Every vertex, node and edge id in a file is 1-based;
//! conversion to the 0-based ids used by `truss-core` happens here and
//! nowhere else. Lengths are in meters and times in seconds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use truss_core::admm::Hyperparams;
use truss_core::control::{ControlObjective, EdgeLimit, VelocityConstraint};
use truss_core::estimation::{AnchorSpec, AxisPin};
use truss_core::framework::edge_lengths;
use truss_core::isoperimetric::{IsoperimetricRobot, RollerTriangleSpec};
use truss_core::robots::{octahedron, six_node_planar};
use truss_core::{Configuration, FrameworkGraph};

use crate::error::{invalid, Result};
use crate::perturb::perturbed_lengths;
use crate::robot::Robot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotSpec,
    /// Initial true configuration; the nominal shape when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSpec>,
    /// When absent the controller sees the true configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationSpec>,
    pub control: ControlSpec,
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub commands: Vec<TimedCommand>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RobotSpec {
    /// Unit-edge octahedron standing on nodes 1, 2, 3.
    Octahedron,
    /// Planar six-node, nine-edge truss with node 6 on top.
    SixNodePlanar,
    Truss {
        dim: usize,
        nodes: Vec<Vec<f64>>,
        edges: Vec<[usize; 2]>,
    },
    /// Passive node 1 and two three-point roller modules (nodes 2 and 3).
    RollerTriangle {
        l_tot: f64,
        r: [f64; 2],
        l_ab: f64,
        l_bc: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Explicit point positions, one per kinematic point.
    Points { points: Vec<Vec<f64>> },
    /// Nominal edge lengths scaled by Gaussian draws, realized by damped
    /// Gauss-Newton with the listed nodes held in place.
    PerturbedLengths {
        std: f64,
        seed: u64,
        #[serde(default)]
        hold: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementMode {
    RelativePosition,
    RelativeDistance,
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSpec {
    pub mode: MeasurementMode,
    /// Standard deviation of the additive measurement noise.
    #[serde(default)]
    pub noise_std: f64,
    pub anchors: AnchorFile,
    pub hyper: Hyperparams,
    /// Weight of the module constraint penalty (encoder mode only).
    #[serde(default = "one")]
    pub q_weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Anchor rows. Pinned values are read from the true configuration, which is
/// how a foot resting on known ground would report them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnchorFile {
    CentroidAtOrigin,
    Node { node: usize },
    /// Heights of all three feet, x and y of the first, y of the second.
    SupportFeet { feet: [usize; 3] },
    AxisPins { pins: Vec<PinFile> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinFile {
    pub node: usize,
    pub axis: Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub objective: ObjectiveFile,
    #[serde(default)]
    pub constraints: Vec<HeldConstraint>,
    pub hyper: Hyperparams,
    /// Nodes holding the constant-perimeter row (isoperimetric robots).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perimeter_holders: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_limits: Vec<EdgeLimitFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveFile {
    MinEdgeRate,
    /// Track `l_nominal`, or the lengths of the nominal shape when omitted.
    NominalTracking {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l_nominal: Option<Vec<f64>>,
    },
}

/// A constraint and the node that knows about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldConstraint {
    pub holder: usize,
    pub constraint: ConstraintFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintFile {
    FeetPinned { nodes: Vec<usize> },
    AxisPinned { node: usize, axis: Axis },
    NodeVelocity { node: usize, v: Vec<f64> },
    CenterOfMass { masses: Vec<f64>, v: Vec<f64> },
    Raw { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeLimitFile {
    pub edge: usize,
    pub min: f64,
    pub max: f64,
}

/// From time `t` on, `node` is commanded to move with velocity `v` until the
/// next command for the same node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedCommand {
    pub t: f64,
    pub node: usize,
    pub v: Vec<f64>,
}

/// A square (cube) target region for teleoperation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub center: Vec<f64>,
    pub half_width: f64,
}

/// A velocity command for one node, 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub agent: usize,
    pub v: Vec<f64>,
}

fn zero_based(id: usize, count: usize, what: &str) -> Result<usize> {
    if id == 0 || id > count {
        return Err(invalid(format!("{what} {id} out of range 1..={count}")));
    }
    Ok(id - 1)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds the robot and its nominal configuration.
    pub fn build_robot(&self) -> Result<(Robot, Configuration)> {
        Ok(match &self.robot {
            RobotSpec::Octahedron => {
                let (g, x) = octahedron()?;
                (Robot::Truss(g), x)
            }
            RobotSpec::SixNodePlanar => {
                let (g, x) = six_node_planar()?;
                (Robot::Truss(g), x)
            }
            RobotSpec::Truss { dim, nodes, edges } => {
                let g = FrameworkGraph::from_one_based(nodes.len(), *dim, edges)?;
                (Robot::Truss(g), Configuration::from_points(*dim, nodes)?)
            }
            RobotSpec::RollerTriangle { l_tot, r, l_ab, l_bc } => {
                let spec = RollerTriangleSpec { l_tot: *l_tot, r: *r, l_ab: *l_ab, l_bc: *l_bc };
                let (robot, x) = IsoperimetricRobot::roller_triangle(spec)?;
                (Robot::Isoperimetric(robot), x)
            }
        })
    }

    pub fn initial_truth(&self, robot: &Robot, nominal: &Configuration) -> Result<Configuration> {
        match &self.truth {
            None => Ok(nominal.clone()),
            Some(TruthSpec::Points { points }) => {
                let x = Configuration::from_points(robot.dim(), points)?;
                x.check_conforms(robot.graph())?;
                Ok(x)
            }
            Some(TruthSpec::PerturbedLengths { std, seed, hold }) => {
                let n = robot.point_count();
                let hold = hold.iter().map(|&h| zero_based(h, n, "held node")).collect::<Result<Vec<_>>>()?;
                perturbed_lengths(robot.graph(), nominal, *std, *seed, &hold)
            }
        }
    }

    /// Checks every reference in the file by building everything once.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        let (robot, nominal) = self.build_robot()?;
        let truth = self.initial_truth(&robot, &nominal)?;
        if let Some(est) = &self.estimation {
            est.hyper.validate()?;
            if !(est.noise_std >= 0.0) {
                return Err(invalid("noise_std must be nonnegative"));
            }
            let iso = matches!(robot, Robot::Isoperimetric(_));
            if iso != (est.mode == MeasurementMode::Encoder) {
                return Err(invalid("encoder measurements go with isoperimetric robots and only with them"));
            }
            est.anchors.resolve(&robot, &truth)?;
        }
        self.control.hyper.validate()?;
        self.control.objective.resolve(robot.graph(), &nominal)?;
        self.control.assignments(&robot)?;
        for &h in &self.control.perimeter_holders {
            zero_based(h, robot.agent_count(), "perimeter holder")?;
        }
        if !self.control.perimeter_holders.is_empty() && robot.as_isoperimetric().is_none() {
            return Err(invalid("perimeter holders given for a robot without a tube"));
        }
        if robot.as_isoperimetric().is_some() && self.control.perimeter_holders.is_empty() {
            return Err(invalid("an isoperimetric robot needs at least one perimeter holder"));
        }
        self.control.edge_limit_list(robot.graph())?;
        for (k, c) in self.commands.iter().enumerate() {
            zero_based(c.node, robot.agent_count(), "commanded node")?;
            if c.v.len() != robot.dim() {
                return Err(invalid(format!("command {} has a {}-vector in {} dimensions", k + 1, c.v.len(), robot.dim())));
            }
            if !c.t.is_finite() || c.v.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("command {} is not finite", k + 1)));
            }
        }
        for t in &self.targets {
            if t.center.len() != robot.dim() || !(t.half_width > 0.0) {
                return Err(invalid("targets need a center in the robot's dimension and a positive half width"));
            }
        }
        Ok(())
    }

    /// The commands in force at time `t`, one per commanded node.
    pub fn commands_at(&self, t: f64) -> Vec<Command> {
        let mut latest: std::collections::BTreeMap<usize, &TimedCommand> = Default::default();
        for c in &self.commands {
            if c.t <= t + 1e-9 {
                let slot = latest.entry(c.node).or_insert(c);
                if c.t >= slot.t {
                    *slot = c;
                }
            }
        }
        latest.into_iter().map(|(node, c)| Command { agent: node - 1, v: c.v.clone() }).collect()
    }

    /// Overrides the round count and penalties of both phases.
    pub fn override_hyper(&mut self, iterations: Option<usize>, alpha_p: Option<f64>, alpha_r: Option<f64>) {
        let apply = |h: &mut Hyperparams| {
            if let Some(i) = iterations {
                h.iterations = i;
            }
            if let Some(a) = alpha_p {
                h.alpha_p = a;
            }
            if let Some(a) = alpha_r {
                h.alpha_r = a;
            }
        };
        if let Some(e) = &mut self.estimation {
            apply(&mut e.hyper);
        }
        apply(&mut self.control.hyper);
    }
}

impl AnchorFile {
    pub fn resolve(&self, robot: &Robot, truth: &Configuration) -> Result<AnchorSpec> {
        let n = robot.point_count();
        let d = robot.dim();
        let value = |p: usize| truth.point(p).iter().copied().collect::<Vec<f64>>();
        Ok(match self {
            AnchorFile::CentroidAtOrigin => AnchorSpec::CentroidAtOrigin,
            AnchorFile::Node { node } => {
                let p = zero_based(*node, n, "anchor node")?;
                AnchorSpec::AnchoredNode { node: p, position: value(p) }
            }
            AnchorFile::SupportFeet { feet } => {
                if d != 3 {
                    return Err(invalid("support-feet anchors are three-dimensional"));
                }
                let mut f = [0; 3];
                for (slot, &id) in f.iter_mut().zip(feet) {
                    *slot = zero_based(id, n, "foot")?;
                }
                AnchorSpec::support_feet(f, truth)
            }
            AnchorFile::AxisPins { pins } => AnchorSpec::AxisPins {
                pins: pins
                    .iter()
                    .map(|pin| {
                        let p = zero_based(pin.node, n, "pinned node")?;
                        let axis = pin.axis.index();
                        if axis >= d {
                            return Err(invalid(format!("axis {:?} in {d} dimensions", pin.axis)));
                        }
                        Ok(AxisPin { vertex: p, axis, value: truth.point(p)[axis] })
                    })
                    .collect::<Result<_>>()?,
            },
        })
    }
}

impl ObjectiveFile {
    pub fn resolve(&self, g: &FrameworkGraph, nominal: &Configuration) -> Result<ControlObjective> {
        Ok(match self {
            ObjectiveFile::MinEdgeRate => ControlObjective::MinEdgeRate,
            ObjectiveFile::NominalTracking { l_nominal: Some(l) } => {
                if l.len() != g.edge_count() {
                    return Err(invalid(format!("{} nominal lengths for {} edges", l.len(), g.edge_count())));
                }
                ControlObjective::NominalTracking { l_nominal: l.clone() }
            }
            ObjectiveFile::NominalTracking { l_nominal: None } => {
                ControlObjective::NominalTracking { l_nominal: edge_lengths(g, nominal)?.iter().copied().collect() }
            }
        })
    }
}

impl ConstraintFile {
    pub fn resolve(&self, robot: &Robot) -> Result<VelocityConstraint> {
        let n = robot.point_count();
        let d = robot.dim();
        let axis_of = |a: Axis| {
            if a.index() < d {
                Ok(a.index())
            } else {
                Err(invalid(format!("axis {a:?} in {d} dimensions")))
            }
        };
        Ok(match self {
            ConstraintFile::FeetPinned { nodes } => VelocityConstraint::FeetPinned {
                vertices: nodes.iter().map(|&v| zero_based(v, n, "pinned node")).collect::<Result<_>>()?,
            },
            ConstraintFile::AxisPinned { node, axis } => {
                VelocityConstraint::AxisPinned { vertex: zero_based(*node, n, "pinned node")?, axis: axis_of(*axis)? }
            }
            ConstraintFile::NodeVelocity { node, v } => {
                VelocityConstraint::NodeVelocity { vertex: zero_based(*node, n, "node")?, v: v.clone() }
            }
            ConstraintFile::CenterOfMass { masses, v } => {
                VelocityConstraint::CenterOfMass { masses: masses.clone(), v: v.clone() }
            }
            ConstraintFile::Raw { a, b } => VelocityConstraint::Raw { a: a.clone(), b: b.clone() },
        })
    }

    /// Whether the constraint describes ground contact rather than a task.
    pub fn is_ground(&self) -> bool {
        matches!(self, ConstraintFile::FeetPinned { .. } | ConstraintFile::AxisPinned { .. })
    }
}

impl ControlSpec {
    /// Per-agent constraint lists, 0-based, without commands.
    pub fn assignments(&self, robot: &Robot) -> Result<Vec<Vec<VelocityConstraint>>> {
        let mut out = vec![Vec::new(); robot.agent_count()];
        for held in &self.constraints {
            let a = zero_based(held.holder, robot.agent_count(), "constraint holder")?;
            let c = held.constraint.resolve(robot)?;
            // lowering catches size mismatches now rather than mid-run
            c.lower(robot.graph(), &Configuration::new(robot.dim(), nalgebra::DVector::from_fn(robot.graph().state_dim(), |k, _| k as f64))?)
                .map_err(|e| invalid(format!("constraint held by node {}: {e}", held.holder)))?;
            out[a].push(c);
        }
        Ok(out)
    }

    /// The ground-contact constraints, which also hold the true robot.
    pub fn ground_constraints(&self, robot: &Robot) -> Result<Vec<VelocityConstraint>> {
        self.constraints.iter().filter(|h| h.constraint.is_ground()).map(|h| h.constraint.resolve(robot)).collect()
    }

    pub fn perimeter_holder_ids(&self) -> Vec<usize> {
        self.perimeter_holders.iter().map(|h| h - 1).collect()
    }

    pub fn edge_limit_list(&self, g: &FrameworkGraph) -> Result<Option<Vec<Option<EdgeLimit>>>> {
        if self.edge_limits.is_empty() {
            return Ok(None);
        }
        let mut limits = vec![None; g.edge_count()];
        for l in &self.edge_limits {
            let k = zero_based(l.edge, g.edge_count(), "limited edge")?;
            if !(l.min > 0.0 && l.max > l.min) {
                return Err(invalid(format!("edge {} limits need 0 < min < max", l.edge)));
            }
            limits[k] = Some(EdgeLimit { min: l.min, max: l.max });
        }
        Ok(Some(limits))
    }
}

/// Scenario files shipped with the crate.
pub mod builtin {
    use super::Scenario;

    pub const OCTAHEDRON_POSITION: &str = include_str!("../scenarios/octahedron_position.json");
    pub const OCTAHEDRON_DISTANCE: &str = include_str!("../scenarios/octahedron_distance.json");
    pub const SIX_NODE_CONTROL: &str = include_str!("../scenarios/six_node_control.json");
    pub const SIX_NODE_INTEGRATED: &str = include_str!("../scenarios/six_node_integrated.json");
    pub const ROLLER_TRIANGLE: &str = include_str!("../scenarios/roller_triangle.json");

    pub const NAMES: [&str; 5] =
        ["octahedron-position", "octahedron-distance", "six-node-control", "six-node-integrated", "roller-triangle"];

    pub fn get(name: &str) -> Option<Scenario> {
        let text = match name {
            "octahedron-position" => OCTAHEDRON_POSITION,
            "octahedron-distance" => OCTAHEDRON_DISTANCE,
            "six-node-control" => SIX_NODE_CONTROL,
            "six-node-integrated" => SIX_NODE_INTEGRATED,
            "roller-triangle" => ROLLER_TRIANGLE,
            _ => return None,
        };
        Some(Scenario::from_json(text).expect("shipped scenarios are valid"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse_and_round_trip() {
        for name in builtin::NAMES {
            let s = builtin::get(name).unwrap();
            let again = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(s, again, "{name}");
        }
    }

    #[test]
    fn commands_hold_until_replaced() {
        let mut s = builtin::get("six-node-integrated").unwrap();
        s.commands = vec![
            TimedCommand { t: 0.0, node: 6, v: vec![1.0, 0.0] },
            TimedCommand { t: 2.0, node: 6, v: vec![-1.0, 0.0] },
        ];
        assert_eq!(s.commands_at(1.9)[0].v, vec![1.0, 0.0]);
        assert_eq!(s.commands_at(2.0)[0].v, vec![-1.0, 0.0]);
        assert_eq!(s.commands_at(2.0)[0].agent, 5);
        s.commands[0].t = 0.5;
        assert!(s.commands_at(0.1).is_empty());
    }

    #[test]
    fn ids_are_one_based() {
        let mut s = builtin::get("six-node-control").unwrap();
        s.control.constraints.push(HeldConstraint { holder: 7, constraint: ConstraintFile::FeetPinned { nodes: vec![1] } });
        assert!(s.validate().is_err());
        let mut s = builtin::get("six-node-control").unwrap();
        s.control.constraints.push(HeldConstraint { holder: 1, constraint: ConstraintFile::FeetPinned { nodes: vec![0] } });
        assert!(s.validate().is_err());
        let mut s = builtin::get("six-node-control").unwrap();
        s.commands.push(TimedCommand { t: 0.0, node: 1, v: vec![0.0, 0.0, 0.0] });
        assert!(s.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(builtin::SIX_NODE_CONTROL).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }
}
