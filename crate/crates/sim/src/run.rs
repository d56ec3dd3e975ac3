//! The estimate, coordinate, act loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use truss_core::admm::{ConsensusProblem, ExecutionMode, LocalConstraint, RoundDiagnostics, RunOptions};
use truss_core::control::{
    build_control_problem, compute_action, coordinate_motion, lower_constraints, ControlObjective, EdgeLimitMonitor,
    VelocityConstraint, VelocityPlan,
};
use truss_core::estimation::{build_distance_problem, build_position_problem, estimate_state_with, AnchorSpec};
use truss_core::framework::{edge_lengths, rigidity_matrix};
use truss_core::isoperimetric::{
    build_isoperimetric_control_problem, build_isoperimetric_estimation_problem, roller_rates, IsoperimetricRobot,
};
use truss_core::linalg::lstsq;
use truss_core::Configuration;

use crate::error::{invalid, Result};
use crate::measure::{synthesize_measurements, MeasurementSet};
use crate::robot::Robot;
use crate::scenario::{Command, Scenario};

/// Projection passes used to put a configuration back on the module constraints.
const PROJECTION_PASSES: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub mode: ExecutionMode,
}

/// Wall-clock seconds spent in each phase of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub measure: f64,
    pub estimate: f64,
    pub control: f64,
    pub act: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagnostics {
    pub consensus_residual: f64,
    pub constraint_violation: f64,
    pub curves: RoundDiagnostics,
}

impl PhaseDiagnostics {
    fn from_rounds(curves: RoundDiagnostics) -> Self {
        Self {
            consensus_residual: curves.final_consensus_residual().unwrap_or(0.0),
            constraint_violation: curves.final_max_violation().unwrap_or(0.0),
            curves,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    EdgeRates,
    RollerRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Time at the start of the step.
    pub t: f64,
    pub commands: Vec<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<MeasurementSet>,
    /// Every agent's copy of the estimated configuration.
    pub estimates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<PhaseDiagnostics>,
    pub control: PhaseDiagnostics,
    /// Every agent's copy of the velocity plan.
    pub plans: Vec<Vec<f64>>,
    /// The plan executed: each agent's own block of its own copy.
    pub applied: Vec<f64>,
    pub action_kind: ActionKind,
    pub action: Vec<f64>,
    /// True configuration after the step.
    pub truth: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perimeter_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_q_residual: Option<f64>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub dim: usize,
    pub dt: f64,
    pub edges: Vec<[usize; 2]>,
    pub initial_truth: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Why the run stopped early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    /// Final true configuration.
    pub fn final_truth(&self) -> &[f64] {
        self.steps.last().map_or(&self.initial_truth, |s| &s.truth)
    }

    /// Position of point `p` after every step, starting with the initial one.
    pub fn point_track(&self, p: usize) -> Vec<Vec<f64>> {
        let d = self.dim;
        std::iter::once(&self.initial_truth)
            .chain(self.steps.iter().map(|s| &s.truth))
            .map(|x| x[p * d..(p + 1) * d].to_vec())
            .collect()
    }

    /// The record with every wall-clock field zeroed, for comparisons.
    pub fn without_timings(mut self) -> Self {
        for s in &mut self.steps {
            s.timings = PhaseTimings::default();
        }
        self
    }
}

/// A running scenario: the true robot, the agents' memory and the RNG.
pub struct Simulation {
    scenario: Scenario,
    robot: Robot,
    truth: Configuration,
    initial_truth: Configuration,
    /// Warm start for estimation.
    guess: Configuration,
    /// Warm start for coordination.
    last_plan: DVector<f64>,
    objective: ControlObjective,
    base_assignments: Vec<Vec<VelocityConstraint>>,
    ground: Vec<VelocityConstraint>,
    monitor: Option<EdgeLimitMonitor>,
    rng: ChaCha8Rng,
    step: usize,
    opts: SimOptions,
}

impl Simulation {
    pub fn new(scenario: Scenario, opts: SimOptions) -> Result<Self> {
        scenario.validate()?;
        let (robot, nominal) = scenario.build_robot()?;
        let truth = scenario.initial_truth(&robot, &nominal)?;
        let objective = scenario.control.objective.resolve(robot.graph(), &nominal)?;
        let base_assignments = scenario.control.assignments(&robot)?;
        let ground = scenario.control.ground_constraints(&robot)?;
        let monitor = scenario.control.edge_limit_list(robot.graph())?.map(EdgeLimitMonitor::new);
        let rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let last_plan = DVector::zeros(robot.graph().state_dim());
        Ok(Self {
            robot,
            initial_truth: truth.clone(),
            truth,
            guess: nominal,
            last_plan,
            objective,
            base_assignments,
            ground,
            monitor,
            rng,
            step: 0,
            opts,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn robot(&self) -> &Robot {
        &self.robot
    }

    pub fn truth(&self) -> &Configuration {
        &self.truth
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.dt
    }

    pub fn empty_record(&self) -> RunRecord {
        RunRecord {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            dim: self.robot.dim(),
            dt: self.scenario.dt,
            edges: self.robot.graph().edges().to_vec(),
            initial_truth: self.initial_truth.coords().iter().copied().collect(),
            steps: Vec::new(),
            error: None,
        }
    }

    /// Runs one step of the loop with the scenario's scripted commands.
    pub fn step(&mut self) -> Result<StepRecord> {
        let commands = self.scenario.commands_at(self.time());
        self.step_with(&commands)
    }

    /// Runs one step with the given node commands. Each command becomes a
    /// velocity constraint held by the commanded node only.
    pub fn step_with(&mut self, commands: &[Command]) -> Result<StepRecord> {
        let t = self.time();
        let mut timings = PhaseTimings::default();

        let clock = Instant::now();
        let measurements = match &self.scenario.estimation {
            Some(e) => Some(synthesize_measurements(&self.robot, e.mode, &self.truth, e.noise_std, &mut self.rng)?),
            None => None,
        };
        timings.measure = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (x_hat, estimates, estimation_error, estimation) = match &measurements {
            Some(m) => {
                let problem = self.estimation_problem(m)?;
                let out = estimate_state_with(&problem, &self.guess, Some(&self.truth), self.run_options())?;
                let mut x_hat = out.estimates[0].clone();
                if let Robot::Isoperimetric(iso) = &self.robot {
                    x_hat = self.settle(iso, x_hat)?;
                }
                self.guess = out.estimates[0].clone();
                let copies = out.estimates.iter().map(|e| e.coords().iter().copied().collect()).collect();
                (x_hat, copies, out.error, Some(PhaseDiagnostics::from_rounds(out.diagnostics)))
            }
            None => (self.truth.clone(), Vec::new(), None, None),
        };
        timings.estimate = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let mut assignments = self.command_assignments(commands)?;
        if let Some(m) = &mut self.monitor {
            m.update(&edge_lengths(self.robot.graph(), &x_hat)?.iter().copied().collect::<Vec<_>>())?;
            m.append_constraints(self.robot.graph(), &mut assignments);
        }
        let problem = self.control_problem(&x_hat, &assignments)?;
        let out = coordinate_motion(&problem, &self.last_plan, self.run_options())?;
        let applied = self.assemble(&out.plans);
        self.last_plan = applied.clone();
        timings.control = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let plan = VelocityPlan::new(applied.clone())?;
        let (action_kind, action) = match &self.robot {
            Robot::Truss(g) => (ActionKind::EdgeRates, compute_action(g, &x_hat, &plan)?),
            Robot::Isoperimetric(iso) => {
                (ActionKind::RollerRates, roller_rates(iso.layout(), iso.graph(), &x_hat, &plan.xdot)?)
            }
        };
        self.truth = self.actuate(&action)?;
        timings.act = clock.elapsed().as_secs_f64();

        let (perimeter_residual, max_q_residual) = match &self.robot {
            Robot::Isoperimetric(iso) => {
                (Some(iso.perimeter_residual(&self.truth)?), Some(iso.q_residuals(&self.truth)?.amax()))
            }
            Robot::Truss(_) => (None, None),
        };
        self.step += 1;
        Ok(StepRecord {
            step: self.step - 1,
            t,
            commands: commands.to_vec(),
            measurements,
            estimates,
            estimation_error,
            estimation,
            control: PhaseDiagnostics::from_rounds(out.diagnostics),
            plans: out.plans.iter().map(|p| p.xdot.iter().copied().collect()).collect(),
            applied: applied.iter().copied().collect(),
            action_kind,
            action: action.iter().copied().collect(),
            truth: self.truth.coords().iter().copied().collect(),
            perimeter_residual,
            max_q_residual,
            timings,
        })
    }

    fn run_options(&self) -> RunOptions {
        RunOptions { mode: self.opts.mode, record_transcript: false }
    }

    fn anchors(&self) -> Result<AnchorSpec> {
        let est = self.scenario.estimation.as_ref().ok_or_else(|| invalid("scenario has no estimation phase"))?;
        est.anchors.resolve(&self.robot, &self.truth)
    }

    fn estimation_problem(&self, m: &MeasurementSet) -> Result<ConsensusProblem> {
        let est = self.scenario.estimation.as_ref().ok_or_else(|| invalid("scenario has no estimation phase"))?;
        let anchors = self.anchors()?;
        let g = self.robot.graph();
        Ok(match (m, &self.robot) {
            (MeasurementSet::RelativePosition(m), _) => build_position_problem(g, m, &anchors, est.hyper)?,
            (MeasurementSet::RelativeDistance(m), _) => build_distance_problem(g, m, &anchors, est.hyper)?,
            (MeasurementSet::Encoder(r), Robot::Isoperimetric(iso)) => {
                build_isoperimetric_estimation_problem(iso, r, &anchors, est.q_weight, est.hyper)?
            }
            (MeasurementSet::Encoder(_), Robot::Truss(_)) => return Err(invalid("encoders need an isoperimetric robot")),
        })
    }

    /// The scenario's constraints plus one velocity constraint per command,
    /// held by the commanded node.
    fn command_assignments(&self, commands: &[Command]) -> Result<Vec<Vec<VelocityConstraint>>> {
        let mut assignments = self.base_assignments.clone();
        for c in commands {
            if c.agent >= self.robot.agent_count() {
                return Err(invalid(format!("command for unknown node {}", c.agent + 1)));
            }
            let vertex = self.robot.representative_point(c.agent);
            assignments[c.agent].push(VelocityConstraint::NodeVelocity { vertex, v: c.v.clone() });
        }
        Ok(assignments)
    }

    /// The coordination problem at `x_hat` under `commands`, with the warm
    /// start the next step would use.
    pub fn control_problem_at(&self, x_hat: &Configuration, commands: &[Command]) -> Result<(ConsensusProblem, DVector<f64>)> {
        let problem = self.control_problem(x_hat, &self.command_assignments(commands)?)?;
        Ok((problem, self.last_plan.clone()))
    }

    fn control_problem(&self, x_hat: &Configuration, assignments: &[Vec<VelocityConstraint>]) -> Result<ConsensusProblem> {
        let hyper = self.scenario.control.hyper;
        Ok(match &self.robot {
            Robot::Truss(g) => build_control_problem(g, x_hat, &self.objective, assignments, hyper)?,
            Robot::Isoperimetric(iso) => build_isoperimetric_control_problem(
                iso,
                x_hat,
                &self.objective,
                assignments,
                &self.scenario.control.perimeter_holder_ids(),
                hyper,
            )?,
        })
    }

    /// Each agent executes its own points' velocities from its own copy.
    fn assemble(&self, plans: &[VelocityPlan]) -> DVector<f64> {
        let d = self.robot.dim();
        let mut out = DVector::zeros(self.robot.graph().state_dim());
        for (a, plan) in plans.iter().enumerate() {
            for p in self.robot.agent_points(a) {
                out.rows_mut(p * d, d).copy_from(&plan.xdot.rows(p * d, d));
            }
        }
        out
    }

    fn ground_rows(&self, x: &Configuration) -> Result<LocalConstraint> {
        Ok(lower_constraints(self.robot.graph(), x, &self.ground)?)
    }

    /// Moves the true robot by what its actuators do, not by the plan.
    ///
    /// Edge-rate commands are realized on the true geometry: the true
    /// velocity is the least-squares solution of `R(x) xdot = action` with
    /// ground contacts held. Roller commands set the tube segment rates
    /// while the modules keep their shape.
    fn actuate(&self, action: &DVector<f64>) -> Result<Configuration> {
        let dt = self.scenario.dt;
        let x = &self.truth;
        let g = self.robot.graph();
        let ground = self.ground_rows(x)?;
        let (rows, rhs) = match &self.robot {
            Robot::Truss(_) => (rigidity_matrix(g, x)?, action.clone()),
            Robot::Isoperimetric(iso) => {
                let r = rigidity_matrix(g, x)?;
                let seg = iso.layout().edge_indices(g)?;
                let jq = iso.constraint_jacobian_q(x)?;
                let mut m = DMatrix::zeros(seg.len() + jq.nrows(), g.state_dim());
                for (row, &k) in seg.iter().enumerate() {
                    m.row_mut(row).copy_from(&r.row(k));
                }
                m.view_mut((seg.len(), 0), (jq.nrows(), g.state_dim())).copy_from(&jq);
                let mut b = DVector::zeros(m.nrows());
                b.rows_mut(0, seg.len()).copy_from(&(iso.layout().b_matrix() * action));
                (m, b)
            }
        };
        let n = rows.nrows();
        let mut a = DMatrix::zeros(n + ground.rows(), g.state_dim());
        a.view_mut((0, 0), (n, g.state_dim())).copy_from(&rows);
        a.view_mut((n, 0), (ground.rows(), g.state_dim())).copy_from(&ground.a);
        let mut b = DVector::zeros(n + ground.rows());
        b.rows_mut(0, n).copy_from(&rhs);
        b.rows_mut(n, ground.rows()).copy_from(&ground.b);
        let xdot = lstsq(&a, &b, 1e-10);
        let next = Configuration::new(x.dim(), x.coords() + dt * xdot)?;
        match &self.robot {
            Robot::Truss(_) => Ok(next),
            Robot::Isoperimetric(iso) => self.settle(iso, next),
        }
    }

    /// Projects onto the module and perimeter constraints, ground held.
    fn settle(&self, iso: &IsoperimetricRobot, mut x: Configuration) -> Result<Configuration> {
        for _ in 0..PROJECTION_PASSES {
            let hold = self.ground_rows(&x)?;
            let next = iso.project(&x, &hold)?;
            if next == x {
                break;
            }
            x = next;
        }
        Ok(x)
    }
}

/// Runs the scenario's full step count with its command script.
///
/// A failure mid-run stops the loop and is reported in the record along with
/// every step completed before it.
pub fn run_algorithm1(scenario: &Scenario, opts: SimOptions) -> Result<RunRecord> {
    let mut sim = Simulation::new(scenario.clone(), opts)?;
    let mut record = sim.empty_record();
    for _ in 0..scenario.steps {
        match sim.step() {
            Ok(s) => record.steps.push(s),
            Err(e) => {
                log::warn!("run {:?} stopped at step {}: {e}", scenario.name, sim.step_index());
                record.error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(record)
}

/// A single estimation phase from the scenario's initial truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub truth: Vec<f64>,
    pub estimates: Vec<Vec<f64>>,
    pub error: Option<f64>,
    pub diagnostics: PhaseDiagnostics,
    pub seconds: f64,
}

pub fn run_estimation(scenario: &Scenario, opts: SimOptions) -> Result<EstimationReport> {
    let mut sim = Simulation::new(scenario.clone(), opts)?;
    let est = scenario.estimation.as_ref().ok_or_else(|| invalid("scenario has no estimation phase"))?;
    let clock = Instant::now();
    let m = synthesize_measurements(&sim.robot, est.mode, &sim.truth, est.noise_std, &mut sim.rng)?;
    let problem = sim.estimation_problem(&m)?;
    let out = estimate_state_with(&problem, &sim.guess, Some(&sim.truth), sim.run_options())?;
    Ok(EstimationReport {
        truth: sim.truth.coords().iter().copied().collect(),
        estimates: out.estimates.iter().map(|e| e.coords().iter().copied().collect()).collect(),
        error: out.error,
        diagnostics: PhaseDiagnostics::from_rounds(out.diagnostics),
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// A single coordination phase on the true initial configuration with the
/// commands in force at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub commands: Vec<Command>,
    pub plans: Vec<Vec<f64>>,
    pub diagnostics: PhaseDiagnostics,
    pub seconds: f64,
}

pub fn run_control(scenario: &Scenario, opts: SimOptions) -> Result<ControlReport> {
    let sim = Simulation::new(scenario.clone(), opts)?;
    let commands = scenario.commands_at(0.0);
    let clock = Instant::now();
    let (problem, warm) = sim.control_problem_at(&sim.truth, &commands)?;
    let out = coordinate_motion(&problem, &warm, sim.run_options())?;
    Ok(ControlReport {
        commands,
        plans: out.plans.iter().map(|p| p.xdot.iter().copied().collect()).collect(),
        diagnostics: PhaseDiagnostics::from_rounds(out.diagnostics),
        seconds: clock.elapsed().as_secs_f64(),
    })
}
