//! The teleoperation loop without any networking.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use truss_sim::scenario::Command;
use truss_sim::{RunRecord, Scenario, SimOptions, Simulation, StepRecord};

use crate::error::{Result, TeleopError};
use crate::protocol::{split_points, StateMessage};

pub const DEFAULT_HZ: f64 = 10.0;
/// ADMM rounds per phase per tick.
pub const DEFAULT_ITERATIONS: usize = 100;
/// Seconds after which an unrefreshed command decays to zero.
pub const DEFAULT_COMMAND_TIMEOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopConfig {
    /// The steered node, 1-based.
    pub node: usize,
    pub hz: f64,
    /// Round budget of both phases; `None` keeps the scenario's own.
    pub iterations: Option<usize>,
    pub command_timeout: f64,
}

impl TeleopConfig {
    pub fn new(node: usize) -> Self {
        Self { node, hz: DEFAULT_HZ, iterations: Some(DEFAULT_ITERATIONS), command_timeout: DEFAULT_COMMAND_TIMEOUT }
    }
}

/// The latest command and when it arrived. Later writes replace earlier
/// ones whoever sent them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandMailbox {
    latest: Option<(Vec<f64>, f64)>,
}

impl CommandMailbox {
    pub fn put(&mut self, v: Vec<f64>, at: f64) {
        self.latest = Some((v, at));
    }

    /// The velocity in force at `now`: the latest command unless it is older
    /// than `timeout`, otherwise zero.
    pub fn velocity(&self, now: f64, timeout: f64, dim: usize) -> Vec<f64> {
        match &self.latest {
            Some((v, at)) if now - at <= timeout + 1e-9 => v.clone(),
            _ => vec![0.0; dim],
        }
    }
}

/// One scenario run continuously with a single steerable node.
///
/// The steered node always holds a velocity constraint: the operator's
/// command while it is fresh and zero otherwise. No other node ever sees it.
pub struct TeleopSession {
    sim: Simulation,
    cfg: TeleopConfig,
    agent: usize,
    mailbox: CommandMailbox,
}

impl TeleopSession {
    /// Prepares `scenario` for live steering: its command script is dropped,
    /// its time step becomes the tick period and its round budget the
    /// configured one.
    pub fn new(mut scenario: Scenario, cfg: TeleopConfig, opts: SimOptions) -> Result<Self> {
        if !(cfg.hz > 0.0 && cfg.hz.is_finite()) {
            return Err(TeleopError::BadRate(cfg.hz));
        }
        scenario.commands.clear();
        scenario.dt = 1.0 / cfg.hz;
        scenario.override_hyper(cfg.iterations, None, None);
        let sim = Simulation::new(scenario, opts)?;
        let count = sim.robot().agent_count();
        if cfg.node == 0 || cfg.node > count {
            return Err(TeleopError::UnknownNode { node: cfg.node, count });
        }
        Ok(Self { sim, agent: cfg.node - 1, cfg, mailbox: CommandMailbox::default() })
    }

    pub fn config(&self) -> &TeleopConfig {
        &self.cfg
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn dim(&self) -> usize {
        self.sim.robot().dim()
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    /// Checks a client command against this session.
    pub fn validate(&self, node: usize, v: &[f64]) -> std::result::Result<(), String> {
        check_command(node, v, self.cfg.node, self.dim())
    }

    pub fn put_command(&mut self, v: Vec<f64>, at: f64) {
        self.mailbox.put(v, at);
    }

    /// Runs one step with the command in force at session time `now`.
    pub fn tick_at(&mut self, now: f64) -> Result<(StepRecord, StateMessage)> {
        let v = self.mailbox.velocity(now, self.cfg.command_timeout, self.dim());
        let step = self.sim.step_with(&[Command { agent: self.agent, v }])?;
        let state = self.state_message(Some(&step));
        Ok((step, state))
    }

    /// The broadcast for the current true state.
    pub fn state_message(&self, step: Option<&StepRecord>) -> StateMessage {
        let d = self.dim();
        let plans: BTreeMap<String, Vec<Vec<f64>>> = step
            .map(|s| s.plans.iter().enumerate().map(|(a, p)| ((a + 1).to_string(), split_points(p, d))).collect())
            .unwrap_or_default();
        StateMessage {
            t: self.sim.time(),
            points: split_points(self.sim.truth().coords().as_slice(), d),
            edges: self.sim.robot().graph().edges().to_vec(),
            plans,
            targets: self.sim.scenario().targets.clone(),
        }
    }
}

pub(crate) fn check_command(n: usize, v: &[f64], node: usize, dim: usize) -> std::result::Result<(), String> {
    if n != node {
        return Err(format!("command for node {n}, this session steers node {node}"));
    }
    if v.len() != dim {
        return Err(format!("velocity has {} components, expected {dim}", v.len()));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err("velocity is not finite".into());
    }
    Ok(())
}

/// A recorded command, as a client would have sent it at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: f64,
    pub node: usize,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandLog {
    /// Built-in scenario the log was recorded against.
    pub scenario: String,
    pub node: usize,
    pub hz: f64,
    pub entries: Vec<LogEntry>,
}

impl CommandLog {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn config(&self) -> TeleopConfig {
        TeleopConfig { hz: self.hz, ..TeleopConfig::new(self.node) }
    }
}

/// The left-then-right session shipped with the crate.
pub const LEFT_RIGHT_LOG: &str = include_str!("../logs/left_right.json");

/// Drives a session from a time-sorted command log for the scenario's step
/// count. Tick `k` happens at `t = k / hz` and sees every entry stamped at or
/// before it, exactly as if the entries had arrived over the wire.
pub fn headless_replay(
    scenario: &Scenario,
    log: &[LogEntry],
    cfg: TeleopConfig,
    opts: SimOptions,
) -> Result<RunRecord> {
    if let Some(k) = log.windows(2).position(|w| !(w[0].t <= w[1].t)) {
        return Err(TeleopError::UnsortedLog(k + 1));
    }
    let mut session = TeleopSession::new(scenario.clone(), cfg, opts)?;
    for e in log {
        session.validate(e.node, &e.v).map_err(TeleopError::BadCommand)?;
    }
    let mut record = session.sim.empty_record();
    let mut next = 0;
    for _ in 0..scenario.steps {
        let now = session.time();
        while next < log.len() && log[next].t <= now + 1e-9 {
            session.put_command(log[next].v.clone(), log[next].t);
            next += 1;
        }
        match session.tick_at(now) {
            Ok((step, _)) => record.steps.push(step),
            Err(e) => {
                record.error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(record)
}
