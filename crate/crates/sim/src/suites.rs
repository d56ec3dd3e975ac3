//! The reference experiments.
//!
//! Every suite runs a fixed grid of scenarios with fixed seeds, so two runs
//! of the same suite produce the same tables apart from wall-clock columns.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use truss_core::admm::{centralized_solve, RunOptions};
use truss_core::control::coordinate_motion;
use truss_core::estimation::{classify_solution, estimate_state_with, SolutionClass, DEFAULT_CLASSIFY_TOL};
use truss_core::Configuration;

use crate::error::{invalid, Result, SimError};
use crate::run::{run_algorithm1, run_estimation, SimOptions, Simulation};
use crate::scenario::{builtin, Scenario};

pub const SUITE_NAMES: [&str; 5] =
    ["octahedron-noise", "init-perturbation", "control-convergence", "integrated-2d", "isoperimetric-teleop-script"];

/// Measurement noise levels of the estimation sweep, in meters.
pub const ESTIMATION_NOISE_LEVELS: [f64; 4] = [0.0, 0.01, 0.25, 0.5];
/// Seeds per noise level.
pub const NOISE_SEEDS: u64 = 20;
/// Initial-guess perturbation levels, in meters.
pub const INIT_PERTURBATION_LEVELS: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 1.6];
pub const INIT_TRIALS: u64 = 15;
/// Measurement noise levels of the integrated task, in meters.
pub const INTEGRATED_NOISE_LEVELS: [f64; 4] = [0.0, 0.01, 0.25, 0.5];

/// A plot-ready table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn num(v: f64) -> String {
    format!("{v:.6e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub tables: Vec<Table>,
    /// The typed summary behind the tables.
    pub summary: serde_json::Value,
}

pub fn run_experiment_suite(name: &str, opts: SimOptions) -> Result<SuiteReport> {
    let (tables, summary) = match name {
        "octahedron-noise" => {
            let s = octahedron_noise(opts)?;
            (s.tables(), serde_json::to_value(&s)?)
        }
        "init-perturbation" => {
            let s = init_perturbation(opts)?;
            (s.tables(), serde_json::to_value(&s)?)
        }
        "control-convergence" => {
            let s = control_convergence(opts)?;
            (s.tables(), serde_json::to_value(&s)?)
        }
        "integrated-2d" => {
            let s = integrated_2d(opts)?;
            (s.tables(), serde_json::to_value(&s)?)
        }
        "isoperimetric-teleop-script" => {
            let s = isoperimetric_teleop_script(opts)?;
            (s.tables(), serde_json::to_value(&s)?)
        }
        other => return Err(SimError::UnknownSuite(other.into())),
    };
    Ok(SuiteReport { suite: name.into(), tables, summary })
}

fn builtin_scenario(name: &str) -> Scenario {
    builtin::get(name).expect("shipped scenario")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// One method at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub method: String,
    pub noise_std: f64,
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub max_error: f64,
    /// Mean wall-clock seconds per ADMM round.
    pub seconds_per_round: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub cells: Vec<NoiseCell>,
}

impl NoiseSweep {
    pub fn cell(&self, method: &str, noise_std: f64) -> Option<&NoiseCell> {
        self.cells.iter().find(|c| c.method == method && c.noise_std == noise_std)
    }

    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("noise_sweep", &["method", "noise_std", "trials", "mean_error", "max_error", "seconds_per_round"]);
        for c in &self.cells {
            t.push(vec![
                c.method.clone(),
                c.noise_std.to_string(),
                c.errors.len().to_string(),
                num(c.mean_error),
                num(c.max_error),
                num(c.seconds_per_round),
            ]);
        }
        vec![t]
    }
}

/// Both estimators on the perturbed octahedron at every noise level, with
/// seeds `1..=NOISE_SEEDS` for the measurement noise.
pub fn octahedron_noise(opts: SimOptions) -> Result<NoiseSweep> {
    noise_sweep(&ESTIMATION_NOISE_LEVELS, NOISE_SEEDS, opts)
}

pub fn noise_sweep(levels: &[f64], seeds: u64, opts: SimOptions) -> Result<NoiseSweep> {
    let mut cells = Vec::new();
    for (method, scenario) in [("position", "octahedron-position"), ("distance", "octahedron-distance")] {
        for &noise in levels {
            let mut errors = Vec::new();
            let mut seconds = 0.0;
            let mut rounds = 0usize;
            // noiseless measurements do not depend on the seed
            let trials = if noise == 0.0 { 1 } else { seeds };
            for seed in 1..=trials {
                let mut s = builtin_scenario(scenario);
                s.seed = seed;
                let est = s.estimation.as_mut().expect("estimation scenario");
                est.noise_std = noise;
                rounds += est.hyper.iterations;
                let r = run_estimation(&s, opts)?;
                errors.push(r.error.unwrap_or(f64::NAN));
                seconds += r.seconds;
            }
            cells.push(NoiseCell {
                method: method.into(),
                noise_std: noise,
                mean_error: mean(&errors),
                max_error: errors.iter().cloned().fold(0.0, f64::max),
                errors,
                seconds_per_round: seconds / rounds.max(1) as f64,
            });
        }
    }
    Ok(NoiseSweep { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitLevel {
    pub std: f64,
    pub trials: u64,
    pub converged: u64,
    /// Far from the truth yet matching every measured length.
    pub alternate_realizations: u64,
    pub mean_errors: Vec<f64>,
}

impl InitLevel {
    pub fn success_fraction(&self) -> f64 {
        self.converged as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSweep {
    pub levels: Vec<InitLevel>,
}

impl InitSweep {
    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("init_perturbation", &["std", "trials", "converged", "alternate_realizations", "success_fraction"]);
        for l in &self.levels {
            t.push(vec![
                l.std.to_string(),
                l.trials.to_string(),
                l.converged.to_string(),
                l.alternate_realizations.to_string(),
                l.success_fraction().to_string(),
            ]);
        }
        vec![t]
    }
}

/// Distance-based estimation from exact data, started from the truth plus
/// Gaussian noise of each level on every coordinate. Trial `k` at level
/// index `i` draws its guess from seed `1000 * (i + 1) + k`.
pub fn init_perturbation(opts: SimOptions) -> Result<InitSweep> {
    let scenario = builtin_scenario("octahedron-distance");
    let sim = Simulation::new(scenario.clone(), opts)?;
    let truth = sim.truth().clone();
    let g = sim.robot().graph().clone();
    let est = scenario.estimation.as_ref().expect("estimation scenario");
    let anchors = est.anchors.resolve(sim.robot(), &truth)?;
    let m = truss_core::estimation::exact_distance_measurements(&g, &truth)?;
    let problem = truss_core::estimation::build_distance_problem(&g, &m, &anchors, est.hyper)?;
    let run_opts = RunOptions { mode: opts.mode, record_transcript: false };

    let mut levels = Vec::new();
    for (i, &std) in INIT_PERTURBATION_LEVELS.iter().enumerate() {
        let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
        let mut level = InitLevel { std, trials: INIT_TRIALS, converged: 0, alternate_realizations: 0, mean_errors: Vec::new() };
        for k in 0..INIT_TRIALS {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * (i as u64 + 1) + k);
            let noise = DVector::from_fn(truth.coords().len(), |_, _| normal.sample(&mut rng));
            let guess = Configuration::new(truth.dim(), truth.coords() + noise)?;
            let out = estimate_state_with(&problem, &guess, Some(&truth), run_opts)?;
            let c = classify_solution(&g, &out.estimates[0], &truth, DEFAULT_CLASSIFY_TOL)?;
            match c.class {
                SolutionClass::ConvergedToTruth => level.converged += 1,
                SolutionClass::AlternateMinimum { length_consistent: true } => level.alternate_realizations += 1,
                SolutionClass::AlternateMinimum { .. } => {}
            }
            level.mean_errors.push(c.mean_error);
        }
        levels.push(level);
    }
    Ok(InitSweep { levels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub centralized: Vec<f64>,
    pub centralized_cost: f64,
    /// `||x_i - x*|| / ||x*||` for every node's final copy.
    pub relative_errors: Vec<f64>,
    pub consensus_residual: Vec<f64>,
    pub max_violation: Vec<f64>,
    /// Mean over nodes of each node's copy of the centralized cost.
    pub cost: Vec<f64>,
    /// `[round][node]` copy of the commanded node's velocity, as exchanged.
    pub commanded_copies: Vec<Vec<Vec<f64>>>,
    pub commanded_node: usize,
    pub messages_per_round: usize,
    pub payload_len: usize,
    pub seconds: f64,
}

impl ConvergenceReport {
    fn tables(&self) -> Vec<Table> {
        let mut curves = Table::new("curves", &["round", "consensus_residual", "max_violation", "mean_cost"]);
        for r in 0..self.consensus_residual.len() {
            curves.push(vec![
                (r + 1).to_string(),
                num(self.consensus_residual[r]),
                num(self.max_violation[r]),
                num(self.cost[r]),
            ]);
        }
        let d = self.commanded_copies.first().and_then(|c| c.first()).map_or(0, Vec::len);
        let mut header = vec!["round".to_string(), "node".to_string()];
        header.extend(["vx", "vy", "vz"].iter().take(d).map(|s| s.to_string()));
        let mut copies = Table { name: "commanded_copies".into(), header, rows: Vec::new() };
        for (r, nodes) in self.commanded_copies.iter().enumerate() {
            for (i, v) in nodes.iter().enumerate() {
                let mut row = vec![(r + 1).to_string(), (i + 1).to_string()];
                row.extend(v.iter().map(|c| num(*c)));
                copies.push(row);
            }
        }
        let mut fin = Table::new("final", &["node", "relative_error"]);
        for (i, e) in self.relative_errors.iter().enumerate() {
            fin.push(vec![(i + 1).to_string(), num(*e)]);
        }
        vec![curves, copies, fin]
    }
}

/// The six-node coordination problem solved by consensus and centrally.
pub fn control_convergence(opts: SimOptions) -> Result<ConvergenceReport> {
    let scenario = builtin_scenario("six-node-control");
    let sim = Simulation::new(scenario.clone(), opts)?;
    let commands = scenario.commands_at(0.0);
    let commanded = commands.first().ok_or_else(|| invalid("control scenario has no command"))?;
    let commanded_node = commanded.agent;
    let (problem, warm) = sim.control_problem_at(sim.truth(), &commands)?;
    let clock = std::time::Instant::now();
    let out = coordinate_motion(&problem, &warm, RunOptions { mode: opts.mode, record_transcript: true })?;
    let seconds = clock.elapsed().as_secs_f64();
    let star = centralized_solve(&problem, None)?;
    let transcript = out.transcript.unwrap_or_default();

    let n = problem.node_count();
    let d = sim.robot().dim();
    let rounds = out.diagnostics.rounds();
    let p = sim.robot().representative_point(commanded_node);
    let mut commanded_copies = vec![vec![Vec::new(); n]; rounds];
    for m in &transcript {
        if let Some(slot) = commanded_copies.get_mut(m.round).and_then(|r| r.get_mut(m.from)) {
            if slot.is_empty() {
                *slot = m.payload.rows(p * d, d).iter().copied().collect();
            }
        }
    }
    Ok(ConvergenceReport {
        centralized_cost: problem.total_cost(&star),
        relative_errors: out.plans.iter().map(|pl| (&pl.xdot - &star).norm() / star.norm()).collect(),
        centralized: star.iter().copied().collect(),
        consensus_residual: out.diagnostics.consensus_residual.clone(),
        max_violation: out.diagnostics.max_violation_curve(),
        cost: out.diagnostics.centralized_cost.iter().map(|c| mean(c)).collect(),
        commanded_copies,
        commanded_node,
        messages_per_round: if rounds == 0 { 0 } else { transcript.len() / rounds },
        payload_len: transcript.first().map_or(0, |m| m.payload.len()),
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedRun {
    pub noise_std: f64,
    pub seed: u64,
    pub complete: bool,
    /// Commanded node's position after every step, starting at `t = 0`.
    pub track: Vec<Vec<f64>>,
    /// Change in x at the moment the command reverses.
    pub dx_at_reversal: f64,
    pub final_dx: f64,
    /// Distance of the final position from the start.
    pub final_displacement: f64,
    pub mean_estimation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedReport {
    /// One run per noise level at the scenario's own seed.
    pub runs: Vec<IntegratedRun>,
    /// Final displacement of seeds `1..=NOISE_SEEDS` per nonzero noise level.
    pub seed_sweep: Vec<(f64, Vec<f64>)>,
}

impl IntegratedReport {
    fn tables(&self) -> Vec<Table> {
        let mut summary = Table::new(
            "integrated",
            &["noise_std", "seed", "complete", "dx_at_reversal", "final_dx", "final_displacement", "mean_estimation_error"],
        );
        let mut tracks = Table::new("top_node_tracks", &["noise_std", "step", "x", "y"]);
        for r in &self.runs {
            summary.push(vec![
                r.noise_std.to_string(),
                r.seed.to_string(),
                r.complete.to_string(),
                num(r.dx_at_reversal),
                num(r.final_dx),
                num(r.final_displacement),
                num(r.mean_estimation_error),
            ]);
            for (k, p) in r.track.iter().enumerate() {
                tracks.push(vec![r.noise_std.to_string(), k.to_string(), num(p[0]), num(p[1])]);
            }
        }
        let mut sweep = Table::new("seed_sweep", &["noise_std", "seed", "final_displacement"]);
        for (noise, finals) in &self.seed_sweep {
            for (k, f) in finals.iter().enumerate() {
                sweep.push(vec![noise.to_string(), (k + 1).to_string(), num(*f)]);
            }
        }
        vec![summary, tracks, sweep]
    }
}

/// Runs the out-and-back task once with the given measurement noise.
pub fn integrated_run(noise_std: f64, seed: u64, opts: SimOptions) -> Result<IntegratedRun> {
    let mut s = builtin_scenario("six-node-integrated");
    s.seed = seed;
    s.estimation.as_mut().expect("estimation scenario").noise_std = noise_std;
    let node = s.commands.first().ok_or_else(|| invalid("integrated scenario has no command"))?.node - 1;
    let reversal = s.commands.iter().map(|c| c.t).fold(0.0, f64::max);
    let record = run_algorithm1(&s, opts)?;
    let (robot, _) = s.build_robot()?;
    let track = record.point_track(robot.representative_point(node));
    let k_rev = ((reversal / s.dt).round() as usize).min(track.len() - 1);
    let start = &track[0];
    let last = track.last().expect("initial position");
    let errors: Vec<f64> = record.steps.iter().filter_map(|st| st.estimation_error).collect();
    Ok(IntegratedRun {
        noise_std,
        seed,
        complete: record.is_complete() && record.steps.len() == s.steps,
        dx_at_reversal: track[k_rev][0] - start[0],
        final_dx: last[0] - start[0],
        final_displacement: last.iter().zip(start).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        mean_estimation_error: mean(&errors),
        track,
    })
}

pub fn integrated_2d(opts: SimOptions) -> Result<IntegratedReport> {
    let seed = builtin_scenario("six-node-integrated").seed;
    let runs = INTEGRATED_NOISE_LEVELS.iter().map(|&n| integrated_run(n, seed, opts)).collect::<Result<Vec<_>>>()?;
    let mut seed_sweep = Vec::new();
    for &noise in INTEGRATED_NOISE_LEVELS.iter().filter(|&&n| n > 0.0) {
        let finals = (1..=NOISE_SEEDS)
            .map(|sd| integrated_run(noise, sd, opts).map(|r| if r.complete { r.final_displacement } else { f64::INFINITY }))
            .collect::<Result<Vec<_>>>()?;
        seed_sweep.push((noise, finals));
    }
    Ok(IntegratedReport { runs, seed_sweep })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopScriptReport {
    pub steps: usize,
    pub complete: bool,
    pub max_perimeter_residual: f64,
    pub l_tot: f64,
    pub max_q_residual: f64,
    /// Commanded point's position at the end of each command phase.
    pub phase_ends: Vec<Vec<f64>>,
    /// Distance from each phase end to the matching target center.
    pub target_distances: Vec<f64>,
    pub max_step_seconds: f64,
}

impl TeleopScriptReport {
    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("phases", &["phase", "x", "y", "target_distance"]);
        for (k, (p, dist)) in self.phase_ends.iter().zip(&self.target_distances).enumerate() {
            t.push(vec![(k + 1).to_string(), num(p[0]), num(p[1]), num(*dist)]);
        }
        let mut s = Table::new("invariants", &["max_perimeter_residual", "l_tot", "max_q_residual", "max_step_seconds"]);
        s.push(vec![
            num(self.max_perimeter_residual),
            num(self.l_tot),
            num(self.max_q_residual),
            num(self.max_step_seconds),
        ]);
        vec![t, s]
    }
}

/// The roller triangle driven by its scripted command sequence.
pub fn isoperimetric_teleop_script(opts: SimOptions) -> Result<TeleopScriptReport> {
    let s = builtin_scenario("roller-triangle");
    let record = run_algorithm1(&s, opts)?;
    let (robot, _) = s.build_robot()?;
    let iso = robot.as_isoperimetric().ok_or_else(|| invalid("roller-triangle is not isoperimetric"))?;
    let node = s.commands.first().ok_or_else(|| invalid("script has no command"))?.node - 1;
    let track = record.point_track(robot.representative_point(node));
    let mut switches: Vec<usize> = s.commands.iter().skip(1).map(|c| (c.t / s.dt).round() as usize).collect();
    switches.push(s.steps);
    let phase_ends: Vec<Vec<f64>> = switches.iter().map(|&k| track[k.min(track.len() - 1)].clone()).collect();
    let target_distances = phase_ends
        .iter()
        .zip(&s.targets)
        .map(|(p, t)| p.iter().zip(&t.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok(TeleopScriptReport {
        steps: record.steps.len(),
        complete: record.is_complete() && record.steps.len() == s.steps,
        max_perimeter_residual: record.steps.iter().filter_map(|st| st.perimeter_residual).map(f64::abs).fold(0.0, f64::max),
        l_tot: iso.layout().l_tot(),
        max_q_residual: record.steps.iter().filter_map(|st| st.max_q_residual).fold(0.0, f64::max),
        phase_ends,
        target_distances,
        max_step_seconds: record
            .steps
            .iter()
            .map(|st| st.timings.measure + st.timings.estimate + st.timings.control + st.timings.act)
            .fold(0.0, f64::max),
    })
}
