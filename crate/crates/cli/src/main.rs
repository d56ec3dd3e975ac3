use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use truss_core::admm::ExecutionMode;
use truss_sim::export::{write_run, write_suite};
use truss_sim::scenario::builtin;
use truss_sim::suites::{run_experiment_suite, SUITE_NAMES};
use truss_sim::{run_algorithm1, run_control, run_estimation, Scenario, SimOptions};
use truss_teleop::{headless_replay, CommandLog, TeleopConfig, TeleopSession};

#[derive(Parser)]
#[command(name = "truss", version, about = "Distributed estimation and control of truss robots")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One estimation phase from the scenario's initial truth.
    Estimate(RunArgs),
    /// One coordination phase with the commands in force at t = 0.
    Control(RunArgs),
    /// The full estimate, control, act loop for the scenario's step count.
    Run(RunArgs),
    /// A named experiment suite.
    Suite {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITE_NAMES))]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Replays a recorded teleoperation log without a network.
    Replay {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Runs a scenario live and accepts commands over websockets.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        /// Steered node, 1-based.
        #[arg(long)]
        node: usize,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = truss_teleop::session::DEFAULT_HZ)]
        hz: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// ADMM rounds per phase.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    alpha_p: Option<f64>,
    #[arg(long)]
    alpha_r: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run agents one after another instead of in parallel.
    #[arg(long)]
    deterministic: bool,
}

impl RunArgs {
    fn scenario(&self) -> anyhow::Result<Scenario> {
        let mut s = match builtin::get(&self.scenario) {
            Some(s) => s,
            None if Path::new(&self.scenario).exists() => Scenario::load(&self.scenario)?,
            None => bail!(
                "no scenario file {:?} and no built-in of that name (built-ins: {})",
                self.scenario,
                builtin::NAMES.join(", ")
            ),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.override_hyper(self.iters, self.alpha_p, self.alpha_r);
        s.validate()?;
        Ok(s)
    }
}

fn options(deterministic: bool) -> SimOptions {
    SimOptions { mode: if deterministic { ExecutionMode::Sequential } else { ExecutionMode::Parallel } }
}

fn write_json(out: &Option<PathBuf>, file: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let path = dir.join(file);
        fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Estimate(a) => {
            let r = run_estimation(&a.scenario()?, options(a.deterministic))?;
            println!(
                "{}",
                json!({
                    "mean_error": r.error,
                    "consensus_residual": r.diagnostics.consensus_residual,
                    "constraint_violation": r.diagnostics.constraint_violation,
                    "seconds": r.seconds,
                })
            );
            write_json(&a.out, "estimation.json", &r)?;
        }
        Cmd::Control(a) => {
            let r = run_control(&a.scenario()?, options(a.deterministic))?;
            println!(
                "{}",
                json!({
                    "consensus_residual": r.diagnostics.consensus_residual,
                    "constraint_violation": r.diagnostics.constraint_violation,
                    "plan": r.plans.first(),
                    "seconds": r.seconds,
                })
            );
            write_json(&a.out, "control.json", &r)?;
        }
        Cmd::Run(a) => {
            let record = run_algorithm1(&a.scenario()?, options(a.deterministic))?;
            report(&record, &a.out)?;
        }
        Cmd::Suite { name, out, deterministic } => {
            let report = run_experiment_suite(&name, options(deterministic))?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            if let Some(dir) = out {
                write_suite(&report, &dir)?;
            }
        }
        Cmd::Replay { log, out, deterministic } => {
            let log = CommandLog::load(&log).with_context(|| format!("reading {}", log.display()))?;
            let scenario = builtin::get(&log.scenario)
                .with_context(|| format!("log names unknown scenario {:?}", log.scenario))?;
            let record = headless_replay(&scenario, &log.entries, log.config(), options(deterministic))?;
            report(&record, &out)?;
        }
        Cmd::Serve { run, node, port, host, hz } => {
            let cfg = TeleopConfig { hz, iterations: run.iters, ..TeleopConfig::new(node) };
            let session = TeleopSession::new(run.scenario()?, cfg, options(run.deterministic))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = truss_teleop::bind(session, SocketAddr::new(host, port)).await?;
                println!("listening on ws://{}", server.local_addr());
                tokio::signal::ctrl_c().await?;
                server.stop();
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn report(record: &truss_sim::RunRecord, out: &Option<PathBuf>) -> anyhow::Result<()> {
    println!(
        "{}",
        json!({
            "steps": record.steps.len(),
            "complete": record.is_complete(),
            "error": record.error,
            "final_truth": record.final_truth(),
        })
    );
    if let Some(dir) = out {
        write_run(record, dir)?;
    }
    if let Some(e) = &record.error {
        bail!("run stopped after {} steps: {e}", record.steps.len());
    }
    Ok(())
}
