//! CLI front end: argument parsing and dispatch. The binary is a thin shell
//! around [`commands`]; tests drive the same entry points in-process.

pub mod artifacts;
pub mod commands;

use anyhow::Result;
use cegrl::driver::LoopConfig;
use clap::{Args, Parser, Subcommand};
use commands::RunManifest;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cegrl", version, about = "Counterexample-guided policy refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Scenario definition file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Falsifier evaluation budget per iteration.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Maximum outer iterations.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Sobol sweep size for certification.
    #[arg(long)]
    pub verify_samples: Option<usize>,
    /// Enable the monotone acceptance gate.
    #[arg(long)]
    pub gate: bool,
    /// Tolerance of the monotone gate.
    #[arg(long, default_value_t = 0.0)]
    pub gate_tol: f64,
    /// Planner temperature for the synthesized initial policy.
    #[arg(long, default_value_t = 2.0)]
    pub init_lambda: f64,
    /// Start from this policy snapshot instead of synthesizing one.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    pub force: bool,
}

impl RunArgs {
    pub fn manifest(&self) -> RunManifest {
        let mut loop_config = LoopConfig::default();
        loop_config.seed = self.seed;
        loop_config.monotone_gate = self.gate;
        loop_config.gate_tol = self.gate_tol;
        if let Some(b) = self.budget {
            loop_config.falsifier.budget = b;
        }
        if let Some(m) = self.max_iters {
            loop_config.max_outer_iters = m;
        }
        if let Some(v) = self.verify_samples {
            loop_config.verify_samples = v;
        }
        RunManifest {
            scenario_file: self.config.clone(),
            output_dir: self.out.clone(),
            loop_config,
            init_lambda: self.init_lambda,
            initial_policy: self.policy.clone(),
            force: self.force,
        }
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the falsify-refine loop and persist the run directory.
    Run(RunArgs),
    /// Falsify a policy snapshot against a scenario.
    Falsify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Sweep a policy snapshot for violations (sampling certificate).
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute diagnostics from a finished run directory.
    Diagnose {
        /// Run directory produced by `run`.
        run_dir: PathBuf,
    },
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => commands::cmd_run(&args.manifest()),
        Command::Falsify { config, policy, out, seed, budget } => {
            let mut fcfg = cegrl::falsifier::FalsifierConfig::default();
            fcfg.seed = seed;
            if let Some(b) = budget {
                fcfg.budget = b;
            }
            commands::cmd_falsify(&config, &policy, &out, &fcfg)
        }
        Command::Verify { config, policy, samples, seed } => {
            let m = cegrl::falsifier::FalsifierConfig::default().rollouts_per_eval;
            commands::cmd_verify(&config, &policy, samples, m, seed)
        }
        Command::Diagnose { run_dir } => commands::cmd_diagnose(&run_dir),
    }
}
