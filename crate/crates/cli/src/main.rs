mod commands;
mod config;
mod error;
mod manifest;
mod plot;
mod trajectory;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dai_core::cost::CostSpec;
use dai_core::dynamics::{Integrator, Mode};

use config::{DisturbanceInput, PolicyChoice, RunConfig};
use error::{CliError, Result};

/// Frequency control with distributed averaging integral controllers.
#[derive(Parser)]
#[command(name = "dai", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write a trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Fill the W column with the Lyapunov function.
        #[arg(long)]
        lyapunov: bool,
    },
    /// Learn monotone controllers by gradient descent through rollouts.
    Train {
        #[command(flatten)]
        common: Common,
        /// Audit the adjoint gradient against finite differences first.
        #[arg(long)]
        grad_check: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Check the Lyapunov certificate along a trajectory.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV written by `simulate`; re-simulates when absent.
        #[arg(long)]
        traj: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Option<Vec<f64>>,
        /// Enforce agreement of the analytic rate with finite differences.
        #[arg(long)]
        fd_rel: Option<f64>,
    },
    /// Solve for the optimal dispatch and closed-loop equilibrium.
    Equilibrium {
        #[command(flatten)]
        common: Common,
    },
    /// Render CSV columns against time as an SVG chart.
    Plot {
        #[arg(long)]
        traj: PathBuf,
        /// Column names or prefixes, e.g. `omega` for every `omega_i`.
        #[arg(long, value_delimiter = ',', default_value = "omega")]
        cols: Vec<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value = "plot.svg")]
        name: String,
        #[arg(long, env = "DAI_OUT_DIR", default_value = "out")]
        out: String,
    },
    /// Compare the adjoint gradient with central differences on a short rollout.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Euler,
    Rk4,
}

/// Flags shared by the model-driven subcommands; each overrides the
/// matching config entry.
#[derive(Args)]
struct Common {
    /// Run config, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "DAI_OUT_DIR")]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Network file, or `case39` for the bundled system.
    #[arg(long)]
    net: Option<String>,
    /// Disturbance file: {"p": [...]} or {"steps": [{"bus": 1, "p": -3}]}.
    #[arg(long = "p", value_name = "FILE")]
    disturbance: Option<String>,
    /// Cost model file.
    #[arg(long)]
    costs: Option<PathBuf>,
    /// Controller checkpoint.
    #[arg(long, conflicts_with_all = ["linear", "zero_policy"])]
    policy: Option<String>,
    /// Use u_i(x) = k x on every bus.
    #[arg(long, conflicts_with = "zero_policy")]
    linear: Option<f64>,
    /// Use no control action.
    #[arg(long)]
    zero_policy: bool,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    h: Option<f64>,
    /// Horizon in seconds.
    #[arg(long, short = 'T')]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    integrator: Option<IntegratorArg>,
    /// Record every k-th step.
    #[arg(long)]
    stride: Option<usize>,
    /// Communicate between every pair of buses at this weight.
    #[arg(long)]
    complete_comm: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, BTreeMap<String, String>)> {
        self.resolve_with(|_| {})
    }

    /// Applies config, shared flags, then `extra`, and resolves inputs.
    fn resolve_with(&self, extra: impl FnOnce(&mut RunConfig)) -> Result<(RunConfig, BTreeMap<String, String>)> {
        let mut cfg = match &self.config {
            Some(path) => config::load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
            if let Some(c) = cfg.costs.as_mut() {
                if c.c.is_none() {
                    c.seed = None;
                }
            }
        }
        if let Some(v) = &self.net {
            cfg.network = v.clone();
        }
        if let Some(v) = &self.disturbance {
            cfg.disturbance = Some(DisturbanceInput::File(v.clone()));
        }
        if let Some(path) = &self.costs {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let spec: CostSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::input(path.display().to_string(), e.into()))?;
            cfg.costs = Some(spec);
        }
        if let Some(v) = &self.policy {
            cfg.policy = PolicyChoice::Checkpoint(v.clone());
        }
        if let Some(k) = self.linear {
            cfg.policy = PolicyChoice::Linear(k);
        }
        if self.zero_policy {
            cfg.policy = PolicyChoice::Zero;
        }
        let s = &mut cfg.scenario;
        if let Some(v) = self.mode {
            s.mode = v;
        }
        if let Some(v) = self.h {
            s.h = v;
        }
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.integrator {
            s.integrator = match v {
                IntegratorArg::Euler => Integrator::Euler,
                IntegratorArg::Rk4 => Integrator::Rk4,
            };
        }
        if let Some(v) = self.stride {
            s.stride = v.max(1);
        }
        if let Some(q) = self.complete_comm {
            cfg.complete_comm = Some(q);
        }
        extra(&mut cfg);
        let inputs = cfg.resolve()?;
        Ok((cfg, inputs))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, lyapunov } => {
            let (cfg, inputs) = common.resolve_with(|cfg| cfg.scenario.lyapunov |= lyapunov)?;
            commands::simulate(&cfg, inputs)
        }
        Command::Train {
            common,
            grad_check,
            epochs,
            batch_size,
        } => {
            let (cfg, inputs) = common.resolve_with(|cfg| {
                if let Some(v) = epochs {
                    cfg.train.epochs = v;
                }
                if let Some(v) = batch_size {
                    cfg.train.batch_size = v;
                }
            })?;
            commands::train(&cfg, inputs, grad_check)
        }
        Command::Certify {
            common,
            traj,
            samples,
            epsilon_grid,
            fd_rel,
        } => {
            let (cfg, inputs) = common.resolve_with(|cfg| {
                let c = &mut cfg.certify;
                if traj.is_some() {
                    c.trajectory = traj;
                }
                if let Some(v) = samples {
                    c.samples = v;
                }
                if let Some(v) = epsilon_grid {
                    c.epsilon_grid = v;
                }
                if fd_rel.is_some() {
                    c.fd_rel = fd_rel;
                }
            })?;
            commands::certify(&cfg, inputs)
        }
        Command::Equilibrium { common } => {
            let (cfg, inputs) = common.resolve()?;
            commands::equilibrium(&cfg, inputs)
        }
        Command::Plot {
            traj,
            cols,
            title,
            name,
            out,
        } => commands::plot(&traj, &cols, title.as_deref(), &out, &name),
        Command::GradCheck {
            common,
            steps,
            eps,
            tol,
        } => {
            let (cfg, inputs) = common.resolve()?;
            commands::grad_check_cmd(&cfg, inputs, steps, eps, tol)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
