use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use optfb::cli::{
    cmd_certify, cmd_simulate, cmd_sweep, cmd_verify_iqc, OptimizerChoice, Overrides,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Phi1,
    Phi2,
    Both,
}

impl From<OptimizerArg> for OptimizerChoice {
    fn from(a: OptimizerArg) -> Self {
        match a {
            OptimizerArg::Phi1 => OptimizerChoice::Phi1,
            OptimizerArg::Phi2 => OptimizerChoice::Phi2,
            OptimizerArg::Both => OptimizerChoice::Both,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "optfb",
    about = "Optimization-based feedback control: certification, simulation, sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Write CSV output to this path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured optimizer
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Maximize the certified exponential decay rate
    Certify {
        #[command(flatten)]
        common: Common,
        /// Relative bisection tolerance on alpha
        #[arg(long)]
        alpha_tol: Option<f64>,
    },
    /// Integrate the closed loop and write the trajectory
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Integration step override
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Tabulate alpha_max over a parameter grid
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Relative bisection tolerance on alpha
        #[arg(long)]
        alpha_tol: Option<f64>,
    },
    /// Sample-check the optimizer's pointwise IQC
    #[command(name = "verify-iqc")]
    VerifyIqc {
        #[command(flatten)]
        common: Common,
        /// RNG seed for the sample draws
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        out: common.out.clone(),
        optimizer: common.optimizer.map(Into::into),
        ..Overrides::default()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config, result) = match &cli.command {
        Command::Certify { common, alpha_tol } => {
            let mut ov = overrides(common);
            ov.alpha_tol = *alpha_tol;
            (common.config.clone(), cmd_certify(&common.config, &ov))
        }
        Command::Simulate { common, dt } => {
            let mut ov = overrides(common);
            ov.dt = *dt;
            (common.config.clone(), cmd_simulate(&common.config, &ov))
        }
        Command::Sweep { common, alpha_tol } => {
            let mut ov = overrides(common);
            ov.alpha_tol = *alpha_tol;
            (common.config.clone(), cmd_sweep(&common.config, &ov))
        }
        Command::VerifyIqc { common, seed } => {
            let mut ov = overrides(common);
            ov.seed = *seed;
            (common.config.clone(), cmd_verify_iqc(&common.config, &ov))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {}", config.display(), e.message);
            ExitCode::from(e.code.clamp(0, 255) as u8)
        }
    }
}
