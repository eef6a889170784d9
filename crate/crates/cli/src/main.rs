//! `fimguard` — train Fisher-regularized classifiers, attack them, and
//! measure what the attacks achieve.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! error, 3 numeric failure (divergence, non-convergence, failed
//! verification), so sweep scripts can tell failure classes apart.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fimguard_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "fimguard", version, about = "FIM-regularized training and robustness evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; omit to use the built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.mu=0.022`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for per-sample attack/eval work.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Shorthand for `--set output.dir=…`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> fimguard_core::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set, self.out.as_deref())
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one attack against a checkpoint over the test set.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to attack.
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        /// Attack name (see `attacks` config section for parameters).
        #[arg(long, value_name = "NAME")]
        attack: String,
        /// Budget override for budgeted attacks.
        #[arg(long, value_name = "EPS")]
        eps: Option<f64>,
        /// Also dump adversarial images and labels in IDX layout.
        #[arg(long)]
        dump_images: bool,
    },
    /// Build a robustness report over one or more checkpoints.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to evaluate; repeat for comparisons/transfer.
        #[arg(long = "ckpt", value_name = "PATH", required = true)]
        ckpts: Vec<PathBuf>,
    },
    /// Run the fast invariant suite against a checkpoint.
    Verify {
        /// Checkpoint to verify.
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> fimguard_core::Result<u8> {
    match cli.cmd {
        Cmd::Train { common } => {
            commands::cmd_train(&common.load()?)?;
            Ok(0)
        }
        Cmd::Attack { common, ckpt, attack, eps, dump_images } => {
            let threads = common.threads;
            commands::cmd_attack(&common.load()?, &ckpt, &attack, eps, dump_images, threads)?;
            Ok(0)
        }
        Cmd::Eval { common, ckpts } => {
            let threads = common.threads;
            commands::cmd_eval(&common.load()?, &ckpts, threads)?;
            Ok(0)
        }
        Cmd::Verify { ckpt } => {
            if commands::cmd_verify(&ckpt)? {
                Ok(0)
            } else {
                eprintln!("fimguard: verification failed");
                Ok(3)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fimguard: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
