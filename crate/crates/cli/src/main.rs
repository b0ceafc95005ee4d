use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sof_cli::{install_policy_from_env, run, Command};

/// Gradient descent and landscape experiments for static output feedback LQR.
#[derive(Parser)]
#[command(name = "sof-landscape", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML (or .json) run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Err(e) = install_policy_from_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(args.command, &args.config, args.out.as_deref()) {
        Ok(summary) => {
            println!("{}", summary.report.display());
            if summary.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: checks failed, see report", args.command.name());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
