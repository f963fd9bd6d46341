use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strataflow_cli::commands::{self, CliError, Context};

#[derive(Parser)]
#[command(name = "strataflow", version, about = "Steady periodic stratified water waves")]
struct Cli {
    /// Run configuration (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ε0, size condition and the (L-B) sweep.
    Check,
    /// One laminar flow.
    Laminar {
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
    },
    /// Bifurcation point λ* and the μ(λ) curve.
    Bifurcate,
    /// Continue the branch from λ*.
    Continue {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Reconstruct a snapshot and check the Euler system.
    Verify { snapshot: PathBuf },
    /// Physical fields of a snapshot as CSV and VTK.
    Export { snapshot: PathBuf },
    /// check, bifurcate, continue and verify in one go.
    Run {
        #[arg(long)]
        steps: Option<usize>,
        /// Continue even if (L-B) fails.
        #[arg(long)]
        force: bool,
    },
}

fn dispatch(cli: Cli) -> Result<serde_json::Value, CliError> {
    let path = cli.config.ok_or_else(|| {
        CliError::Config(strataflow_cli::config::ConfigError::Invalid { key: "--config", msg: "a config file is required".into() })
    })?;
    let ctx = Context::load(&path)?;
    let config = ctx.config.clone();
    commands::with_threads(&config, move || match cli.command {
        Command::Check => commands::check(&ctx),
        Command::Laminar { lambda } => commands::laminar(&ctx, lambda),
        Command::Bifurcate => commands::bifurcate(&ctx),
        Command::Continue { steps } => commands::continue_cmd(&ctx, steps),
        Command::Verify { snapshot } => commands::verify(&ctx, &snapshot).map(|v| serde_json::to_value(v).expect("report serializes")),
        Command::Export { snapshot } => commands::export(&ctx, &snapshot),
        Command::Run { steps, force } => commands::run(&ctx, steps, force),
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("strataflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
