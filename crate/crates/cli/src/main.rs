use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltnode::ModelSpec;
use ltnode_cli::{commands, emit_report, verify, CliError, ExperimentConfig, RunContext};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ltnode", version, about = "Train and evaluate latent-time neural ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes the loss trace and checkpoint.
    Train(RunArgs),
    /// Metrics, curves and predictions from the checkpoint.
    Eval(RunArgs),
    /// FGSM sweep on the held-out split.
    Attack(RunArgs),
    /// Prior and learned end-time densities on [0, 6].
    PosteriorReport(RunArgs),
    /// Consolidated JSON summary of an artifact directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Oracle comparisons for the numerical core.
    #[command(hide = true)]
    Verify,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let context = |a: RunArgs| -> Result<RunContext, CliError> {
        let cfg = ExperimentConfig::load(&a.config)?;
        Ok(RunContext::new(cfg, a.out, a.seed))
    };
    match cli.command {
        Command::Train(a) => commands::train(&context(a)?),
        Command::Eval(a) => commands::evaluate(&context(a)?),
        Command::Attack(a) => commands::attack(&context(a)?),
        Command::PosteriorReport(a) => commands::posterior_report(&context(a)?),
        Command::Report { out } => {
            let report = emit_report(&out)?;
            println!("{}", serde_json::to_string_pretty(&report.json)?);
            if report.missing.is_empty() {
                Ok(serde_json::Value::Null)
            } else {
                Err(CliError::Missing(report.missing))
            }
        }
        Command::Verify => Ok(json!({
            "gradient_fidelity": verify::gradient_fidelity(50, 1)?,
            "gamma_kl_max_abs_error": verify::gamma_kl_agreement(1000, 2)?,
            "solver": verify::solver_accuracy()?,
            "two_phase": verify::two_phase_agreement(20, 4)?,
            "single_pass_max_abs_error": verify::algorithm1_agreement(100, 10, 5)?,
            "metric_oracle_max_abs_error": verify::metric_oracle_agreement(100, 8)?,
            "parameter_counts": verify::parameter_counts(&ModelSpec::regression(ltnode::Variant::LtNode))?,
        })),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
