use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rwre::harness::{self, ExperimentConfig, ExperimentKind, RunOptions};

/// Experiments on ballistic random walks in i.i.d. random environments.
#[derive(Parser)]
#[command(name = "rwre", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Checks a model against the walk hypotheses.
    Validate(RunArgs),
    /// Velocity from regeneration cycles.
    Velocity(RunArgs),
    /// Diffusion matrix from regeneration cycles.
    Diffusion(RunArgs),
    /// Cycle average of a site functional.
    Equilibrium(RunArgs),
    /// Growth of the quenched-mean variance.
    VarianceScan(RunArgs),
    /// Growth of the intersection count of two walks.
    IntersectionScan(RunArgs),
    /// Overlap of first cycles from shifted starts.
    HProfile(RunArgs),
    /// One-step statistics of the difference chain.
    QKernel(RunArgs),
    /// Green function of the difference chain.
    Green(RunArgs),
    /// Moments of the first common renewal point.
    Renewal(RunArgs),
    /// Quenched central limit checks.
    Clt(RunArgs),
    /// Single-site perturbation influence.
    Perturbation(RunArgs),
    /// Tail of the first regeneration time.
    SigmaTail(RunArgs),
    /// Integer direction with a given sign pattern.
    Rationalize(RunArgs),
    /// Summarizes finished runs.
    Report {
        /// Emit CSV instead of a text table.
        #[arg(long)]
        csv: bool,
        dirs: Vec<PathBuf>,
    },
}

const EXIT_CHECK_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn run(kind: ExperimentKind, args: RunArgs) -> ExitCode {
    let config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if config.experiment != kind {
        eprintln!(
            "error: config {} describes experiment `{}`, not `{kind}`",
            args.config.display(),
            config.experiment
        );
        return ExitCode::from(EXIT_USAGE);
    }
    let opts = RunOptions {
        seed: args.seed,
        output_dir: args.out,
    };
    match harness::run(&config, &opts) {
        Ok(outcome) => {
            let rec = &outcome.record;
            println!("{kind}: {}", rec.headline);
            for w in &rec.warnings {
                println!("warning: {w}");
            }
            for c in &rec.checks {
                let obs = c.observed.map(|o| o.to_string()).unwrap_or_else(|| "missing".into());
                println!("{} {:?} (observed {obs})", if c.passed { "pass" } else { "FAIL" }, c.check);
            }
            println!("results in {}", outcome.output_dir.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Report { csv, dirs } => {
            return match harness::report(&dirs) {
                Ok(rows) => {
                    let text = if csv {
                        harness::format_report_csv(&rows)
                    } else {
                        Ok(harness::format_report_text(&rows))
                    };
                    match text {
                        Ok(t) => {
                            print!("{t}");
                            ExitCode::SUCCESS
                        }
                        Err(e) => {
                            eprintln!("error: {e}");
                            ExitCode::from(EXIT_USAGE)
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
        Command::Validate(a) => (ExperimentKind::Validate, a),
        Command::Velocity(a) => (ExperimentKind::Velocity, a),
        Command::Diffusion(a) => (ExperimentKind::Diffusion, a),
        Command::Equilibrium(a) => (ExperimentKind::Equilibrium, a),
        Command::VarianceScan(a) => (ExperimentKind::VarianceScan, a),
        Command::IntersectionScan(a) => (ExperimentKind::IntersectionScan, a),
        Command::HProfile(a) => (ExperimentKind::HProfile, a),
        Command::QKernel(a) => (ExperimentKind::QKernel, a),
        Command::Green(a) => (ExperimentKind::Green, a),
        Command::Renewal(a) => (ExperimentKind::Renewal, a),
        Command::Clt(a) => (ExperimentKind::Clt, a),
        Command::Perturbation(a) => (ExperimentKind::Perturbation, a),
        Command::SigmaTail(a) => (ExperimentKind::SigmaTail, a),
        Command::Rationalize(a) => (ExperimentKind::Rationalize, a),
    };
    run(kind, args)
}
