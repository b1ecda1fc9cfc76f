use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qpensieve_cli::config::{ExperimentConfig, Mode};
use qpensieve_cli::plots::emit_plot_data;
use qpensieve_cli::runner::{run, RunRequest};
use qpensieve_cli::HarnessError;

#[derive(Parser)]
#[command(
    name = "qpensieve",
    about = "Multi-objective soft policy iteration with Q-snapshot sharing: \
             planning, training, evaluation and ablation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed or comma-separated seed list, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted-path override, e.g. `algorithm.learning_rate=0.001`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact tabular planning with the scalarized-optimum equivalence report.
    Plan(CommonArgs),
    /// Seeded training runs with learning curves and checkpoints.
    Train(CommonArgs),
    /// Metric evaluation of a stored checkpoint.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directory containing checkpoint.bin + checkpoint_manifest.json.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional baseline checkpoint for the dominance metric.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Paired-seed comparison of the full algorithm against the
    /// single-preference, no-snapshot baseline.
    Ablate(CommonArgs),
    /// Aggregate learning-curve and front CSVs across finished runs.
    EmitPlots {
        /// Directory holding run-* subdirectories.
        #[arg(long)]
        runs: PathBuf,
        /// Output directory for the plot CSVs.
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for spec in &common.overrides {
        config.apply_override(spec)?;
    }
    if !common.seed.is_empty() {
        config.seeds = common.seed.clone();
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    if let Ok(threads) = std::env::var("QPENSIEVE_THREADS") {
        let n: usize = threads.parse().map_err(|_| {
            HarnessError::config(format!("QPENSIEVE_THREADS must be an integer, got '{threads}'"))
        })?;
        // Ignore failure when a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Plan(common) => {
            let config = load_config(&common)?;
            let records = run(&RunRequest {
                mode: Mode::TabularPlan,
                config,
                out_dir: common.out.clone(),
                checkpoint: None,
                baseline: None,
            })?;
            for r in &records {
                println!(
                    "plan seed {}: max oracle gap {:.3e}",
                    r.seed,
                    r.metrics.first().map(|m| m.value).unwrap_or(f64::NAN)
                );
            }
            Ok(())
        }
        Command::Train(common) => {
            let config = load_config(&common)?;
            let records = run(&RunRequest {
                mode: Mode::AgentTrain,
                config,
                out_dir: common.out.clone(),
                checkpoint: None,
                baseline: None,
            })?;
            for r in &records {
                let ut = r.metrics.iter().find(|m| m.metric == "utility").map(|m| m.value);
                println!(
                    "train seed {}: utility {}",
                    r.seed,
                    ut.map_or("n/a".into(), |v| format!("{v:.4}"))
                );
            }
            Ok(())
        }
        Command::Evaluate { common, checkpoint, baseline } => {
            let config = load_config(&common)?;
            let records = run(&RunRequest {
                mode: Mode::Evaluate,
                config,
                out_dir: common.out.clone(),
                checkpoint: Some(checkpoint),
                baseline,
            })?;
            for r in &records {
                for m in &r.metrics {
                    println!("evaluate seed {}: {} = {:.6}", r.seed, m.metric, m.value);
                }
            }
            Ok(())
        }
        Command::Ablate(common) => {
            let config = load_config(&common)?;
            let out = common.out.clone();
            run(&RunRequest {
                mode: Mode::Ablate,
                config,
                out_dir: out.clone(),
                checkpoint: None,
                baseline: None,
            })?;
            let report = qpensieve_cli::runner::load_comparison(&out)?;
            println!(
                "ablate: median utility {:.4} vs {:.4}, mean dominance {:.3}",
                report.median_utility_pensieve,
                report.median_utility_vanilla,
                report.mean_dominance_pensieve_over_vanilla
            );
            Ok(())
        }
        Command::EmitPlots { runs, out } => {
            let written = emit_plot_data(&runs, &out)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
