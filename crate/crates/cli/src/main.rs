use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fishy_cli::{
    cmd_embed, cmd_evaluate, cmd_fit_combiner, cmd_generate, cmd_report, cmd_score,
    cmd_train_encoder, cmd_train_flow, CliError, Method, PipelineConfig,
};

/// Pixel-wise uncertainty and OoD scoring pipeline: generate a synthetic
/// dataset, train the toy encoder and embedding-density flows, score with
/// any method, and evaluate with imbalance-aware metrics.
#[derive(Parser)]
#[command(name = "fishy", version, disable_help_subcommand = true)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "fishy.toml")]
    config: PathBuf,

    /// Worker threads for per-image parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Override the master seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the working directory from the config file.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic OoD evaluation dataset.
    Generate,
    /// Train the toy encoder on procedural scenes.
    TrainEncoder,
    /// Extract reference embedding sets for the kNN and flow methods.
    Embed,
    /// Train one normalizing flow per configured layer.
    TrainFlow,
    /// Fit the logistic layer combiner on the validation split.
    FitCombiner,
    /// Score every dataset image with one method.
    Score {
        /// One of the registered method names.
        #[arg(long)]
        method: String,
        /// Dataset directory; defaults to <workdir>/dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compute metrics for a completed scoring run.
    Evaluate {
        /// Scores directory; defaults to <workdir>/scores/<method>.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Method name used to locate the default scores directory.
        #[arg(long)]
        method: Option<String>,
    },
    /// Collect evaluation results into the CSV + PR-curve report.
    Report {
        /// Methods to include, comma-separated; defaults to all evaluated.
        #[arg(long)]
        methods: Option<String>,
    },
    /// List the registered scoring methods.
    Methods,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .ok();
    }

    if let Command::Methods = cli.command {
        for m in Method::all() {
            println!("{m}");
        }
        return Ok(());
    }

    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workdir) = cli.workdir {
        config.workdir = workdir;
    }

    match cli.command {
        Command::Generate => {
            cmd_generate(&config)?;
        }
        Command::TrainEncoder => {
            cmd_train_encoder(&config)?;
        }
        Command::Embed => {
            cmd_embed(&config)?;
        }
        Command::TrainFlow => {
            cmd_train_flow(&config)?;
        }
        Command::FitCombiner => {
            cmd_fit_combiner(&config)?;
        }
        Command::Score { method, dataset } => {
            let dataset = dataset.unwrap_or_else(|| config.dataset_dir());
            cmd_score(&config, &method, &dataset)?;
        }
        Command::Evaluate { scores, method } => {
            let scores = match (scores, method) {
                (Some(dir), _) => dir,
                (None, Some(method)) => config.scores_dir(&method),
                (None, None) => {
                    return Err(CliError::MissingInput(
                        "evaluate needs --scores or --method".into(),
                    ))
                }
            };
            cmd_evaluate(&config, &scores)?;
        }
        Command::Report { methods } => {
            let methods: Vec<String> = match methods {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => {
                    // Default: every method with an evaluation result.
                    let mut found = Vec::new();
                    if let Ok(dir) = std::fs::read_dir(config.reports_dir()) {
                        for entry in dir.flatten() {
                            let name = entry.file_name().to_string_lossy().to_string();
                            if let Some(method) = name.strip_suffix(".eval.json") {
                                found.push(method.to_string());
                            }
                        }
                    }
                    found.sort();
                    found
                }
            };
            if methods.is_empty() {
                return Err(CliError::MissingInput(
                    "no evaluation results to report".into(),
                ));
            }
            cmd_report(&config, &methods)?;
        }
        Command::Methods => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FISHY_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
