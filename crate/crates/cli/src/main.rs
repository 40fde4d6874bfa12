use clap::{Parser, Subcommand};
use modeldiff_cli::{
    report_run, run_data_variation, run_experiment_until, ExperimentConfig, RunError, RunManifest, Stage,
};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "modeldiff", version, about = "Generate model pairs, verbalize their differences and score the verbalizations")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Uses the offline oracle channels instead of live endpoints.
    #[arg(long, global = true)]
    mock: bool,
    /// Overrides the response cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Overrides the run directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Prepare splits, train the base model and calibrate pairs.
    GenPairs,
    /// Pairs, then verbalizations.
    Verbalize,
    /// Pairs, verbalizations, simulations and metrics.
    Evaluate,
    /// Regenerate the report tables of an existing run.
    Report,
    /// Every stage including the report.
    RunAll,
    /// Pairs trained on original vs. partially negated data, for each kind.
    DataVariation,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        RunError::Config(modeldiff_cli::ConfigError::Invalid("--config is required".into()))
    })?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.mock {
        config.mock = true;
    }
    if let Some(dir) = &cli.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(PathBuf, RunManifest), RunError> {
    if let Command::Report = cli.command {
        let dir = match &cli.output_dir {
            Some(dir) => dir.clone(),
            None => load_config(cli)?.output_dir,
        };
        return Ok((dir.clone(), report_run(&dir)?));
    }
    let config = load_config(cli)?;
    let manifest = match cli.command {
        Command::GenPairs => run_experiment_until(&config, Stage::Pairs)?,
        Command::Verbalize => run_experiment_until(&config, Stage::Verbalize)?,
        Command::Evaluate => run_experiment_until(&config, Stage::Evaluate)?,
        Command::RunAll => run_experiment_until(&config, Stage::Report)?,
        Command::DataVariation => run_data_variation(&config)?,
        Command::Report => unreachable!("handled above"),
    };
    Ok((config.output_dir, manifest))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok((dir, manifest)) => {
            let summary = json!({
                "run_dir": dir,
                "manifest": dir.join("manifest.json"),
                "pairs": manifest.pairs.len(),
                "metrics": manifest.stage("metrics").len(),
                "failures": manifest.failures.len(),
            });
            println!("{summary}");
            if manifest.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                let err = json!({"error": {"kind": "stage_failures", "failures": manifest.failures}});
                eprintln!("{err}");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}
