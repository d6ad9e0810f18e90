//! Experiment CLI: generate datasets, pre-train models, run seeded
//! streaming experiments, sweep parameters, and re-evaluate metric files.
//!
//! Configuration is resolved in precedence order: per-dataset defaults,
//! then the `--config` file (flat `key = value` TOML), then repeated
//! `--set key=value` overrides, then the dedicated flags. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vae4as::datagen;
use vae4as::error::{Error, Result};
use vae4as::eval;
use vae4as::experiment::{self, DatasetSpec, ExperimentConfig};
use vae4as::pipeline::Pipeline;

#[derive(Parser)]
#[command(name = "vae4as", version, about = "Streaming anomalous-sequence detection experiments")]
struct Cli {
    /// Flat key = value config file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in dataset name (sea, circle, sine, vib, frame) or CSV path
    #[arg(long, global = true)]
    dataset: Option<String>,

    /// Base seed for a single run, or the first seed of a multi-run batch
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of seeded runs
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Drift detection mode: dual, ks_only, or distance_only
    #[arg(long = "dd-mode", global = true)]
    dd_mode: Option<String>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override any config key, e.g. --set w_train=1000 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream and write it as CSV
    Generate {
        /// Output file; defaults to <out>/<dataset>_seed<seed>.csv
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pre-train a model offline and write a checkpoint
    Pretrain,
    /// Run the full streaming experiment for every seed
    Run,
    /// Re-run the experiment across several values of one parameter
    Sweep {
        /// Config key to vary, e.g. w_train
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 500,1000,2000
        #[arg(long)]
        values: String,
    },
    /// Recompute summary statistics from per-step metric CSV files
    Evaluate {
        /// Directory holding metrics_*.csv files
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Generate { output } => generate(&cli, &cfg, output.as_deref()),
        Command::Pretrain => pretrain(&cfg),
        Command::Run => {
            let result = experiment::run_experiment(&cfg)?;
            print_summary(&result.summary);
            Ok(())
        }
        Command::Sweep { param, values } => {
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let result = experiment::sweep(&cfg, param, &values)?;
            println!("{:<12} {:>18} {:>18}", result.parameter, "mean_final_gmean", "mean_false_alarms");
            for row in &result.rows {
                println!(
                    "{:<12} {:>18.4} {:>18.2}",
                    row.value, row.mean_final_gmean, row.mean_false_alarms
                );
            }
            Ok(())
        }
        Command::Evaluate { dir } => evaluate(dir),
    }
}

/// Defaults for the dataset, then config file, then --set pairs, then the
/// dedicated flags.
fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    // the dataset may come from the flag or from the config file
    let file_table = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Some(table)
        }
        None => None,
    };

    let dataset = cli
        .dataset
        .clone()
        .or_else(|| {
            file_table
                .as_ref()
                .and_then(|t| t.get("dataset"))
                .and_then(|v| v.as_str().map(str::to_string))
        })
        .ok_or_else(|| Error::Config("no dataset given (use --dataset or a config file)".into()))?;

    let mut cfg = ExperimentConfig::for_dataset(&dataset)?;

    if let Some(table) = &file_table {
        let unknown: Vec<String> = table
            .keys()
            .filter(|k| !ExperimentConfig::known_keys().contains(&k.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        for (key, value) in table {
            cfg.set_key(key, &toml_value_string(value))?;
        }
    }

    for pair in &cli.sets {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects key=value, got '{pair}'"))
        })?;
        cfg.set_key(key.trim(), value.trim())?;
    }

    if let Some(dataset) = &cli.dataset {
        cfg.set_key("dataset", dataset)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
        cfg.n_runs = 1;
    }
    if let Some(runs) = cli.runs {
        cfg.n_runs = runs;
        if cli.seed.is_some() {
            let first = cfg.seeds[0];
            cfg.seeds = (first..first + runs as u64).collect();
        } else {
            cfg.seeds.clear();
        }
    }
    if let Some(mode) = &cli.dd_mode {
        cfg.set_key("dd_mode", mode)?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn toml_value_string(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(items) => items
            .iter()
            .map(toml_value_string)
            .collect::<Vec<_>>()
            .join(","),
        other => other.to_string(),
    }
}

fn generate(cli: &Cli, cfg: &ExperimentConfig, output: Option<&std::path::Path>) -> Result<()> {
    let name = match &cfg.dataset {
        DatasetSpec::Builtin(name) => name.clone(),
        DatasetSpec::Csv(_) => {
            return Err(Error::Config("generate needs a built-in dataset name".into()))
        }
    };
    let seed = cli.seed.unwrap_or(1);
    let mut spec = datagen::StreamSpec::builtin(&name)?;
    if cfg.length > 0 {
        spec = spec.truncated(cfg.length);
    }
    let instances: Vec<_> = datagen::generate_stream(&spec, seed).collect::<Result<_>>()?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            dir.join(format!("{name}_seed{seed}.csv"))
        }
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    datagen::write_csv_stream(std::fs::File::create(&path)?, &instances)?;
    println!("wrote {} instances to {}", instances.len(), path.display());
    Ok(())
}

fn pretrain(cfg: &ExperimentConfig) -> Result<()> {
    let seed = cfg.run_seeds()[0];
    let (d_train, an_ref, input_dim) = match &cfg.dataset {
        DatasetSpec::Builtin(name) => {
            let spec = datagen::StreamSpec::builtin(name)?;
            let sets = datagen::make_pretraining_sets(&spec, seed)?;
            let pool = datagen::make_anomaly_pool(&spec, seed, cfg.an_ref_size)?;
            (sets.train, pool, spec.n_features)
        }
        DatasetSpec::Csv(path) => {
            let instances = datagen::load_csv_stream(path, None)?;
            let d = instances
                .first()
                .map(|i| i.x.len())
                .ok_or_else(|| Error::Data(format!("{}: empty stream", path.display())))?;
            let train: Vec<Vec<f64>> = instances
                .iter()
                .filter(|i| i.y_true == 0)
                .take(datagen::PRETRAIN_NORMAL)
                .map(|i| i.x.clone())
                .collect();
            let pool: Vec<Vec<f64>> = instances
                .iter()
                .filter(|i| i.y_true == 1)
                .take(cfg.an_ref_size)
                .map(|i| i.x.clone())
                .collect();
            (train, pool, d)
        }
    };
    let pcfg = pipeline_config_for(cfg, input_dim, seed);
    let pipeline = Pipeline::pretrain(pcfg, &d_train, &an_ref)?;
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!(
        "checkpoint_{}_seed{seed}_{}.json",
        cfg.dataset.label().replace(['/', '\\'], "_"),
        cfg.config_hash()
    ));
    std::fs::write(&path, pipeline.checkpoint().to_json()?)?;
    println!(
        "pre-trained on {} instances; theta = {:.6}; checkpoint at {}",
        d_train.len(),
        pipeline.theta(),
        path.display()
    );
    Ok(())
}

fn pipeline_config_for(cfg: &ExperimentConfig, input_dim: usize, seed: u64) -> vae4as::PipelineConfig {
    cfg.to_pipeline_config(input_dim, seed)
}

fn evaluate(dir: &std::path::Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no metrics_*.csv files in {}",
            dir.display()
        )));
    }
    let mut finals = Vec::new();
    println!("{:<40} {:>10} {:>12}", "file", "steps", "final_gmean");
    for path in &files {
        let records = eval::read_metrics_csv(path)?;
        let final_g = records.last().map(|r| r.g_mean).unwrap_or(f64::NAN);
        finals.push(final_g);
        println!(
            "{:<40} {:>10} {:>12.4}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("?"),
            records.len(),
            final_g
        );
    }
    let (mean, stderr) = mean_stderr(&finals);
    println!("mean final G-mean over {} runs: {mean:.4} +/- {stderr:.4}", finals.len());
    Ok(())
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt() / n.sqrt())
}

fn print_summary(summary: &experiment::Summary) {
    println!(
        "dataset {} (config {}): mean final G-mean {:.4} +/- {:.4}, mean false alarms {:.2}, {}/{} runs detected every drift",
        summary.dataset,
        summary.config_hash,
        summary.mean_final_gmean,
        summary.stderr_final_gmean,
        summary.mean_false_alarms,
        summary.runs_with_all_drifts_detected,
        summary.runs.len()
    );
    for (i, run) in summary.runs.iter().enumerate() {
        let delays: Vec<String> = run
            .delays
            .iter()
            .map(|d| d.map(|v| v.to_string()).unwrap_or_else(|| "-".into()))
            .collect();
        println!(
            "  run {:>2} seed {:>3}: final G-mean {:.4}, detections {}/{}, delays [{}], false alarms {}",
            i + 1,
            run.seed,
            run.final_gmean,
            run.detections,
            run.drifts,
            delays.join(", "),
            run.false_alarms
        );
    }
}
