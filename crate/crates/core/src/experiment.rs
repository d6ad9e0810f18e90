//! Experiment orchestration: per-dataset defaults, seeded multi-run
//! execution, artifact emission, and parameter sweeps.
//!
//! Every artifact file name carries a short hash of the resolved
//! configuration, and the resolved configuration itself is written next
//! to the results, so any output folder is self-describing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{self, LabeledInstance, StreamSpec};
use crate::drift::AlarmSource;
use crate::error::{Error, Result};
use crate::eval::{self, AlarmScore, FadedCounts, StepRecord};
use crate::parallel::map_indices;
use crate::pipeline::{DdMode, EventKind, Pipeline, PipelineConfig};
use crate::util::fnv1a64;
use crate::vae::{Architecture, LossKind};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Builtin(String),
    Csv(PathBuf),
}

impl DatasetSpec {
    pub fn parse(s: &str) -> DatasetSpec {
        if s.ends_with(".csv") || s.contains('/') || s.contains('\\') {
            DatasetSpec::Csv(PathBuf::from(s))
        } else {
            DatasetSpec::Builtin(s.to_string())
        }
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Builtin(name) => name.clone(),
            DatasetSpec::Csv(path) => path.display().to_string(),
        }
    }
}

/// Flat experiment configuration. Defaults come from the dataset family;
/// every key can be overridden by the config file or `--set`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub n_runs: usize,
    /// One seed per run; defaults to `1..=n_runs`.
    pub seeds: Vec<u64>,
    pub dd_mode: DdMode,
    pub out_dir: Option<PathBuf>,

    pub w_train: usize,
    pub w_drift: usize,
    pub w_distance: usize,
    pub p: f64,
    pub p_warn: f64,
    pub p_alarm: f64,
    pub expiry_time: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub beta: f64,
    pub loss: LossKind,
    /// Hidden layer widths; empty means "choose by input dimension".
    pub hidden: Vec<usize>,
    /// Latent dimension; 0 means "choose by input dimension".
    pub latent_dim: usize,
    pub leaky_slope: f64,
    pub n_boot: usize,
    pub dis_margin: f64,
    pub an_ref_size: usize,
    pub fading: f64,
    pub tolerance: usize,
    /// Truncate the stream to this many steps (0 = full length).
    pub length: usize,
    /// Drift schedule for alarm scoring when the dataset is a CSV file.
    pub drift_times: Vec<usize>,
}

impl ExperimentConfig {
    /// Defaults for a dataset. Synthetic streams use the wide drift
    /// window and the 2000-instance training window; CSV data uses the
    /// narrower settings intended for smaller real datasets.
    pub fn for_dataset(dataset: &str) -> Result<ExperimentConfig> {
        let spec = DatasetSpec::parse(dataset);
        let is_csv = matches!(spec, DatasetSpec::Csv(_));
        if let DatasetSpec::Builtin(name) = &spec {
            // fail early on unknown names
            StreamSpec::builtin(name)?;
        }
        let (w_train, w_drift) = if is_csv { (1_000, 200) } else { (2_000, 1_000) };
        let beta = if dataset == "vib" { 0.0 } else { 1.0 };
        let loss = if is_csv { LossKind::SquaredError } else { LossKind::BinaryCrossEntropy };
        Ok(ExperimentConfig {
            dataset: spec,
            n_runs: 10,
            seeds: Vec::new(),
            dd_mode: DdMode::Dual,
            out_dir: None,
            w_train,
            w_drift,
            w_distance: 50,
            p: 100.0,
            p_warn: 0.01,
            p_alarm: 0.001,
            expiry_time: 100,
            epochs: 10,
            batch_size: 64,
            pretrain_epochs: 100,
            lr: 0.001,
            beta,
            loss,
            hidden: Vec::new(),
            latent_dim: 0,
            leaky_slope: crate::nn::LEAKY_SLOPE_DEFAULT,
            n_boot: 500,
            dis_margin: 1.4,
            an_ref_size: 200,
            fading: 0.99,
            tolerance: 1_000,
            length: 0,
            drift_times: Vec::new(),
        })
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (1..=self.n_runs as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Apply one `key = value` override. Unknown keys are an error; the
    /// caller batches them so users see every unknown key at once.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value '{value}' for {what}"));
        match key {
            "dataset" => self.dataset = DatasetSpec::parse(value),
            "runs" | "n_runs" => self.n_runs = value.parse().map_err(|_| bad("runs"))?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("seeds")))
                    .collect::<Result<_>>()?
            }
            "dd_mode" => self.dd_mode = value.parse()?,
            "out" => self.out_dir = Some(PathBuf::from(value)),
            "w_train" => self.w_train = value.parse().map_err(|_| bad("w_train"))?,
            "w_drift" => self.w_drift = value.parse().map_err(|_| bad("w_drift"))?,
            "w_distance" => self.w_distance = value.parse().map_err(|_| bad("w_distance"))?,
            "p" => self.p = value.parse().map_err(|_| bad("p"))?,
            "p_warn" => self.p_warn = value.parse().map_err(|_| bad("p_warn"))?,
            "p_alarm" => self.p_alarm = value.parse().map_err(|_| bad("p_alarm"))?,
            "expiry_time" => self.expiry_time = value.parse().map_err(|_| bad("expiry_time"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "pretrain_epochs" => {
                self.pretrain_epochs = value.parse().map_err(|_| bad("pretrain_epochs"))?
            }
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "beta" => self.beta = value.parse().map_err(|_| bad("beta"))?,
            "loss" => {
                self.loss = match value {
                    "bce" | "binary_cross_entropy" => LossKind::BinaryCrossEntropy,
                    "squared" | "squared_error" => LossKind::SquaredError,
                    _ => return Err(bad("loss (expected bce or squared)")),
                }
            }
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse().map_err(|_| bad("hidden")))
                    .collect::<Result<_>>()?
            }
            "latent_dim" => self.latent_dim = value.parse().map_err(|_| bad("latent_dim"))?,
            "leaky_slope" => self.leaky_slope = value.parse().map_err(|_| bad("leaky_slope"))?,
            "n_boot" => self.n_boot = value.parse().map_err(|_| bad("n_boot"))?,
            "dis_margin" => self.dis_margin = value.parse().map_err(|_| bad("dis_margin"))?,
            "an_ref_size" => self.an_ref_size = value.parse().map_err(|_| bad("an_ref_size"))?,
            "fading" => self.fading = value.parse().map_err(|_| bad("fading"))?,
            "tolerance" => self.tolerance = value.parse().map_err(|_| bad("tolerance"))?,
            "length" => self.length = value.parse().map_err(|_| bad("length"))?,
            "drift_times" => {
                self.drift_times = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse().map_err(|_| bad("drift_times")))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// All keys `set_key` accepts; used to report unknown config-file keys.
    pub fn known_keys() -> &'static [&'static str] {
        &[
            "dataset", "runs", "n_runs", "seeds", "dd_mode", "out", "w_train", "w_drift",
            "w_distance", "p", "p_warn", "p_alarm", "expiry_time", "epochs", "batch_size",
            "pretrain_epochs", "lr", "beta", "loss", "hidden", "latent_dim", "leaky_slope",
            "n_boot", "dis_margin", "an_ref_size", "fading", "tolerance", "length", "drift_times",
        ]
    }

    fn architecture(&self, input_dim: usize) -> Architecture {
        let mut arch = Architecture::for_dim(input_dim);
        if !self.hidden.is_empty() {
            arch.hidden = self.hidden.clone();
        }
        if self.latent_dim > 0 {
            arch.latent_dim = self.latent_dim;
        }
        arch.leaky_slope = self.leaky_slope;
        arch
    }

    /// Materialize the pipeline-facing configuration for one run.
    pub fn to_pipeline_config(&self, input_dim: usize, seed: u64) -> PipelineConfig {
        PipelineConfig {
            w_train: self.w_train,
            w_drift: self.w_drift,
            w_distance: self.w_distance,
            p: self.p,
            p_warn: self.p_warn,
            p_alarm: self.p_alarm,
            expiry_time: self.expiry_time,
            epochs: self.epochs,
            batch_size: self.batch_size,
            pretrain_epochs: self.pretrain_epochs,
            lr: self.lr,
            beta: self.beta,
            loss_kind: self.loss,
            arch: self.architecture(input_dim),
            seed,
            n_boot: self.n_boot,
            dis_margin: self.dis_margin,
            dd_mode: self.dd_mode,
        }
    }

    /// Canonical flat text form; written for provenance and hashed into
    /// every artifact file name.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let dd = match self.dd_mode {
            DdMode::Dual => "dual",
            DdMode::KsOnly => "ks_only",
            DdMode::DistanceOnly => "distance_only",
        };
        let loss = match self.loss {
            LossKind::BinaryCrossEntropy => "bce",
            LossKind::SquaredError => "squared",
        };
        let join = |v: &[u64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let joinu = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "dataset = \"{}\"", self.dataset.label());
        let _ = writeln!(s, "runs = {}", self.n_runs);
        let _ = writeln!(s, "seeds = \"{}\"", join(&self.run_seeds()));
        let _ = writeln!(s, "dd_mode = \"{dd}\"");
        let _ = writeln!(s, "w_train = {}", self.w_train);
        let _ = writeln!(s, "w_drift = {}", self.w_drift);
        let _ = writeln!(s, "w_distance = {}", self.w_distance);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "p_warn = {}", self.p_warn);
        let _ = writeln!(s, "p_alarm = {}", self.p_alarm);
        let _ = writeln!(s, "expiry_time = {}", self.expiry_time);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "pretrain_epochs = {}", self.pretrain_epochs);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "loss = \"{loss}\"");
        let _ = writeln!(s, "hidden = \"{}\"", joinu(&self.hidden));
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "leaky_slope = {}", self.leaky_slope);
        let _ = writeln!(s, "n_boot = {}", self.n_boot);
        let _ = writeln!(s, "dis_margin = {}", self.dis_margin);
        let _ = writeln!(s, "an_ref_size = {}", self.an_ref_size);
        let _ = writeln!(s, "fading = {}", self.fading);
        let _ = writeln!(s, "tolerance = {}", self.tolerance);
        let _ = writeln!(s, "length = {}", self.length);
        let _ = writeln!(s, "drift_times = \"{}\"", joinu(&self.drift_times));
        s
    }

    pub fn config_hash(&self) -> String {
        format!("{:08x}", fnv1a64(self.resolved_text().as_bytes()) as u32)
    }
}

/// Everything observed in one seeded run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub validation_gmean: f64,
    pub final_gmean: f64,
    pub gmean_series: Vec<f64>,
    pub alarm_steps: Vec<usize>,
    pub alarm_sources: Vec<AlarmSource>,
    pub score: AlarmScore,
    pub events: Vec<crate::pipeline::DriftEvent>,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub validation_gmean: f64,
    pub final_gmean: f64,
    pub detections: usize,
    pub drifts: usize,
    pub delays: Vec<Option<usize>>,
    pub false_alarms: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
    pub mean_final_gmean: f64,
    pub stderr_final_gmean: f64,
    pub mean_false_alarms: f64,
    pub runs_with_all_drifts_detected: usize,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

/// Stream material for one run.
struct RunData {
    instances: Vec<LabeledInstance>,
    pretrain: Vec<Vec<f64>>,
    validation: Vec<(Vec<f64>, u8)>,
    an_ref: Vec<Vec<f64>>,
    true_drifts: Vec<usize>,
    input_dim: usize,
}

fn prepare_run_data(cfg: &ExperimentConfig, seed: u64) -> Result<RunData> {
    match &cfg.dataset {
        DatasetSpec::Builtin(name) => {
            let mut spec = StreamSpec::builtin(name)?;
            if cfg.length > 0 {
                spec = spec.truncated(cfg.length);
            }
            let sets = datagen::make_pretraining_sets(&spec, seed)?;
            let an_ref = datagen::make_anomaly_pool(&spec, seed, cfg.an_ref_size)?;
            let instances: Vec<LabeledInstance> =
                datagen::generate_stream(&spec, seed).collect::<Result<_>>()?;
            Ok(RunData {
                input_dim: spec.n_features,
                true_drifts: spec.drift_times.clone(),
                instances,
                pretrain: sets.train,
                validation: sets.validation,
                an_ref,
            })
        }
        DatasetSpec::Csv(path) => {
            let mut instances = datagen::load_csv_stream(path, None)?;
            if cfg.length > 0 {
                instances.truncate(cfg.length);
            }
            let input_dim = instances
                .first()
                .map(|i| i.x.len())
                .ok_or_else(|| Error::Data(format!("{}: empty stream", path.display())))?;
            let pretrain: Vec<Vec<f64>> = instances
                .iter()
                .filter(|i| i.y_true == 0)
                .take(datagen::PRETRAIN_NORMAL)
                .map(|i| i.x.clone())
                .collect();
            let an_ref: Vec<Vec<f64>> = instances
                .iter()
                .filter(|i| i.y_true == 1)
                .take(cfg.an_ref_size)
                .map(|i| i.x.clone())
                .collect();
            Ok(RunData {
                input_dim,
                true_drifts: cfg.drift_times.clone(),
                instances,
                pretrain,
                validation: Vec::new(),
                an_ref,
            })
        }
    }
}

/// Execute one seeded run: pre-train, stream every instance through the
/// pipeline, collect prequential metrics and drift events, and score the
/// alarms against the drift schedule.
pub fn run_single(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let data = prepare_run_data(cfg, seed)?;
    let pcfg = cfg.to_pipeline_config(data.input_dim, seed);
    let mut pipeline = Pipeline::pretrain(pcfg, &data.pretrain, &data.an_ref)?;
    let validation_gmean = if data.validation.is_empty() {
        f64::NAN
    } else {
        pipeline.validate_gmean(&data.validation)?
    };

    let mut counts = FadedCounts::new(cfg.fading);
    let mut records = Vec::with_capacity(data.instances.len());
    let mut gmean_series = Vec::with_capacity(data.instances.len());
    for inst in &data.instances {
        let out = pipeline.step(&inst.x)?;
        let g = counts.update(inst.y_true, out.y_pred);
        gmean_series.push(g);
        records.push(StepRecord {
            t: out.t,
            y_true: inst.y_true,
            y_pred: out.y_pred,
            loss: out.instance_loss,
            theta: out.theta,
            g_mean: g,
            warn: u8::from(out.warn_active),
            alarm_source: out.alarm.map(|s| s.to_string()).unwrap_or_default(),
        });
    }

    let events = pipeline.events().to_vec();
    let alarm_steps: Vec<usize> = events
        .iter()
        .filter(|e| e.kind == EventKind::Alarm)
        .map(|e| e.t)
        .collect();
    let alarm_sources: Vec<AlarmSource> = events
        .iter()
        .filter(|e| e.kind == EventKind::Alarm)
        .filter_map(|e| e.source)
        .collect();
    let score = eval::score_alarms(&alarm_steps, &data.true_drifts, cfg.tolerance);
    let final_gmean = gmean_series.last().copied().unwrap_or(f64::NAN);

    Ok(RunResult {
        seed,
        validation_gmean,
        final_gmean,
        gmean_series,
        alarm_steps,
        alarm_sources,
        score,
        events,
        records,
    })
}

/// Run every seed (in parallel when enabled), assemble the summary, and
/// write artifacts when an output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let seeds = cfg.run_seeds();
    if seeds.is_empty() {
        return Err(Error::Config("no seeds to run".into()));
    }
    let results: Vec<Result<RunResult>> = map_indices(seeds.len(), |i| run_single(cfg, seeds[i]));
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }

    let summary = summarize(cfg, &runs);
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(cfg, &runs, &summary, dir)?;
    }
    Ok(ExperimentResult { runs, summary })
}

fn summarize(cfg: &ExperimentConfig, runs: &[RunResult]) -> Summary {
    let finals: Vec<f64> = runs.iter().map(|r| r.final_gmean).collect();
    let (mean_final, std_final) = crate::util::mean_std(&finals);
    let mean_fa =
        runs.iter().map(|r| r.score.false_alarms as f64).sum::<f64>() / runs.len().max(1) as f64;
    let all_detected = runs
        .iter()
        .filter(|r| r.score.detected.iter().all(|&d| d))
        .count();
    Summary {
        dataset: cfg.dataset.label(),
        config_hash: cfg.config_hash(),
        runs: runs
            .iter()
            .map(|r| RunSummary {
                seed: r.seed,
                validation_gmean: r.validation_gmean,
                final_gmean: r.final_gmean,
                detections: r.score.detected.iter().filter(|&&d| d).count(),
                drifts: r.score.detected.len(),
                delays: r.score.delays.clone(),
                false_alarms: r.score.false_alarms,
            })
            .collect(),
        mean_final_gmean: mean_final,
        stderr_final_gmean: std_final / (runs.len().max(1) as f64).sqrt(),
        mean_false_alarms: mean_fa,
        runs_with_all_drifts_detected: all_detected,
    }
}

fn write_artifacts(
    cfg: &ExperimentConfig,
    runs: &[RunResult],
    summary: &Summary,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.config_hash();
    fs::write(dir.join(format!("config_{hash}.toml")), cfg.resolved_text())?;

    for (i, run) in runs.iter().enumerate() {
        let metrics = dir.join(format!("metrics_run{}_seed{}_{hash}.csv", i + 1, run.seed));
        eval::write_metrics_csv(fs::File::create(&metrics)?, &run.records)?;

        let events = dir.join(format!("events_run{}_seed{}_{hash}.csv", i + 1, run.seed));
        let mut w = csv::Writer::from_writer(fs::File::create(&events)?);
        w.write_record(["t", "kind", "source", "detail"])?;
        for e in &run.events {
            let kind = match e.kind {
                EventKind::WarnSet => "warn_set",
                EventKind::WarnExpired => "warn_expired",
                EventKind::Alarm => "alarm",
            };
            w.write_record(&[
                e.t.to_string(),
                kind.to_string(),
                e.source.map(|s| s.to_string()).unwrap_or_default(),
                e.detail.to_string(),
            ])?;
        }
        w.flush()?;
    }

    fs::write(
        dir.join(format!("summary_{hash}.json")),
        serde_json::to_string_pretty(summary)?,
    )?;

    // tidy per-run table for plotting tools
    let runs_csv = dir.join(format!("runs_{hash}.csv"));
    let mut w = csv::Writer::from_writer(fs::File::create(&runs_csv)?);
    w.write_record([
        "run",
        "seed",
        "validation_gmean",
        "final_gmean",
        "detections",
        "drifts",
        "false_alarms",
    ])?;
    for (i, r) in summary.runs.iter().enumerate() {
        w.write_record(&[
            (i + 1).to_string(),
            r.seed.to_string(),
            r.validation_gmean.to_string(),
            r.final_gmean.to_string(),
            r.detections.to_string(),
            r.drifts.to_string(),
            r.false_alarms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub mean_final_gmean: f64,
    pub mean_false_alarms: f64,
    pub per_run_false_alarms: Vec<usize>,
    pub per_run_final_gmean: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

/// Re-run the experiment once per parameter value and tabulate final
/// G-mean and false-alarm counts.
pub fn sweep(base: &ExperimentConfig, parameter: &str, values: &[String]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        cfg.set_key(parameter, value)?;
        if let Some(dir) = &base.out_dir {
            cfg.out_dir = Some(dir.join(format!("{parameter}_{value}")));
        }
        let result = run_experiment(&cfg)?;
        rows.push(SweepRow {
            value: value.clone(),
            mean_final_gmean: result.summary.mean_final_gmean,
            mean_false_alarms: result.summary.mean_false_alarms,
            per_run_false_alarms: result.runs.iter().map(|r| r.score.false_alarms).collect(),
            per_run_final_gmean: result.runs.iter().map(|r| r.final_gmean).collect(),
        });
    }
    let result = SweepResult {
        parameter: parameter.to_string(),
        rows,
    };
    if let Some(dir) = &base.out_dir {
        fs::create_dir_all(dir)?;
        let hash = base.config_hash();
        let path = dir.join(format!("sweep_{}_{hash}.csv", parameter));
        let mut w = csv::Writer::from_writer(fs::File::create(path)?);
        w.write_record([parameter, "mean_final_gmean", "mean_false_alarms"])?;
        for row in &result.rows {
            w.write_record(&[
                row.value.clone(),
                row.mean_final_gmean.to_string(),
                row.mean_false_alarms.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_dataset("sea").unwrap();
        cfg.length = 400;
        cfg.w_train = 80;
        cfg.w_drift = 40;
        cfg.w_distance = 10;
        cfg.an_ref_size = 40;
        cfg.pretrain_epochs = 8;
        cfg.epochs = 2;
        cfg.n_boot = 50;
        cfg.n_runs = 2;
        cfg
    }

    #[test]
    fn defaults_match_dataset_families() {
        let sea = ExperimentConfig::for_dataset("sea").unwrap();
        assert_eq!(sea.w_train, 2_000);
        assert_eq!(sea.w_drift, 1_000);
        assert_eq!(sea.w_distance, 50);
        assert_eq!(sea.p, 100.0);
        assert_eq!(sea.p_warn, 0.01);
        assert_eq!(sea.p_alarm, 0.001);
        assert_eq!(sea.expiry_time, 100);
        assert_eq!(sea.beta, 1.0);
        assert_eq!(sea.loss, LossKind::BinaryCrossEntropy);

        let vib = ExperimentConfig::for_dataset("vib").unwrap();
        assert_eq!(vib.beta, 0.0);

        let csv = ExperimentConfig::for_dataset("data/fraud.csv").unwrap();
        assert_eq!(csv.w_train, 1_000);
        assert_eq!(csv.w_drift, 200);
        assert_eq!(csv.loss, LossKind::SquaredError);

        assert!(ExperimentConfig::for_dataset("nope").is_err());
    }

    #[test]
    fn set_key_rejects_unknown_keys() {
        let mut cfg = ExperimentConfig::for_dataset("sea").unwrap();
        let err = cfg.set_key("w_trian", "100").unwrap_err();
        assert!(err.to_string().contains("w_trian"));
        cfg.set_key("w_train", "123").unwrap();
        assert_eq!(cfg.w_train, 123);
        cfg.set_key("loss", "squared").unwrap();
        assert_eq!(cfg.loss, LossKind::SquaredError);
        cfg.set_key("hidden", "16,8").unwrap();
        assert_eq!(cfg.hidden, vec![16, 8]);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::for_dataset("sea").unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.set_key("w_train", "999").unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn tiny_experiment_runs_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.out_dir = Some(dir.path().to_path_buf());
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.runs.len(), 2);
        assert_eq!(result.runs[0].records.len(), 400);

        let hash = cfg.config_hash();
        for i in 1..=2 {
            let seed = i as u64;
            assert!(dir
                .path()
                .join(format!("metrics_run{i}_seed{seed}_{hash}.csv"))
                .exists());
            assert!(dir
                .path()
                .join(format!("events_run{i}_seed{seed}_{hash}.csv"))
                .exists());
        }
        assert!(dir.path().join(format!("summary_{hash}.json")).exists());
        assert!(dir.path().join(format!("runs_{hash}.csv")).exists());
        assert!(dir.path().join(format!("config_{hash}.toml")).exists());

        // metrics roundtrip reproduces the in-memory series
        let metrics =
            eval::read_metrics_csv(&dir.path().join(format!("metrics_run1_seed1_{hash}.csv")))
                .unwrap();
        assert_eq!(metrics, result.runs[0].records);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.n_runs = 1;

        cfg.out_dir = Some(dir_a.path().to_path_buf());
        run_experiment(&cfg).unwrap();
        cfg.out_dir = Some(dir_b.path().to_path_buf());
        run_experiment(&cfg).unwrap();

        let hash = cfg.config_hash();
        let name = format!("metrics_run1_seed1_{hash}.csv");
        let a = std::fs::read(dir_a.path().join(&name)).unwrap();
        let b = std::fs::read(dir_b.path().join(&name)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_shapes_and_single_value_equivalence() {
        let cfg = tiny_cfg();
        let single = sweep(&cfg, "w_train", &["80".into()]).unwrap();
        assert_eq!(single.rows.len(), 1);
        let direct = run_experiment(&cfg).unwrap();
        assert_eq!(
            single.rows[0].mean_final_gmean,
            direct.summary.mean_final_gmean
        );
        assert!(sweep(&cfg, "w_train", &[]).is_err());
        assert!(sweep(&cfg, "bogus", &["1".into()]).is_err());
    }
}
