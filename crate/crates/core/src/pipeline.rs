//! The streaming orchestrator: predict each arriving instance, route it
//! to the appropriate windows, train incrementally, run both drift
//! detectors, manage the warn/alarm lifecycle, and rebuild the model on
//! alarms.
//!
//! Per step, in order: normalize and predict; route by prediction;
//! train when enough of the training window was replaced (and no warning
//! is active); fill the drift reference window or run the KS scan;
//! accumulate warned instances and expire stale warnings; run the
//! distance test when the anomaly window is full; finally handle any
//! alarm by rebuilding the model and resetting the windows.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Normalizer;
use crate::detector::{self, ThresholdState};
use crate::drift::{self, AlarmSource, DriftState};
use crate::error::{Error, Result};
use crate::util::{derive_rng, stream};
use crate::vae::{self, Architecture, Checkpoint, LossKind, VaeModel};
use crate::window::SlidingWindow;

/// Which detectors are active; `Dual` is the normal configuration, the
/// single-detector modes exist for the ablation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdMode {
    Dual,
    KsOnly,
    DistanceOnly,
}

impl std::str::FromStr for DdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(DdMode::Dual),
            "ks_only" => Ok(DdMode::KsOnly),
            "distance_only" => Ok(DdMode::DistanceOnly),
            other => Err(Error::Config(format!(
                "unknown dd_mode '{other}' (expected dual, ks_only, or distance_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub w_train: usize,
    pub w_drift: usize,
    pub w_distance: usize,
    /// Training triggers when this percentage of the training window has
    /// been replaced since the last training event.
    pub p: f64,
    pub p_warn: f64,
    pub p_alarm: f64,
    pub expiry_time: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub beta: f64,
    pub loss_kind: LossKind,
    pub arch: Architecture,
    pub seed: u64,
    pub n_boot: usize,
    /// Safety factor applied to the calibrated distance threshold.
    pub dis_margin: f64,
    pub dd_mode: DdMode,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_alarm < self.p_warn) {
            return Err(Error::Config(format!(
                "p_alarm ({}) must be smaller than p_warn ({})",
                self.p_alarm, self.p_warn
            )));
        }
        if self.w_distance > self.w_train {
            return Err(Error::Config(format!(
                "w_distance ({}) must not exceed w_train ({})",
                self.w_distance, self.w_train
            )));
        }
        if !(self.p > 0.0 && self.p <= 100.0) {
            return Err(Error::Config(format!("p ({}) must lie in (0, 100]", self.p)));
        }
        if self.w_train == 0 || self.w_drift < 2 || self.w_distance == 0 {
            return Err(Error::Config("window sizes must be positive (w_drift >= 2)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        if self.dis_margin <= 0.0 {
            return Err(Error::Config("dis_margin must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step observability record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub t: usize,
    pub y_pred: u8,
    pub instance_loss: f64,
    /// Threshold in force at the end of the step.
    pub theta: f64,
    pub trained: bool,
    pub warn_set: bool,
    pub warn_cleared: bool,
    pub alarm: Option<AlarmSource>,
    pub model_rebuilt: bool,
    /// Warning flag state at the end of the step.
    pub warn_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    WarnSet,
    WarnExpired,
    Alarm,
}

/// One flag transition, recorded append-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub t: usize,
    pub kind: EventKind,
    pub source: Option<AlarmSource>,
    /// Minimum p-value for KS events, window distance for distance events.
    pub detail: f64,
}

/// Pre-trained streaming detector; owns the model, the windows, and the
/// drift state. Strictly sequential in `t`.
pub struct Pipeline {
    cfg: PipelineConfig,
    model: VaeModel,
    normalizer: Normalizer,
    threshold: ThresholdState,
    mov_train: SlidingWindow<Vec<f64>>,
    drift: DriftState,
    t: usize,
    train_rng: ChaCha8Rng,
    model_rng: ChaCha8Rng,
    events: Vec<DriftEvent>,
    model_version: u64,
}

impl Pipeline {
    /// Offline initialization: fit the normalizer on the unlabeled
    /// pre-training set, train the model on it, set the initial threshold
    /// from its losses, seed the anomaly reference window from `an_ref`
    /// and calibrate the distance threshold. The KS reference window
    /// starts empty and fills from the live stream.
    pub fn pretrain(cfg: PipelineConfig, d_train: &[Vec<f64>], an_ref: &[Vec<f64>]) -> Result<Pipeline> {
        cfg.validate()?;
        if d_train.is_empty() {
            return Err(Error::Data("pre-training set is empty".into()));
        }
        if an_ref.len() < 2 * cfg.w_distance {
            return Err(Error::Data(format!(
                "need at least {} anomalous reference instances, got {}",
                2 * cfg.w_distance,
                an_ref.len()
            )));
        }
        let normalizer = Normalizer::fit(d_train)?;
        if normalizer.dim() != cfg.arch.input_dim {
            return Err(Error::Config(format!(
                "architecture input dimension {} does not match data dimension {}",
                cfg.arch.input_dim,
                normalizer.dim()
            )));
        }
        let d_norm: Vec<Vec<f64>> = d_train.iter().map(|x| normalizer.apply(x)).collect();
        let an_norm: Vec<Vec<f64>> = an_ref.iter().map(|x| normalizer.apply(x)).collect();

        let mut model_rng = derive_rng(cfg.seed, stream::MODEL_INIT);
        let mut train_rng = derive_rng(cfg.seed, stream::TRAINING);
        let mut calib_rng = derive_rng(cfg.seed, stream::CALIBRATION);

        let mut model = VaeModel::new(cfg.arch.clone(), cfg.beta, cfg.loss_kind, cfg.lr, &mut model_rng);
        vae::train_on_window(&mut model, &d_norm, cfg.pretrain_epochs, cfg.batch_size, &mut train_rng)?;
        let threshold = detector::compute_threshold(&model, &d_norm, 0)?;

        let ref_disx: Vec<Vec<f64>> = an_norm[..cfg.w_distance].to_vec();
        let dis_thre = cfg.dis_margin
            * drift::calibrate_distance_threshold(&an_norm, cfg.w_distance, cfg.n_boot, &mut calib_rng)?;
        let drift_state = DriftState::new(
            cfg.w_drift,
            cfg.w_distance,
            cfg.p_warn,
            cfg.p_alarm,
            cfg.expiry_time,
            ref_disx,
            dis_thre,
        )?;

        Ok(Pipeline {
            mov_train: SlidingWindow::new(cfg.w_train),
            drift: drift_state,
            model,
            normalizer,
            threshold,
            t: 0,
            train_rng,
            model_rng,
            events: Vec::new(),
            model_version: 1,
            cfg,
        })
    }

    /// Process one arriving instance.
    pub fn step(&mut self, x_raw: &[f64]) -> Result<StepOutcome> {
        self.t += 1;
        let t = self.t;
        if x_raw.len() != self.normalizer.dim() {
            return Err(Error::Contract(format!(
                "step {t}: instance dimension {} does not match stream dimension {}",
                x_raw.len(),
                self.normalizer.dim()
            )));
        }
        let x = self.normalizer.apply(x_raw);

        // 1. predict
        let (y_pred, instance_loss) =
            detector::predict(&self.model, self.threshold.theta, &x).map_err(|e| at_step(e, t))?;
        let mut out = StepOutcome {
            t,
            y_pred,
            instance_loss,
            theta: self.threshold.theta,
            trained: false,
            warn_set: false,
            warn_cleared: false,
            alarm: None,
            model_rebuilt: false,
            warn_active: false,
        };

        // 2. route by prediction
        if y_pred == 0 {
            self.mov_train.push(x.clone());
            self.drift.mov_driftx.push(x.clone());
        } else {
            self.drift.mov_an.push(x.clone());
        }

        // 3. incremental training
        if self.mov_train.replaced_fraction() >= self.cfg.p / 100.0 && !self.drift.flag_warn {
            let window = self.mov_train.to_vec();
            vae::train_on_window(
                &mut self.model,
                &window,
                self.cfg.epochs,
                self.cfg.batch_size,
                &mut self.train_rng,
            )
            .map_err(|e| at_step(e, t))?;
            self.model_version += 1;
            self.threshold =
                detector::compute_threshold(&self.model, &window, t).map_err(|e| at_step(e, t))?;
            self.mov_train.mark_reset();
            out.trained = true;
            out.theta = self.threshold.theta;
        }

        // 4. KS detector: fill the reference window first, then scan
        let mut alarm_detail = 0.0;
        if self.cfg.dd_mode != DdMode::DistanceOnly {
            if !self.drift.ref_driftx.is_full() {
                self.drift.ref_driftx.push(x.clone());
            } else if self.drift.mov_driftx.is_full() {
                let scan = drift::ks_drift_scan(&self.model, &mut self.drift, self.model_version, t)
                    .map_err(|e| at_step(e, t))?;
                if scan.warn_raised {
                    out.warn_set = true;
                    self.events.push(DriftEvent {
                        t,
                        kind: EventKind::WarnSet,
                        source: None,
                        detail: scan.min_p,
                    });
                }
                if scan.alarm_raised {
                    alarm_detail = scan.min_p;
                }
            }
        }

        // 5. warned-instance accumulation and expiry
        if self.drift.flag_warn && !self.drift.flag_alarm {
            self.drift.mov_warn.push(x.clone());
            if drift::warning_expiry_update(&mut self.drift, t) {
                out.warn_cleared = true;
                self.events.push(DriftEvent {
                    t,
                    kind: EventKind::WarnExpired,
                    source: None,
                    detail: 0.0,
                });
            }
        }

        // 6. distance detector
        if self.cfg.dd_mode != DdMode::KsOnly && !self.drift.flag_alarm && self.drift.mov_an.is_full()
        {
            let mov: Vec<Vec<f64>> = self.drift.mov_an.to_vec();
            let dis = drift::window_distance(&self.drift.ref_disx, &mov).map_err(|e| at_step(e, t))?;
            if dis > self.drift.dis_thre {
                self.drift.flag_alarm = true;
                self.drift.alarm_source = Some(AlarmSource::Distance);
                alarm_detail = dis;
            }
        }

        // 7. alarm handling
        if self.drift.flag_alarm {
            let source = self.drift.alarm_source.expect("alarm implies a source");
            self.events.push(DriftEvent {
                t,
                kind: EventKind::Alarm,
                source: Some(source),
                detail: alarm_detail,
            });
            self.handle_alarm(source).map_err(|e| at_step(e, t))?;
            out.alarm = Some(source);
            out.model_rebuilt = true;
            out.theta = self.threshold.theta;
        }

        out.warn_active = self.drift.flag_warn;
        Ok(out)
    }

    /// Replace the model with a freshly initialized one, train it on the
    /// detector-selected window, recompute the threshold from that window,
    /// and reset all moving windows plus the KS reference window.
    fn handle_alarm(&mut self, source: AlarmSource) -> Result<()> {
        self.model = VaeModel::new(
            self.cfg.arch.clone(),
            self.cfg.beta,
            self.cfg.loss_kind,
            self.cfg.lr,
            &mut self.model_rng,
        );
        self.model_version += 1;

        let chosen: Vec<Vec<f64>> = match source {
            AlarmSource::Distance => self.drift.mov_an.to_vec(),
            AlarmSource::Ks => self.drift.mov_warn.clone(),
        };
        let train_set = if !chosen.is_empty() {
            chosen
        } else {
            // a KS alarm can fire on the same scan that would have warned,
            // leaving mov_warn empty; fall back to the freshest drift-window
            // content, then to the training window
            let fb = self.drift.mov_driftx.last_n(self.cfg.w_train);
            if !fb.is_empty() {
                fb
            } else {
                self.mov_train.to_vec()
            }
        };
        if !train_set.is_empty() {
            vae::train_on_window(
                &mut self.model,
                &train_set,
                self.cfg.epochs,
                self.cfg.batch_size,
                &mut self.train_rng,
            )?;
            self.threshold = detector::compute_threshold(&self.model, &train_set, self.t)?;
        }

        self.mov_train.clear();
        self.drift.reset_after_alarm();
        Ok(())
    }

    /// Unfaded G-mean over a labeled hold-out set.
    pub fn validate_gmean(&self, labeled: &[(Vec<f64>, u8)]) -> Result<f64> {
        let mut counts = crate::eval::FadedCounts::new(1.0);
        let mut g = 1.0;
        for (x, y_true) in labeled {
            let xn = self.normalizer.apply(x);
            let (y_pred, _) = detector::predict(&self.model, self.threshold.theta, &xn)?;
            g = counts.update(*y_true, y_pred);
        }
        Ok(g)
    }

    pub fn theta(&self) -> f64 {
        self.threshold.theta
    }

    pub fn events(&self) -> &[DriftEvent] {
        &self.events
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn drift_state(&self) -> &DriftState {
        &self.drift
    }

    pub fn mov_train_len(&self) -> usize {
        self.mov_train.len()
    }

    pub fn checkpoint(&self) -> PipelineCheckpoint {
        PipelineCheckpoint {
            format_version: vae::CHECKPOINT_VERSION,
            model: Checkpoint::new(self.model.clone(), self.normalizer.clone()),
            theta: self.threshold.theta,
            dis_thre: self.drift.dis_thre,
            ref_disx: self.drift.ref_disx.clone(),
        }
    }
}

fn at_step(e: Error, t: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {t}: {msg}")),
        Error::Contract(msg) => Error::Contract(format!("step {t}: {msg}")),
        other => other,
    }
}

/// Pre-trained detector state as written by the `pretrain` command: the
/// model checkpoint plus the threshold and the distance-detector
/// reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCheckpoint {
    pub format_version: u32,
    pub model: Checkpoint,
    pub theta: f64,
    pub dis_thre: f64,
    pub ref_disx: Vec<Vec<f64>>,
}

impl PipelineCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{self, StreamSpec};

    fn small_config(seed: u64) -> PipelineConfig {
        PipelineConfig {
            w_train: 120,
            w_drift: 60,
            w_distance: 12,
            p: 100.0,
            p_warn: 0.01,
            p_alarm: 0.001,
            expiry_time: 50,
            epochs: 3,
            batch_size: 32,
            pretrain_epochs: 15,
            lr: 0.001,
            beta: 1.0,
            loss_kind: LossKind::BinaryCrossEntropy,
            arch: Architecture::new(2, vec![8], 2),
            seed,
            n_boot: 100,
            dis_margin: 1.4,
            dd_mode: DdMode::Dual,
        }
    }

    fn sea_pipeline(seed: u64) -> (Pipeline, StreamSpec) {
        let spec = StreamSpec::builtin("sea").unwrap();
        let sets = datagen::make_pretraining_sets(&spec, seed).unwrap();
        let pool = datagen::make_anomaly_pool(&spec, seed, 60).unwrap();
        let pipeline = Pipeline::pretrain(small_config(seed), &sets.train, &pool).unwrap();
        (pipeline, spec)
    }

    #[test]
    fn pretrain_rejects_bad_inputs() {
        let cfg = small_config(1);
        let pool = vec![vec![0.0, 0.0]; 30];
        assert!(Pipeline::pretrain(cfg.clone(), &[], &pool).is_err());
        let spec = StreamSpec::builtin("sea").unwrap();
        let sets = datagen::make_pretraining_sets(&spec, 1).unwrap();
        // too few anomalous references
        let small_pool = vec![vec![0.0, 0.0]; 5];
        assert!(Pipeline::pretrain(cfg, &sets.train, &small_pool).is_err());
    }

    #[test]
    fn pretrain_is_deterministic() {
        let (a, _) = sea_pipeline(3);
        let (b, _) = sea_pipeline(3);
        assert_eq!(a.model().param_fingerprint(), b.model().param_fingerprint());
        assert_eq!(a.theta(), b.theta());
        assert_eq!(a.drift_state().dis_thre, b.drift_state().dis_thre);
    }

    #[test]
    fn routing_sends_instances_to_the_right_windows() {
        let (mut pipeline, spec) = sea_pipeline(4);
        let mut saw_normal = false;
        let mut saw_anomalous = false;
        for item in datagen::generate_stream(&spec, 4).take(2_200) {
            let inst = item.unwrap();
            let before_train = pipeline.mov_train.len();
            let before_driftx = pipeline.drift.mov_driftx.len();
            let before_an = pipeline.drift.mov_an.len();
            let out = pipeline.step(&inst.x).unwrap();
            if out.trained || out.model_rebuilt {
                continue; // windows were reset or re-marked this step
            }
            if out.y_pred == 0 {
                saw_normal = true;
                assert!(pipeline.mov_train.len() >= before_train.min(pipeline.cfg.w_train - 1));
                assert!(pipeline.drift.mov_driftx.len() >= before_driftx.min(pipeline.cfg.w_drift - 1));
                assert_eq!(pipeline.drift.mov_an.len(), before_an);
            } else {
                saw_anomalous = true;
                assert_eq!(pipeline.mov_train.len(), before_train);
            }
        }
        assert!(saw_normal && saw_anomalous);
    }

    #[test]
    fn no_training_while_warned() {
        let (mut pipeline, spec) = sea_pipeline(5);
        // force a warning and fill the training window past its trigger
        for item in datagen::generate_stream(&spec, 5).take(400) {
            pipeline.step(&item.unwrap().x).unwrap();
        }
        pipeline.drift.flag_warn = true;
        pipeline.drift.warn_raised_at = Some(pipeline.t);
        let mut trained = false;
        for item in datagen::generate_stream(&spec, 6).take(20) {
            let out = pipeline.step(&item.unwrap().x).unwrap();
            trained |= out.trained;
            if !pipeline.drift.flag_warn {
                break;
            }
        }
        assert!(!trained);
    }

    #[test]
    fn alarm_resets_state_and_replaces_model() {
        let (mut pipeline, spec) = sea_pipeline(7);
        for item in datagen::generate_stream(&spec, 7).take(300) {
            pipeline.step(&item.unwrap().x).unwrap();
        }
        let fingerprint_before = pipeline.model().param_fingerprint();
        // force a KS alarm with warned instances available
        pipeline.drift.flag_alarm = true;
        pipeline.drift.alarm_source = Some(AlarmSource::Ks);
        pipeline.drift.mov_warn = (0..40).map(|i| vec![i as f64 / 40.0, 0.5]).collect();
        pipeline.handle_alarm(AlarmSource::Ks).unwrap();

        assert_ne!(pipeline.model().param_fingerprint(), fingerprint_before);
        assert_eq!(pipeline.mov_train.len(), 0);
        assert_eq!(pipeline.drift.mov_driftx.len(), 0);
        assert_eq!(pipeline.drift.ref_driftx.len(), 0);
        assert!(pipeline.drift.mov_warn.is_empty());
        assert_eq!(pipeline.drift.mov_an.len(), 0);
        assert!(!pipeline.drift.flag_warn && !pipeline.drift.flag_alarm);
        // the anomaly reference survives
        assert_eq!(pipeline.drift.ref_disx.len(), pipeline.cfg.w_distance);
    }

    #[test]
    fn stationary_stream_stays_quiet() {
        // no drifts, no anomalous intervals: no alarms expected
        let mut spec = StreamSpec::builtin("sea").unwrap().truncated(3_000);
        spec.anomalous_intervals.clear();
        let sets = datagen::make_pretraining_sets(&spec, 8).unwrap();
        let pool = datagen::make_anomaly_pool(&spec, 8, 60).unwrap();
        let mut pipeline = Pipeline::pretrain(small_config(8), &sets.train, &pool).unwrap();
        for item in datagen::generate_stream(&spec, 8) {
            pipeline.step(&item.unwrap().x).unwrap();
        }
        let alarms = pipeline
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::Alarm)
            .count();
        assert_eq!(alarms, 0, "events: {:?}", pipeline.events());
    }

    #[test]
    fn identical_seeds_give_identical_outcomes() {
        let run = |seed: u64| {
            let (mut pipeline, spec) = sea_pipeline(seed);
            let mut outs = Vec::new();
            for item in datagen::generate_stream(&spec, seed).take(1_000) {
                outs.push(pipeline.step(&item.unwrap().x).unwrap());
            }
            outs
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn alarm_events_are_strictly_increasing_in_t() {
        let (mut pipeline, spec) = sea_pipeline(10);
        for item in datagen::generate_stream(&spec, 10).take(6_000) {
            pipeline.step(&item.unwrap().x).unwrap();
        }
        let alarm_ts: Vec<usize> = pipeline
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::Alarm)
            .map(|e| e.t)
            .collect();
        assert!(alarm_ts.windows(2).all(|w| w[0] < w[1]));
        for e in pipeline.events() {
            if e.kind == EventKind::Alarm {
                assert!(e.source.is_some());
            }
        }
    }

    #[test]
    fn pipeline_checkpoint_roundtrips() {
        let (pipeline, _) = sea_pipeline(11);
        let cp = pipeline.checkpoint();
        let json = cp.to_json().unwrap();
        let back = PipelineCheckpoint::from_json(&json).unwrap();
        assert_eq!(cp, back);
    }
}
