//! Prequential evaluation with fading factors, G-mean, drift-alarm
//! scoring, and multi-run aggregation.
//!
//! Counts fade as `count <- alpha * count + indicator`, so `alpha = 1`
//! recovers exact cumulative confusion counts. While a class has not yet
//! been observed its recall is treated as 1, which keeps the metric
//! defined from the first step; early-stream values depend on this
//! convention.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EMPTY_CLASS_EPS: f64 = 1e-12;

/// Exponentially faded confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FadedCounts {
    pub tp: f64,
    pub tn: f64,
    pub p: f64,
    pub n: f64,
    pub alpha: f64,
}

impl FadedCounts {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "fading factor must be in (0, 1]");
        FadedCounts {
            tp: 0.0,
            tn: 0.0,
            p: 0.0,
            n: 0.0,
            alpha,
        }
    }

    /// Decay all counts, absorb one labeled outcome, and return the
    /// current G-mean.
    pub fn update(&mut self, y_true: u8, y_pred: u8) -> f64 {
        self.tp *= self.alpha;
        self.tn *= self.alpha;
        self.p *= self.alpha;
        self.n *= self.alpha;
        if y_true == 1 {
            self.p += 1.0;
            if y_pred == 1 {
                self.tp += 1.0;
            }
        } else {
            self.n += 1.0;
            if y_pred == 0 {
                self.tn += 1.0;
            }
        }
        self.g_mean()
    }

    /// `(recall of the anomalous class, recall of the normal class)`;
    /// a class with no mass yet reports recall 1.
    pub fn recalls(&self) -> (f64, f64) {
        let r_pos = if self.p < EMPTY_CLASS_EPS { 1.0 } else { self.tp / self.p };
        let r_neg = if self.n < EMPTY_CLASS_EPS { 1.0 } else { self.tn / self.n };
        (r_pos, r_neg)
    }

    pub fn g_mean(&self) -> f64 {
        let (r_pos, r_neg) = self.recalls();
        (r_pos * r_neg).sqrt()
    }
}

/// Alarm scoring against a known drift schedule. An alarm is a true
/// detection of drift `g` when it is the first alarm inside
/// `(g, g + tolerance]`; later alarms in the same window and alarms in no
/// window count as false alarms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmScore {
    pub detected: Vec<bool>,
    pub delays: Vec<Option<usize>>,
    pub false_alarms: usize,
}

pub fn score_alarms(alarms: &[usize], true_drifts: &[usize], tolerance: usize) -> AlarmScore {
    let mut detected = vec![false; true_drifts.len()];
    let mut delays: Vec<Option<usize>> = vec![None; true_drifts.len()];
    let mut false_alarms = 0;
    for &a in alarms {
        let window = true_drifts
            .iter()
            .rposition(|&g| g < a && a <= g + tolerance);
        match window {
            Some(gi) if !detected[gi] => {
                detected[gi] = true;
                delays[gi] = Some(a - true_drifts[gi]);
            }
            _ => false_alarms += 1,
        }
    }
    AlarmScore {
        detected,
        delays,
        false_alarms,
    }
}

/// Per-step mean and standard error (population deviation over the runs,
/// divided by sqrt of the run count).
pub fn aggregate_runs(series: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = series
        .first()
        .ok_or_else(|| Error::Contract("aggregate_runs: no series".into()))?;
    let len = first.len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Contract("aggregate_runs: series lengths differ".into()));
    }
    let r = series.len() as f64;
    let mut means = Vec::with_capacity(len);
    let mut stderrs = Vec::with_capacity(len);
    for i in 0..len {
        let vals: Vec<f64> = series.iter().map(|s| s[i]).collect();
        let (m, s) = crate::util::mean_std(&vals);
        means.push(m);
        stderrs.push(s / r.sqrt());
    }
    Ok((means, stderrs))
}

/// One row of the per-step metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub y_true: u8,
    pub y_pred: u8,
    pub loss: f64,
    pub theta: f64,
    pub g_mean: f64,
    pub warn: u8,
    pub alarm_source: String,
}

pub const METRICS_HEADER: [&str; 8] =
    ["t", "y_true", "y_pred", "loss", "theta", "g_mean", "warn", "alarm_source"];

pub fn write_metrics_csv<W: Write>(writer: W, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record(&[
            r.t.to_string(),
            r.y_true.to_string(),
            r.y_pred.to_string(),
            r.loss.to_string(),
            r.theta.to_string(),
            r.g_mean.to_string(),
            r.warn.to_string(),
            r.alarm_source.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        let field = |i: usize| r.get(i).unwrap_or("").to_string();
        let parse_f = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad float '{}' in metrics csv", field(i))))
        };
        let parse_u = |i: usize| -> Result<usize> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad integer '{}' in metrics csv", field(i))))
        };
        out.push(StepRecord {
            t: parse_u(0)?,
            y_true: parse_u(1)? as u8,
            y_pred: parse_u(2)? as u8,
            loss: parse_f(3)?,
            theta: parse_f(4)?,
            g_mean: parse_f(5)?,
            warn: parse_u(6)? as u8,
            alarm_source: field(7),
        });
    }
    Ok(out)
}
