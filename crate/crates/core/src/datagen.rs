//! Seeded synthetic stream generators with scheduled concept drifts and
//! anomalous-sequence intervals, CSV ingestion for external datasets,
//! pre-training set construction, and min-max feature scaling.
//!
//! Built-in streams: `sea`, `circle`, `sine`, `vib`, and `frame` (a
//! recurrent-drift stream used by the detector-ablation experiment).
//! Class regions are sampled by rejection inside a bounding box, except
//! Gaussian concepts which sample directly.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{derive_rng, stream};

/// One stream element. The label is carried for evaluation only; the
/// learner never sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub x: Vec<f64>,
    pub y_true: u8,
    pub t: usize,
}

/// Region membership test inside a concept's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    All,
    SumGe(f64),
    SumLe(f64),
    /// Inside the disk centered at `(cx, cy)` with radius `r`.
    DiskIn { cx: f64, cy: f64, r: f64 },
    /// `x2 > sin(x1) + offset`
    SineAbove { offset: f64 },
    /// `x2 < sin(x1) + offset`
    SineBelow { offset: f64 },
    /// Inside the axis-aligned box `[low, high]`.
    BoxIn { low: Vec<f64>, high: Vec<f64> },
    /// Outside the axis-aligned box `[low, high]`.
    NotBoxIn { low: Vec<f64>, high: Vec<f64> },
}

impl Predicate {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self {
            Predicate::All => true,
            Predicate::SumGe(c) => x.iter().sum::<f64>() >= *c,
            Predicate::SumLe(c) => x.iter().sum::<f64>() <= *c,
            Predicate::DiskIn { cx, cy, r } => {
                let dx = x[0] - cx;
                let dy = x[1] - cy;
                dx * dx + dy * dy <= r * r
            }
            Predicate::SineAbove { offset } => x[1] > x[0].sin() + offset,
            Predicate::SineBelow { offset } => x[1] < x[0].sin() + offset,
            Predicate::BoxIn { low, high } => x
                .iter()
                .zip(low.iter().zip(high))
                .all(|(v, (l, h))| v >= l && v <= h),
            Predicate::NotBoxIn { low, high } => !x
                .iter()
                .zip(low.iter().zip(high))
                .all(|(v, (l, h))| v >= l && v <= h),
        }
    }
}

/// How one class of one concept is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    /// Uniform proposals over the box, accepted when the predicate holds.
    Region {
        low: Vec<f64>,
        high: Vec<f64>,
        predicate: Predicate,
    },
    /// Independent per-feature Gaussians.
    Gaussian { means: Vec<f64>, stds: Vec<f64> },
    /// Draw from `base` and multiply every feature by `factor`.
    Scaled { base: Box<Support>, factor: f64 },
}

const REJECTION_LIMIT: usize = 100_000;

impl Support {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Support::Region { low, high, predicate } => {
                for _ in 0..REJECTION_LIMIT {
                    let x: Vec<f64> = low
                        .iter()
                        .zip(high)
                        .map(|(l, h)| rng.random_range(*l..*h))
                        .collect();
                    if predicate.holds(&x) {
                        return Ok(x);
                    }
                }
                Err(Error::Config(format!(
                    "rejection sampling found no point in {REJECTION_LIMIT} proposals; \
                     region is infeasible or nearly so"
                )))
            }
            Support::Gaussian { means, stds } => Ok(means
                .iter()
                .zip(stds)
                .map(|(m, s)| {
                    let d = Normal::new(*m, *s).expect("finite gaussian parameters");
                    d.sample(rng)
                })
                .collect()),
            Support::Scaled { base, factor } => {
                let mut x = base.sample(rng)?;
                x.iter_mut().for_each(|v| *v *= factor);
                Ok(x)
            }
        }
    }
}

/// One stationary concept: sampling rules for the normal and anomalous
/// classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub class0: Support,
    pub class1: Support,
}

/// Full description of a generated stream: feature count, length, drift
/// schedule, anomalous-sequence intervals, and the concept active in each
/// inter-drift segment. Recurrent drift repeats an earlier segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub n_features: usize,
    pub length: usize,
    pub drift_times: Vec<usize>,
    /// Half-open `[start, end)` intervals of anomalous steps.
    pub anomalous_intervals: Vec<(usize, usize)>,
    /// `drift_times.len() + 1` entries.
    pub segments: Vec<Concept>,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.segments.len() != self.drift_times.len() + 1 {
            return Err(Error::Config(format!(
                "stream '{}': {} segments for {} drift times",
                self.name,
                self.segments.len(),
                self.drift_times.len()
            )));
        }
        if !self.drift_times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("drift times must be strictly increasing".into()));
        }
        if self
            .drift_times
            .iter()
            .any(|&t| t < 1 || t > self.length)
        {
            return Err(Error::Config("drift times must lie within [1, length]".into()));
        }
        let mut prev_end = 0;
        let mut anomalous_steps = 0;
        for &(s, e) in &self.anomalous_intervals {
            if s >= e || s < prev_end {
                return Err(Error::Config(
                    "anomalous intervals must be ordered and disjoint".into(),
                ));
            }
            prev_end = e;
            anomalous_steps += e.min(self.length + 1) - s.min(self.length + 1);
        }
        if anomalous_steps as f64 / self.length as f64 >= 0.10 {
            return Err(Error::Config(
                "anomalous fraction must stay below 10%".into(),
            ));
        }
        Ok(())
    }

    /// Concept active at step `t` (1-based): the segment after the latest
    /// drift time `<= t`.
    pub fn concept_at(&self, t: usize) -> &Concept {
        let seg = self.drift_times.iter().filter(|&&d| d <= t).count();
        &self.segments[seg]
    }

    pub fn is_anomalous_at(&self, t: usize) -> bool {
        self.anomalous_intervals.iter().any(|&(s, e)| t >= s && t < e)
    }

    /// Truncate to `length` steps, dropping drift times and intervals that
    /// fall beyond the new end.
    pub fn truncated(mut self, length: usize) -> Self {
        self.length = length;
        let keep = self.drift_times.iter().filter(|&&d| d <= length).count();
        self.drift_times.truncate(keep);
        self.segments.truncate(keep + 1);
        self.anomalous_intervals.retain(|&(s, _)| s <= length);
        self
    }

    pub fn builtin(name: &str) -> Result<StreamSpec> {
        let spec = match name {
            "sea" => {
                // Thresholds on x1 + x2; features drawn from [0, 10] so the
                // class-0 region (sum >= 10) is feasible.
                let region = |pred: Predicate| Support::Region {
                    low: vec![0.0, 0.0],
                    high: vec![10.0, 10.0],
                    predicate: pred,
                };
                let a = Concept {
                    class0: region(Predicate::SumGe(10.0)),
                    class1: region(Predicate::SumLe(3.0)),
                };
                let b = Concept {
                    class0: region(Predicate::SumGe(15.0)),
                    class1: region(Predicate::SumLe(4.0)),
                };
                StreamSpec {
                    name: "sea".into(),
                    n_features: 2,
                    length: 15_000,
                    drift_times: vec![5_000, 10_000],
                    anomalous_intervals: vec![(2_000, 2_100), (7_000, 7_100), (12_000, 12_100)],
                    segments: vec![a.clone(), b, a],
                }
            }
            "circle" => {
                let region = |cx: f64, cy: f64, r: f64| Support::Region {
                    low: vec![0.0, 0.0],
                    high: vec![1.0, 1.0],
                    predicate: Predicate::DiskIn { cx, cy, r },
                };
                let a = Concept {
                    class0: region(0.6, 0.6, 0.2),
                    class1: region(0.2, 0.2, 0.2),
                };
                let b = Concept {
                    class0: region(0.6, 0.6, 0.1),
                    class1: region(0.2, 0.2, 0.15),
                };
                StreamSpec {
                    name: "circle".into(),
                    n_features: 2,
                    length: 15_000,
                    drift_times: vec![5_000, 10_000],
                    anomalous_intervals: vec![(3_000, 3_200), (8_000, 8_200), (13_000, 13_200)],
                    segments: vec![a.clone(), b, a],
                }
            }
            "sine" => {
                let region = |pred: Predicate| Support::Region {
                    low: vec![0.0, -1.0],
                    high: vec![std::f64::consts::PI, 1.0],
                    predicate: pred,
                };
                let a = Concept {
                    class0: region(Predicate::SineAbove { offset: 0.5 }),
                    class1: region(Predicate::SineBelow { offset: -1.0 }),
                };
                let b = Concept {
                    class0: region(Predicate::SineAbove { offset: 0.0 }),
                    class1: region(Predicate::SineBelow { offset: -1.1 }),
                };
                StreamSpec {
                    name: "sine".into(),
                    n_features: 2,
                    length: 30_000,
                    drift_times: vec![10_000, 20_000],
                    anomalous_intervals: vec![(5_000, 5_050), (15_000, 15_050), (25_000, 25_050)],
                    segments: vec![a.clone(), b, a],
                }
            }
            "vib" => {
                let gauss = |mean: f64, std: f64| Support::Gaussian {
                    means: vec![mean; 10],
                    stds: vec![std; 10],
                };
                let a = Concept {
                    class0: gauss(0.0, 1.0),
                    class1: gauss(5.0, 1.0),
                };
                let b = Concept {
                    class0: gauss(3.0, 1.0),
                    class1: gauss(0.0, 0.5),
                };
                StreamSpec {
                    name: "vib".into(),
                    n_features: 10,
                    length: 22_500,
                    drift_times: vec![7_500, 15_000],
                    anomalous_intervals: vec![(3_000, 3_200), (9_000, 9_200), (17_000, 17_200)],
                    segments: vec![a.clone(), b, a],
                }
            }
            "frame" => {
                // Recurrent stream for the detector ablation: the normal
                // class moves from a square frame to a small disk on the
                // frame and back; the anomalous class is a fixed center
                // patch well inside the frame's bounding box.
                let frame0 = Support::Region {
                    low: vec![0.1, 0.1],
                    high: vec![0.9, 0.9],
                    predicate: Predicate::NotBoxIn {
                        low: vec![0.35, 0.35],
                        high: vec![0.65, 0.65],
                    },
                };
                let disk0 = Support::Region {
                    low: vec![0.38, 0.16],
                    high: vec![0.62, 0.30],
                    predicate: Predicate::DiskIn {
                        cx: 0.5,
                        cy: 0.225,
                        r: 0.06,
                    },
                };
                let center1 = Support::Region {
                    low: vec![0.42, 0.42],
                    high: vec![0.58, 0.58],
                    predicate: Predicate::All,
                };
                let a = Concept {
                    class0: frame0,
                    class1: center1.clone(),
                };
                let b = Concept {
                    class0: disk0,
                    class1: center1,
                };
                StreamSpec {
                    name: "frame".into(),
                    n_features: 2,
                    length: 15_000,
                    drift_times: vec![5_000, 10_000],
                    anomalous_intervals: vec![(2_000, 2_100), (7_000, 7_100), (12_000, 12_100)],
                    segments: vec![a.clone(), b, a],
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset '{other}' (expected sea, circle, sine, vib, or frame)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Lazy, seeded stream generator.
pub struct StreamIter<'a> {
    spec: &'a StreamSpec,
    rng: ChaCha8Rng,
    t: usize,
}

impl Iterator for StreamIter<'_> {
    type Item = Result<LabeledInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.t >= self.spec.length {
            return None;
        }
        self.t += 1;
        let t = self.t;
        let concept = self.spec.concept_at(t);
        let y_true = u8::from(self.spec.is_anomalous_at(t));
        let support = if y_true == 1 { &concept.class1 } else { &concept.class0 };
        Some(support.sample(&mut self.rng).map(|x| LabeledInstance { x, y_true, t }))
    }
}

pub fn generate_stream(spec: &StreamSpec, seed: u64) -> StreamIter<'_> {
    StreamIter {
        spec,
        rng: derive_rng(seed, stream::DATA),
        t: 0,
    }
}

/// Offline material drawn from the initial concept: 1800 normal training
/// instances plus a validation set of 200 normal and 50 anomalous
/// instances, on an RNG stream disjoint from the live stream.
pub struct PretrainSets {
    pub train: Vec<Vec<f64>>,
    pub validation: Vec<(Vec<f64>, u8)>,
}

pub const PRETRAIN_NORMAL: usize = 1800;
pub const VALIDATION_NORMAL: usize = 200;
pub const VALIDATION_ANOMALOUS: usize = 50;

pub fn make_pretraining_sets(spec: &StreamSpec, seed: u64) -> Result<PretrainSets> {
    let mut rng = derive_rng(seed, stream::PRETRAIN_DATA);
    let concept = &spec.segments[0];
    let mut train = Vec::with_capacity(PRETRAIN_NORMAL);
    for _ in 0..PRETRAIN_NORMAL {
        train.push(concept.class0.sample(&mut rng)?);
    }
    let mut validation = Vec::with_capacity(VALIDATION_NORMAL + VALIDATION_ANOMALOUS);
    for _ in 0..VALIDATION_NORMAL {
        validation.push((concept.class0.sample(&mut rng)?, 0));
    }
    for _ in 0..VALIDATION_ANOMALOUS {
        validation.push((concept.class1.sample(&mut rng)?, 1));
    }
    Ok(PretrainSets { train, validation })
}

/// Anomalous reference instances from the initial concept, used to seed
/// the distance detector's reference window and calibrate its threshold.
pub fn make_anomaly_pool(spec: &StreamSpec, seed: u64, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = derive_rng(seed, stream::ANOMALY_POOL);
    let concept = &spec.segments[0];
    (0..n).map(|_| concept.class1.sample(&mut rng)).collect()
}

/// Load a labeled stream from CSV: a header row, `d` feature columns, and
/// a trailing 0/1 label column.
pub fn load_csv_stream(path: &Path, expected_features: Option<usize>) -> Result<Vec<LabeledInstance>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let n_cols = reader.headers()?.len();
    if n_cols < 2 {
        return Err(Error::Data(format!(
            "{}: need at least one feature column and a label column",
            path.display()
        )));
    }
    let d = n_cols - 1;
    if let Some(expected) = expected_features {
        if d != expected {
            return Err(Error::Data(format!(
                "{}: expected {expected} feature columns, found {d}",
                path.display()
            )));
        }
    }
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or((idx + 2) as u64);
        if record.len() != n_cols {
            return Err(Error::Data(format!(
                "{}: line {line}: expected {n_cols} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        let mut x = Vec::with_capacity(d);
        for field in record.iter().take(d) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line}: feature '{field}' is not a number",
                    path.display()
                ))
            })?;
            x.push(v);
        }
        let label_field = record.get(d).unwrap_or("").trim();
        let y_true = match label_field {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Data(format!(
                    "{}: line {line}: label '{other}' is not 0 or 1",
                    path.display()
                )))
            }
        };
        out.push(LabeledInstance {
            x,
            y_true,
            t: idx + 1,
        });
    }
    Ok(out)
}

/// Write instances in the same schema `load_csv_stream` reads.
pub fn write_csv_stream<W: Write>(writer: W, instances: &[LabeledInstance]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = instances.first().map(|i| i.x.len()).unwrap_or(0);
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for inst in instances {
        let mut row: Vec<String> = inst.x.iter().map(|v| v.to_string()).collect();
        row.push(inst.y_true.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-feature min-max scaling fitted on the pre-training set. Values are
/// clamped into [0, 1]; a degenerate feature (min == max) maps to 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Data("cannot fit normalizer on an empty set".into()))?;
        let d = first.len();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for x in train {
            if x.len() != d {
                return Err(Error::Data("inconsistent feature dimensions".into()));
            }
            for (j, &v) in x.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(Normalizer { mins, maxs })
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.mins.len());
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let range = self.maxs[j] - self.mins[j];
                if range <= 0.0 {
                    0.5
                } else {
                    ((v - self.mins[j]) / range).clamp(0.0, 1.0)
                }
            })
            .collect()
    }
}

/// Convenience alias for [`Normalizer::fit`].
pub fn fit_normalizer(train: &[Vec<f64>]) -> Result<Normalizer> {
    Normalizer::fit(train)
}
