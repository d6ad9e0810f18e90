//! Dual concept-drift detection.
//!
//! The statistical detector runs a two-sample Kolmogorov-Smirnov test per
//! latent dimension between a reference window and a moving window of
//! normal-classified instances, with separate warn and alarm p-value
//! levels. The distance detector compares the window of predicted
//! anomalies against a fixed reference of known anomalies by Frobenius
//! distance, with a threshold calibrated offline by bootstrap.

use rand::Rng;

use crate::error::{Error, Result};
use crate::util::mean_std;
use crate::vae::{encode_batch, VaeModel};
use crate::window::SlidingWindow;

/// Which detector raised the alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmSource {
    Ks,
    Distance,
}

impl std::fmt::Display for AlarmSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlarmSource::Ks => write!(f, "ks"),
            AlarmSource::Distance => write!(f, "distance"),
        }
    }
}

/// Result of one two-sample KS test.
#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    /// Supremum gap between the two empirical CDFs.
    pub ks_dis: f64,
    pub p_value: f64,
    /// Latent dimension the test ran on; 0 for standalone calls.
    pub dimension: usize,
}

/// Two-sample KS test for equal-size samples.
///
/// The statistic is the maximum CDF gap over the merged values. With
/// `W` the common sample size, the effective size is `W^2 / (2W) = W/2`
/// and the p-value comes from the asymptotic alternating series
/// `2 * sum_i (-1)^(i-1) exp(-2 i^2 gamma^2)` with
/// `gamma = (sqrt(Neff) + 0.12 + 0.11/sqrt(Neff)) * ks_dis`.
pub fn ks_two_sample(ref_sample: &[f64], mov_sample: &[f64]) -> Result<KsResult> {
    if ref_sample.len() != mov_sample.len() {
        return Err(Error::Contract(format!(
            "ks_two_sample: sample sizes differ ({} vs {})",
            ref_sample.len(),
            mov_sample.len()
        )));
    }
    if ref_sample.len() < 2 {
        return Err(Error::Contract("ks_two_sample: need at least 2 points".into()));
    }
    let mut a = ref_sample.to_vec();
    let mut b = mov_sample.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite sample values"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite sample values"));
    Ok(ks_two_sample_sorted(&a, &b))
}

/// KS test over pre-sorted equal-size samples.
pub fn ks_two_sample_sorted(a: &[f64], b: &[f64]) -> KsResult {
    let ks_dis = ks_statistic_sorted(a, b);
    let n_eff = a.len() as f64 / 2.0;
    let gamma = (n_eff.sqrt() + 0.12 + 0.11 / n_eff.sqrt()) * ks_dis;
    KsResult {
        ks_dis,
        p_value: ks_p_value(gamma),
        dimension: 0,
    }
}

/// Supremum CDF gap of two sorted samples, with ties advanced through
/// both samples before the gap is evaluated.
pub fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] == v {
            i += 1;
        }
        while j < m && b[j] == v {
            j += 1;
        }
        let gap = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        if gap > d {
            d = gap;
        }
    }
    d
}

/// Asymptotic KS survival series, truncated when a term drops below
/// 1e-12 in magnitude or after 100 terms, clamped into [0, 1].
pub fn ks_p_value(gamma: f64) -> f64 {
    if gamma < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for i in 1..=100 {
        let term = (-2.0 * (i as f64) * (i as f64) * gamma * gamma).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Euclidean (Frobenius) distance between two equally shaped windows,
/// rows paired by arrival order.
pub fn window_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "window_distance: row counts differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != rb.len() {
            return Err(Error::Contract(format!(
                "window_distance: row widths differ ({} vs {})",
                ra.len(),
                rb.len()
            )));
        }
        for (x, y) in ra.iter().zip(rb) {
            let d = x - y;
            sum += d * d;
        }
    }
    Ok(sum.sqrt())
}

/// Offline calibration of the distance threshold: draw `n_boot` pairs of
/// disjoint random size-`w` subsets of the anomaly pool (rows kept in
/// draw order) and return `mean + 3 * std` of their pairwise distances.
pub fn calibrate_distance_threshold<R: Rng + ?Sized>(
    an_pool: &[Vec<f64>],
    w: usize,
    n_boot: usize,
    rng: &mut R,
) -> Result<f64> {
    if an_pool.len() < 2 * w {
        return Err(Error::Data(format!(
            "anomaly pool of {} is too small for two disjoint windows of {w}",
            an_pool.len()
        )));
    }
    let mut distances = Vec::with_capacity(n_boot);
    let mut indices: Vec<usize> = (0..an_pool.len()).collect();
    for _ in 0..n_boot {
        // partial Fisher-Yates: the first 2w entries are a uniform draw
        // without replacement, in draw order
        for i in 0..2 * w {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        let a: Vec<Vec<f64>> = indices[..w].iter().map(|&i| an_pool[i].clone()).collect();
        let b: Vec<Vec<f64>> = indices[w..2 * w].iter().map(|&i| an_pool[i].clone()).collect();
        distances.push(window_distance(&a, &b)?);
    }
    let (mean, std) = mean_std(&distances);
    Ok(mean + 3.0 * std)
}

/// All drift-detection state owned by one pipeline.
#[derive(Debug, Clone)]
pub struct DriftState {
    pub flag_warn: bool,
    pub flag_alarm: bool,
    pub alarm_source: Option<AlarmSource>,
    pub warn_raised_at: Option<usize>,
    /// Reference window for the KS detector; filled from arriving
    /// instances and refilled after every alarm.
    pub ref_driftx: SlidingWindow<Vec<f64>>,
    /// Moving window of normal-classified instances for the KS detector.
    pub mov_driftx: SlidingWindow<Vec<f64>>,
    /// Instances accumulated while warned; training material for a
    /// KS-triggered rebuild.
    pub mov_warn: Vec<Vec<f64>>,
    /// Fixed reference window of known anomalies (set at pre-training).
    pub ref_disx: Vec<Vec<f64>>,
    /// Moving window of predicted anomalies.
    pub mov_an: SlidingWindow<Vec<f64>>,
    pub dis_thre: f64,
    pub expiry_time: usize,
    pub p_warn: f64,
    pub p_alarm: f64,
    ref_cache: Option<LatentCache>,
    mov_cache: Option<LatentCache>,
}

/// Sorted per-dimension latent values for one window, tagged with the
/// model and window versions they were computed under.
#[derive(Debug, Clone)]
struct LatentCache {
    model_version: u64,
    window_version: u64,
    sorted_dims: Vec<Vec<f64>>,
}

/// Outcome of one KS scan over all latent dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ScanOutcome {
    pub min_p: f64,
    pub warn_raised: bool,
    pub alarm_raised: bool,
}

impl DriftState {
    pub fn new(
        w_drift: usize,
        w_distance: usize,
        p_warn: f64,
        p_alarm: f64,
        expiry_time: usize,
        ref_disx: Vec<Vec<f64>>,
        dis_thre: f64,
    ) -> Result<Self> {
        if !(p_alarm < p_warn) {
            return Err(Error::Config(format!(
                "P_alarm ({p_alarm}) must be smaller than P_warn ({p_warn})"
            )));
        }
        if ref_disx.len() != w_distance {
            return Err(Error::Contract(format!(
                "reference anomaly window has {} rows, expected {w_distance}",
                ref_disx.len()
            )));
        }
        Ok(DriftState {
            flag_warn: false,
            flag_alarm: false,
            alarm_source: None,
            warn_raised_at: None,
            ref_driftx: SlidingWindow::new(w_drift),
            mov_driftx: SlidingWindow::new(w_drift),
            mov_warn: Vec::new(),
            ref_disx,
            mov_an: SlidingWindow::new(w_distance),
            dis_thre,
            expiry_time,
            p_warn,
            p_alarm,
            ref_cache: None,
            mov_cache: None,
        })
    }

    /// Clear the moving windows, the KS reference window and all flags
    /// after an alarm was handled. The anomaly reference window and its
    /// threshold persist.
    pub fn reset_after_alarm(&mut self) {
        self.flag_warn = false;
        self.flag_alarm = false;
        self.alarm_source = None;
        self.warn_raised_at = None;
        self.ref_driftx.clear();
        self.mov_driftx.clear();
        self.mov_warn.clear();
        self.mov_an.clear();
        self.ref_cache = None;
        self.mov_cache = None;
    }

    fn sorted_latents(
        model: &VaeModel,
        window: &SlidingWindow<Vec<f64>>,
        cache: &mut Option<LatentCache>,
        model_version: u64,
    ) -> Result<()> {
        let fresh = match cache {
            Some(c) => c.model_version != model_version || c.window_version != window.version(),
            None => true,
        };
        if fresh {
            let items: Vec<Vec<f64>> = window.to_vec();
            let latents = encode_batch(model, &items)?;
            let k = model.latent_dim();
            let mut sorted_dims: Vec<Vec<f64>> = vec![Vec::with_capacity(items.len()); k];
            for code in &latents {
                for (dim, &v) in code.iter().enumerate() {
                    sorted_dims[dim].push(v);
                }
            }
            for dim in sorted_dims.iter_mut() {
                dim.sort_by(|x, y| x.partial_cmp(y).expect("finite latent values"));
            }
            *cache = Some(LatentCache {
                model_version,
                window_version: window.version(),
                sorted_dims,
            });
        }
        Ok(())
    }
}

/// KS scan over every latent dimension of the reference and moving
/// windows (both encoded with the current model, deterministic mean).
///
/// A fresh warning requires `p <= P_warn` on some dimension; while the
/// warning flag is already set only the alarm level is checked. Raising
/// the alarm records the KS source.
pub fn ks_drift_scan(
    model: &VaeModel,
    state: &mut DriftState,
    model_version: u64,
    t: usize,
) -> Result<ScanOutcome> {
    if !state.ref_driftx.is_full() || !state.mov_driftx.is_full() {
        return Err(Error::Contract(
            "ks_drift_scan: both drift windows must be full".into(),
        ));
    }
    let DriftState {
        ref_driftx,
        mov_driftx,
        ref_cache,
        mov_cache,
        ..
    } = state;
    DriftState::sorted_latents(model, ref_driftx, ref_cache, model_version)?;
    DriftState::sorted_latents(model, mov_driftx, mov_cache, model_version)?;
    let ref_dims = &state.ref_cache.as_ref().expect("filled above").sorted_dims;
    let mov_dims = &state.mov_cache.as_ref().expect("filled above").sorted_dims;

    let mut min_p = f64::INFINITY;
    for dim in 0..model.latent_dim() {
        let res = ks_two_sample_sorted(&ref_dims[dim], &mov_dims[dim]);
        if res.p_value < min_p {
            min_p = res.p_value;
        }
    }

    let mut warn_raised = false;
    let mut alarm_raised = false;
    if !state.flag_warn && min_p <= state.p_warn {
        state.flag_warn = true;
        state.warn_raised_at = Some(t);
        warn_raised = true;
    }
    if !state.flag_alarm && min_p <= state.p_alarm {
        state.flag_alarm = true;
        state.alarm_source = Some(AlarmSource::Ks);
        alarm_raised = true;
    }
    Ok(ScanOutcome {
        min_p,
        warn_raised,
        alarm_raised,
    })
}

/// Clear a warning that outlived its expiry without escalating, emptying
/// the warned-instance buffer. Returns true when the warning was cleared.
pub fn warning_expiry_update(state: &mut DriftState, t: usize) -> bool {
    if state.flag_warn && !state.flag_alarm {
        if let Some(raised) = state.warn_raised_at {
            if t.saturating_sub(raised) > state.expiry_time {
                state.flag_warn = false;
                state.warn_raised_at = None;
                state.mov_warn.clear();
                return true;
            }
        }
    }
    false
}
