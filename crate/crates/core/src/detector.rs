//! Adaptive anomaly threshold and the prediction rule.
//!
//! The threshold is `mean + 2 * std` (population deviation) of the
//! deterministic losses of everything currently in the training window,
//! recomputed after every training event. An instance is predicted
//! anomalous when its loss strictly exceeds the threshold.

use crate::error::{Error, Result};
use crate::parallel::map_collect;
use crate::util::mean_std;
use crate::vae::VaeModel;

#[derive(Debug, Clone)]
pub struct ThresholdState {
    pub theta: f64,
    pub computed_at: usize,
    pub window_losses: Vec<f64>,
}

/// Threshold from the losses of `window` under the current model.
pub fn compute_threshold(model: &VaeModel, window: &[Vec<f64>], t: usize) -> Result<ThresholdState> {
    if window.is_empty() {
        return Err(Error::Contract(
            "compute_threshold: empty window; defer thresholding".into(),
        ));
    }
    let losses: Vec<f64> = map_collect(window, |x| model.total_loss(x))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(ThresholdState {
        theta: threshold_from_losses(&losses),
        computed_at: t,
        window_losses: losses,
    })
}

pub fn threshold_from_losses(losses: &[f64]) -> f64 {
    let (mean, std) = mean_std(losses);
    mean + 2.0 * std
}

/// Classify one instance: 1 (anomalous) iff its loss strictly exceeds
/// `theta`. Returns the label and the loss.
pub fn predict(model: &VaeModel, theta: f64, x: &[f64]) -> Result<(u8, f64)> {
    let loss = model.total_loss(x)?;
    Ok((u8::from(loss > theta), loss))
}
