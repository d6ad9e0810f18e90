//! Minimal dense-network substrate: layers, activations, He-normal
//! initialization, Adam, and the forward/backward passes used by the
//! autoencoder.
//!
//! Everything runs at double precision. Backpropagation is hand-derived
//! per layer; there is no generic autodiff. All functions are pure with
//! respect to their inputs apart from the explicit optimizer state.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default negative slope of the leaky ReLU hidden activation.
pub const LEAKY_SLOPE_DEFAULT: f64 = 0.01;

/// Sigmoid outputs are clamped into `[SIGMOID_CLAMP, 1 - SIGMOID_CLAMP]`
/// so the cross-entropy loss stays finite.
pub const SIGMOID_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Sigmoid => sigmoid_clamped(z),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn grad(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

pub fn sigmoid_clamped(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
}

/// A fully connected layer. Weights are row-major `[fan_out x fan_in]`;
/// shapes are fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// He-normal initialization: weights drawn i.i.d. from
    /// `Normal(0, 2/fan_in)`, biases zero.
    pub fn he_normal<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(fan_in >= 1 && fan_out >= 1, "layer dims must be >= 1");
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std is finite and positive");
        let weights = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        DenseLayer {
            fan_in,
            fan_out,
            weights,
            biases: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        assert!(fan_in >= 1 && fan_out >= 1, "layer dims must be >= 1");
        DenseLayer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Compute pre-activations and activations for one input.
    pub fn forward(&self, input: &[f64], z_out: &mut Vec<f64>, a_out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.fan_in);
        z_out.clear();
        a_out.clear();
        for o in 0..self.fan_out {
            let row = o * self.fan_in;
            let mut sum = self.biases[o];
            for (i, &x) in input.iter().enumerate() {
                sum += self.weights[row + i] * x;
            }
            z_out.push(sum);
            a_out.push(self.activation.apply(sum));
        }
    }

    /// Backward pass for one input. `d_out` is dL/d(activation); returns
    /// dL/d(input) and writes parameter gradients into `grads`.
    pub fn backward(&self, input: &[f64], z: &[f64], d_out: &[f64], grads: &mut LayerGrads) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.fan_in);
        debug_assert_eq!(z.len(), self.fan_out);
        debug_assert_eq!(d_out.len(), self.fan_out);
        let mut d_in = vec![0.0; self.fan_in];
        for o in 0..self.fan_out {
            let dz = d_out[o] * self.activation.grad(z[o]);
            grads.d_biases[o] += dz;
            let row = o * self.fan_in;
            for i in 0..self.fan_in {
                grads.d_weights[row + i] += dz * input[i];
                d_in[i] += self.weights[row + i] * dz;
            }
        }
        d_in
    }
}

/// Parameter gradients mirroring one layer's shapes.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Vec<f64>,
    pub d_biases: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            d_weights: vec![0.0; layer.weights.len()],
            d_biases: vec![0.0; layer.biases.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &LayerGrads, scale: f64) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += scale * b;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            *v *= s;
        }
    }
}

/// All per-layer activations recorded by [`forward_stack`]; needed for
/// backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activations per layer.
    pub zs: Vec<Vec<f64>>,
    /// Post-activations per layer; `acts.last()` is the stack output.
    pub acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|a| a.as_slice()).unwrap_or(&[])
    }
}

/// Run an input through a stack of layers, recording every intermediate.
pub fn forward_stack(layers: &[DenseLayer], x: &[f64]) -> Result<ForwardTrace> {
    if let Some(first) = layers.first() {
        if x.len() != first.fan_in {
            return Err(Error::Contract(format!(
                "forward: input dimension {} does not match layer fan_in {}",
                x.len(),
                first.fan_in
            )));
        }
    }
    let mut zs = Vec::with_capacity(layers.len());
    let mut acts = Vec::with_capacity(layers.len());
    let mut current: &[f64] = x;
    for layer in layers {
        let mut z = Vec::new();
        let mut a = Vec::new();
        layer.forward(current, &mut z, &mut a);
        zs.push(z);
        acts.push(a);
        current = acts.last().expect("just pushed").as_slice();
    }
    Ok(ForwardTrace { zs, acts })
}

/// Backpropagate `d_out = dL/d(stack output)` through a stack, accumulating
/// into `grads` (one entry per layer) and returning dL/d(stack input).
pub fn backward_stack(
    layers: &[DenseLayer],
    x: &[f64],
    trace: &ForwardTrace,
    d_out: &[f64],
    grads: &mut [LayerGrads],
) -> Vec<f64> {
    debug_assert_eq!(layers.len(), grads.len());
    let mut d = d_out.to_vec();
    for l in (0..layers.len()).rev() {
        let input = if l == 0 { x } else { trace.acts[l - 1].as_slice() };
        d = layers[l].backward(input, &trace.zs[l], &d, &mut grads[l]);
    }
    d
}

/// Adam moment estimates for one (weights, biases) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMoments {
    pub m_w: Vec<f64>,
    pub v_w: Vec<f64>,
    pub m_b: Vec<f64>,
    pub v_b: Vec<f64>,
}

impl TensorMoments {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        TensorMoments {
            m_w: vec![0.0; layer.weights.len()],
            v_w: vec![0.0; layer.weights.len()],
            m_b: vec![0.0; layer.biases.len()],
            v_b: vec![0.0; layer.biases.len()],
        }
    }
}

/// Adam optimizer state across a fixed list of layers. Shapes mirror the
/// parameters exactly; the step counter is shared by all layers because
/// they update together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub moments: Vec<TensorMoments>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(layers: &[&DenseLayer]) -> Self {
        AdamState {
            moments: layers.iter().map(|l| TensorMoments::zeros_like(l)).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction over a flat parameter tensor.
///
/// `t` is the 1-based step count. Returns an error naming the offending
/// index when a gradient is not finite.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), m.len());
    debug_assert_eq!(params.len(), v.len());
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient {g} at parameter index {i}"
            )));
        }
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;

    #[test]
    fn he_normal_std_matches_closed_form() {
        // fan_in = 100 -> per-weight std sqrt(2/100) ~ 0.1414
        let mut rng = derive_rng(1, 0);
        let layer = DenseLayer::he_normal(100, 100, Activation::Linear, &mut rng);
        let (_, std) = crate::util::mean_std(&layer.weights);
        let expected = (2.0f64 / 100.0).sqrt();
        assert!((std - expected).abs() < 0.01 * expected * 5.0, "std={std}");
        assert!(layer.biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn he_normal_sample_mean_near_zero() {
        // fan_in = 2, 10000 draws: |mean| < 4 * std/sqrt(10000)
        let mut rng = derive_rng(2, 0);
        let layer = DenseLayer::he_normal(2, 5000, Activation::Linear, &mut rng);
        let (mean, _) = crate::util::mean_std(&layer.weights);
        let std = (2.0f64 / 2.0).sqrt();
        assert!(mean.abs() < 4.0 * std / 100.0, "mean={mean}");
    }

    #[test]
    fn he_normal_is_reproducible() {
        let mut a = derive_rng(42, 0);
        let mut b = derive_rng(42, 0);
        let la = DenseLayer::he_normal(3, 4, Activation::Sigmoid, &mut a);
        let lb = DenseLayer::he_normal(3, 4, Activation::Sigmoid, &mut b);
        assert_eq!(la, lb);
    }

    #[test]
    fn forward_identity_linear_layer() {
        let mut layer = DenseLayer::zeros(2, 2, Activation::Linear);
        layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        let trace = forward_stack(std::slice::from_ref(&layer), &[1.0, 2.0]).unwrap();
        assert_eq!(trace.output(), &[1.0, 2.0]);
    }

    #[test]
    fn activation_values() {
        let leaky = Activation::LeakyRelu { slope: 0.01 };
        assert_eq!(leaky.apply(-1.0), -0.01);
        assert_eq!(leaky.apply(2.0), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let layer = DenseLayer::zeros(3, 2, Activation::Linear);
        let err = forward_stack(std::slice::from_ref(&layer), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn forward_is_finite_for_finite_inputs() {
        let mut rng = derive_rng(3, 0);
        let layers = vec![
            DenseLayer::he_normal(2, 8, Activation::LeakyRelu { slope: 0.01 }, &mut rng),
            DenseLayer::he_normal(8, 2, Activation::Sigmoid, &mut rng),
        ];
        for x in [[1e6, -1e6], [0.0, 0.0], [-300.0, 300.0]] {
            let trace = forward_stack(&layers, &x).unwrap();
            assert!(trace.output().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn adam_zero_grads_leave_params_unchanged() {
        let mut params = vec![0.3, -0.7];
        let grads = vec![0.0, 0.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        adam_update(&mut params, &grads, &mut m, &mut v, 1, 0.001, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(params, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_single_step_hand_value() {
        // g=1, lr=0.001, fresh state: m_hat = v_hat = 1, delta ~ -0.001.
        let mut params = vec![0.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut params, &[1.0], &mut m, &mut v, 1, 0.001, 0.9, 0.999, 1e-8).unwrap();
        assert!((params[0] + 0.001).abs() < 1e-9, "delta={}", params[0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = vec![0.5, -0.5];
            let mut m = vec![0.0; 2];
            let mut v = vec![0.0; 2];
            for t in 1..=10 {
                adam_update(
                    &mut params,
                    &[0.2, -0.1],
                    &mut m,
                    &mut v,
                    t,
                    0.01,
                    0.9,
                    0.999,
                    1e-8,
                )
                .unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![0.0, 0.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        let err = adam_update(
            &mut params,
            &[0.0, f64::NAN],
            &mut m,
            &mut v,
            1,
            0.001,
            0.9,
            0.999,
            1e-8,
        )
        .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("index 1"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn linear_layer_gradients_match_finite_differences_tightly() {
        // Squared-error loss of a single linear layer is quadratic, so
        // central differences are exact up to rounding.
        let mut rng = derive_rng(5, 0);
        let mut layer = DenseLayer::he_normal(3, 2, Activation::Linear, &mut rng);
        let x = [0.3, -0.2, 0.9];
        let target = [0.1, -0.4];

        let loss_of = |layer: &DenseLayer| {
            let trace = forward_stack(std::slice::from_ref(layer), &x).unwrap();
            trace
                .output()
                .iter()
                .zip(&target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };

        let trace = forward_stack(std::slice::from_ref(&layer), &x).unwrap();
        let d_out: Vec<f64> = trace
            .output()
            .iter()
            .zip(&target)
            .map(|(o, t)| 2.0 * (o - t))
            .collect();
        let mut grads = vec![LayerGrads::zeros_like(&layer)];
        backward_stack(std::slice::from_ref(&layer), &x, &trace, &d_out, &mut grads);

        let h = 1e-5;
        let mut max_err: f64 = 0.0;
        for i in 0..layer.weights.len() {
            let orig = layer.weights[i];
            layer.weights[i] = orig + h;
            let lp = loss_of(&layer);
            layer.weights[i] = orig - h;
            let lm = loss_of(&layer);
            layer.weights[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let ga = grads[0].d_weights[i];
            let err = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1.0);
            max_err = max_err.max(err);
        }
        assert!(max_err < 1e-8, "max relative error {max_err}");
    }
}
