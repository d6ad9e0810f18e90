//! Variational autoencoder: encoder with mean/log-variance heads,
//! reparameterized sampling, decoder, losses, and window-based training.
//!
//! The encoder emits log-variance rather than standard deviation and
//! clamps it to [-10, 10] before exponentiation. Prediction and threshold
//! computation always use the deterministic code `z = mu`; stochastic
//! sampling happens only during training.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{
    adam_update, backward_stack, forward_stack, Activation, AdamState, DenseLayer, ForwardTrace,
    LayerGrads, LEAKY_SLOPE_DEFAULT, SIGMOID_CLAMP,
};
use crate::parallel::map_collect;
use crate::util::fnv1a64_f64s;

/// Log-variance values are clamped into `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`
/// before any exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    SquaredError,
}

/// Layer sizing for the encoder/decoder MLPs. The decoder mirrors the
/// encoder's hidden chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub leaky_slope: f64,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden,
            latent_dim,
            leaky_slope: LEAKY_SLOPE_DEFAULT,
        }
    }

    /// Default sizing by input dimension: small 2-d streams get one hidden
    /// layer of 8 with a 2-d code, mid-size inputs 16/4, wide inputs 64/8.
    pub fn for_dim(d: usize) -> Self {
        let (h, k) = if d < 8 {
            (8, 2)
        } else if d < 29 {
            (16, 4)
        } else {
            (64, 8)
        };
        Architecture::new(d, vec![h], k)
    }
}

/// One encoded instance: the posterior mean and log-variance, and the
/// code `z` actually used downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub arch: Architecture,
    pub encoder_hidden: Vec<DenseLayer>,
    pub mu_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub decoder: Vec<DenseLayer>,
    pub beta: f64,
    pub loss_kind: LossKind,
    pub lr: f64,
    pub opt: AdamState,
}

/// Gradients for every layer in canonical order: encoder hidden layers,
/// mu head, logvar head, decoder layers.
#[derive(Debug, Clone)]
pub struct VaeGradients {
    pub layers: Vec<LayerGrads>,
}

impl VaeGradients {
    pub fn zeros_like(model: &VaeModel) -> Self {
        VaeGradients {
            layers: model.layers().iter().map(|l| LayerGrads::zeros_like(l)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &VaeGradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(b, scale);
        }
    }
}

struct FullTrace {
    enc: ForwardTrace,
    mu_z: Vec<f64>,
    mu: Vec<f64>,
    lv_z: Vec<f64>,
    lv_raw: Vec<f64>,
    lv: Vec<f64>,
    z: Vec<f64>,
    dec: ForwardTrace,
}

impl FullTrace {
    fn xhat(&self) -> &[f64] {
        self.dec.output()
    }
}

impl VaeModel {
    /// Fresh He-normal model with zeroed optimizer state.
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        beta: f64,
        loss_kind: LossKind,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        assert!(beta >= 0.0, "beta must be nonnegative");
        let leaky = Activation::LeakyRelu { slope: arch.leaky_slope };
        let mut encoder_hidden = Vec::new();
        let mut prev = arch.input_dim;
        for &h in &arch.hidden {
            encoder_hidden.push(DenseLayer::he_normal(prev, h, leaky, rng));
            prev = h;
        }
        let mu_head = DenseLayer::he_normal(prev, arch.latent_dim, Activation::Linear, rng);
        let logvar_head = DenseLayer::he_normal(prev, arch.latent_dim, Activation::Linear, rng);
        let mut decoder = Vec::new();
        let mut dprev = arch.latent_dim;
        for &h in arch.hidden.iter().rev() {
            decoder.push(DenseLayer::he_normal(dprev, h, leaky, rng));
            dprev = h;
        }
        decoder.push(DenseLayer::he_normal(dprev, arch.input_dim, Activation::Sigmoid, rng));

        let opt = {
            let mut refs: Vec<&DenseLayer> = Vec::new();
            refs.extend(encoder_hidden.iter());
            refs.push(&mu_head);
            refs.push(&logvar_head);
            refs.extend(decoder.iter());
            AdamState::new(&refs)
        };

        VaeModel {
            arch,
            encoder_hidden,
            mu_head,
            logvar_head,
            decoder,
            beta,
            loss_kind,
            lr,
            opt,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// All layers in canonical order.
    pub fn layers(&self) -> Vec<&DenseLayer> {
        let mut refs: Vec<&DenseLayer> = Vec::new();
        refs.extend(self.encoder_hidden.iter());
        refs.push(&self.mu_head);
        refs.push(&self.logvar_head);
        refs.extend(self.decoder.iter());
        refs
    }

    fn layer_mut(&mut self, idx: usize) -> &mut DenseLayer {
        let ne = self.encoder_hidden.len();
        if idx < ne {
            &mut self.encoder_hidden[idx]
        } else if idx == ne {
            &mut self.mu_head
        } else if idx == ne + 1 {
            &mut self.logvar_head
        } else {
            &mut self.decoder[idx - ne - 2]
        }
    }

    /// FNV hash of all parameters; changes with probability 1 on re-init.
    pub fn param_fingerprint(&self) -> u64 {
        fnv1a64_f64s(
            self.layers()
                .iter()
                .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied()),
        )
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Contract(format!(
                "input dimension {} does not match model dimension {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn full_forward(&self, x: &[f64], eps: Option<&[f64]>) -> Result<FullTrace> {
        self.check_input(x)?;
        let enc = forward_stack(&self.encoder_hidden, x)?;
        let h: &[f64] = if self.encoder_hidden.is_empty() { x } else { enc.output() };
        let mut mu_z = Vec::new();
        let mut mu = Vec::new();
        self.mu_head.forward(h, &mut mu_z, &mut mu);
        let mut lv_z = Vec::new();
        let mut lv_raw = Vec::new();
        self.logvar_head.forward(h, &mut lv_z, &mut lv_raw);
        let lv: Vec<f64> = lv_raw.iter().map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)).collect();
        let z: Vec<f64> = match eps {
            Some(e) => {
                debug_assert_eq!(e.len(), self.arch.latent_dim);
                mu.iter()
                    .zip(&lv)
                    .zip(e)
                    .map(|((m, l), e)| m + e * (l / 2.0).exp())
                    .collect()
            }
            None => mu.clone(),
        };
        let dec = forward_stack(&self.decoder, &z)?;
        Ok(FullTrace {
            enc,
            mu_z,
            mu,
            lv_z,
            lv_raw,
            lv,
            z,
            dec,
        })
    }

    /// Deterministic encoding: `z` is set to the posterior mean.
    pub fn encode(&self, x: &[f64]) -> Result<LatentCode> {
        let trace = self.full_forward(x, None)?;
        Ok(LatentCode {
            z: trace.mu.clone(),
            mu: trace.mu,
            logvar: trace.lv,
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::Contract(format!(
                "code dimension {} does not match latent dimension {}",
                z.len(),
                self.arch.latent_dim
            )));
        }
        let trace = forward_stack(&self.decoder, z)?;
        Ok(trace.output().to_vec())
    }

    /// Deterministic total loss (`z = mu`); used for prediction and
    /// thresholding.
    pub fn total_loss(&self, x: &[f64]) -> Result<f64> {
        self.loss_with_eps(x, None)
    }

    /// Total loss with an explicit noise vector (training mode) or the
    /// deterministic code (`eps = None`).
    pub fn loss_with_eps(&self, x: &[f64], eps: Option<&[f64]>) -> Result<f64> {
        let trace = self.full_forward(x, eps)?;
        let recon = reconstruction_loss(x, trace.xhat(), self.loss_kind)?;
        Ok(recon + self.beta * kl_loss(&trace.mu, &trace.lv))
    }

    /// Loss plus analytic gradients for every parameter.
    pub fn loss_and_grads(&self, x: &[f64], eps: Option<&[f64]>) -> Result<(f64, VaeGradients)> {
        let trace = self.full_forward(x, eps)?;
        let xhat = trace.xhat();
        let recon = reconstruction_loss(x, xhat, self.loss_kind)?;
        let loss = recon + self.beta * kl_loss(&trace.mu, &trace.lv);

        let mut grads = VaeGradients::zeros_like(self);
        let ne = self.encoder_hidden.len();
        let k = self.arch.latent_dim;

        // dL/d(xhat)
        let d_xhat: Vec<f64> = match self.loss_kind {
            LossKind::SquaredError => xhat.iter().zip(x).map(|(o, t)| 2.0 * (o - t)).collect(),
            LossKind::BinaryCrossEntropy => xhat
                .iter()
                .zip(x)
                .map(|(o, t)| -t / o + (1.0 - t) / (1.0 - o))
                .collect(),
        };

        // decoder
        let (enc_grads, rest) = grads.layers.split_at_mut(ne);
        let (head_grads, dec_grads) = rest.split_at_mut(2);
        let d_z = backward_stack(&self.decoder, &trace.z, &trace.dec, &d_xhat, dec_grads);

        // reparameterization and KL
        let mut d_mu = vec![0.0; k];
        let mut d_lv = vec![0.0; k];
        for i in 0..k {
            let gate = if trace.lv_raw[i] > -LOGVAR_CLAMP && trace.lv_raw[i] < LOGVAR_CLAMP {
                1.0
            } else {
                0.0
            };
            d_mu[i] = d_z[i] + self.beta * trace.mu[i];
            let eps_term = match eps {
                Some(e) => d_z[i] * e[i] * 0.5 * (trace.lv[i] / 2.0).exp(),
                None => 0.0,
            };
            d_lv[i] = (eps_term + self.beta * 0.5 * (trace.lv[i].exp() - 1.0)) * gate;
        }

        // heads share the trunk output
        let h: &[f64] = if ne == 0 { x } else { trace.enc.output() };
        let d_h1 = self.mu_head.backward(h, &trace.mu_z, &d_mu, &mut head_grads[0]);
        let d_h2 = self.logvar_head.backward(h, &trace.lv_z, &d_lv, &mut head_grads[1]);
        let d_h: Vec<f64> = d_h1.iter().zip(&d_h2).map(|(a, b)| a + b).collect();

        if ne > 0 {
            backward_stack(&self.encoder_hidden, x, &trace.enc, &d_h, enc_grads);
        }

        Ok((loss, grads))
    }

    /// One Adam step over all parameters using the model's learning rate.
    pub fn apply_gradients(&mut self, grads: &VaeGradients) -> Result<()> {
        let lr = self.lr;
        let beta1 = self.opt.beta1;
        let beta2 = self.opt.beta2;
        let epsilon = self.opt.epsilon;
        self.opt.step_count += 1;
        let t = self.opt.step_count;

        let layers = self
            .encoder_hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.mu_head))
            .chain(std::iter::once(&mut self.logvar_head))
            .chain(self.decoder.iter_mut());
        for ((layer, g), mom) in layers.zip(&grads.layers).zip(self.opt.moments.iter_mut()) {
            adam_update(
                &mut layer.weights,
                &g.d_weights,
                &mut mom.m_w,
                &mut mom.v_w,
                t,
                lr,
                beta1,
                beta2,
                epsilon,
            )?;
            adam_update(
                &mut layer.biases,
                &g.d_biases,
                &mut mom.m_b,
                &mut mom.v_b,
                t,
                lr,
                beta1,
                beta2,
                epsilon,
            )?;
        }
        Ok(())
    }
}

/// `z = mu + eps * exp(logvar/2)` with `eps ~ Normal(0, I)`. The
/// log-variance is clamped before exponentiation.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Vec<f64> {
    debug_assert_eq!(mu.len(), logvar.len());
    mu.iter()
        .zip(logvar)
        .map(|(m, l)| {
            let e: f64 = StandardNormal.sample(rng);
            m + e * (l.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP) / 2.0).exp()
        })
        .collect()
}

/// KL divergence between `Normal(mu, exp(logvar))` and the unit Gaussian:
/// `0.5 * sum(mu^2 + sigma^2 - log(sigma^2) - 1)`.
pub fn kl_loss(mu: &[f64], logvar: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), logvar.len());
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, l)| m * m + l.exp() - l - 1.0)
        .sum::<f64>()
}

/// Reconstruction loss summed (not averaged) over features.
pub fn reconstruction_loss(x: &[f64], xhat: &[f64], kind: LossKind) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::Contract(format!(
            "reconstruction: dimension mismatch {} vs {}",
            x.len(),
            xhat.len()
        )));
    }
    match kind {
        LossKind::SquaredError => Ok(x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum()),
        LossKind::BinaryCrossEntropy => {
            if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Contract(format!(
                    "cross-entropy target {bad} outside [0, 1]"
                )));
            }
            Ok(x.iter()
                .zip(xhat)
                .map(|(t, o)| {
                    let o = o.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
                    -(t * o.ln() + (1.0 - t) * (1.0 - o).ln())
                })
                .sum())
        }
    }
}

/// Mini-batch Adam training over a window of instances.
///
/// Each epoch shuffles the window, partitions it into batches of at most
/// `batch_size`, and applies one optimizer step per batch on the mean of
/// the per-instance losses. Noise vectors are drawn sequentially from
/// `rng` before the (possibly parallel) gradient map, so results do not
/// depend on thread count.
pub fn train_on_window<R: Rng + ?Sized>(
    model: &mut VaeModel,
    window: &[Vec<f64>],
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<()> {
    if window.is_empty() {
        return Err(Error::Contract("train_on_window: empty window".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("train_on_window: batch_size must be >= 1".into()));
    }
    let k = model.latent_dim();
    let mut indices: Vec<usize> = (0..window.len()).collect();
    for epoch in 0..epochs {
        shuffle(&mut indices, rng);
        for batch in indices.chunks(batch_size) {
            let jobs: Vec<(usize, Vec<f64>)> = batch
                .iter()
                .map(|&i| {
                    let eps: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
                    (i, eps)
                })
                .collect();
            let results: Vec<Result<(f64, VaeGradients)>> =
                map_collect(&jobs, |(i, eps)| model.loss_and_grads(&window[*i], Some(eps)));

            let mut mean_grads = VaeGradients::zeros_like(model);
            let scale = 1.0 / batch.len() as f64;
            for (job, res) in jobs.iter().zip(results) {
                let (loss, grads) = res?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite training loss {loss} at window index {} (epoch {epoch})",
                        job.0
                    )));
                }
                mean_grads.add_scaled(&grads, scale);
            }
            model.apply_gradients(&mean_grads)?;
        }
    }
    Ok(())
}

// Fisher-Yates with an explicit gen_range loop so the draw sequence is
// pinned by this crate rather than by rand's shuffle internals.
fn shuffle<R: Rng + ?Sized>(indices: &mut [usize], rng: &mut R) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Deterministic encodings (posterior means) for a batch of instances.
pub fn encode_batch(model: &VaeModel, items: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    map_collect(items, |x| model.encode(x).map(|c| c.mu))
        .into_iter()
        .collect()
}

/// Maximum relative error between analytic and central finite-difference
/// gradients over every parameter, with the relative error defined as
/// `|ga - gf| / max(1, |ga|, |gf|)`.
pub fn gradient_check(
    model: &mut VaeModel,
    x: &[f64],
    eps: Option<&[f64]>,
    fd_eps: f64,
) -> Result<f64> {
    if !(fd_eps > 0.0 && fd_eps <= 1e-2) {
        return Err(Error::Contract(format!("fd_eps {fd_eps} outside (0, 1e-2]")));
    }
    let (_, analytic) = model.loss_and_grads(x, eps)?;
    let n_layers = analytic.layers.len();
    let mut max_err: f64 = 0.0;
    for li in 0..n_layers {
        let n_w = analytic.layers[li].d_weights.len();
        let n_b = analytic.layers[li].d_biases.len();
        for pi in 0..n_w + n_b {
            let orig = {
                let layer = model.layer_mut(li);
                let p = if pi < n_w { &mut layer.weights[pi] } else { &mut layer.biases[pi - n_w] };
                let orig = *p;
                *p = orig + fd_eps;
                orig
            };
            let loss_plus = model.loss_with_eps(x, eps)?;
            {
                let layer = model.layer_mut(li);
                let p = if pi < n_w { &mut layer.weights[pi] } else { &mut layer.biases[pi - n_w] };
                *p = orig - fd_eps;
            }
            let loss_minus = model.loss_with_eps(x, eps)?;
            {
                let layer = model.layer_mut(li);
                let p = if pi < n_w { &mut layer.weights[pi] } else { &mut layer.biases[pi - n_w] };
                *p = orig;
            }
            let fd = (loss_plus - loss_minus) / (2.0 * fd_eps);
            let ga = if pi < n_w {
                analytic.layers[li].d_weights[pi]
            } else {
                analytic.layers[li].d_biases[pi - n_w]
            };
            let err = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Versioned model dump: layer shapes, parameters, optimizer state, loss
/// configuration, and the feature normalization fitted at pre-training.
/// JSON round-trips every f64 exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: VaeModel,
    pub normalizer: Normalizer,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(model: VaeModel, normalizer: Normalizer) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model,
            normalizer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(s)?;
        if cp.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                cp.format_version
            )));
        }
        Ok(cp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;
    use proptest::prelude::*;

    fn tiny_model(seed: u64, d: usize, hidden: Vec<usize>, k: usize, beta: f64, kind: LossKind) -> VaeModel {
        let mut rng = derive_rng(seed, 0);
        VaeModel::new(Architecture::new(d, hidden, k), beta, kind, 0.001, &mut rng)
    }

    #[test]
    fn kl_loss_reference_values() {
        assert_eq!(kl_loss(&[0.0], &[0.0]), 0.0);
        assert!((kl_loss(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        // mu = [0.5, 0.5], sigma^2 = [0.25, 0.25]
        let lv = 0.25f64.ln();
        let got = kl_loss(&[0.5, 0.5], &[lv, lv]);
        let expected = 0.5 * 2.0 * (0.25 + 0.25 - lv - 1.0);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.8862943611198906).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_loss_reference_values() {
        assert_eq!(
            reconstruction_loss(&[0.3, 0.7], &[0.3, 0.7], LossKind::SquaredError).unwrap(),
            0.0
        );
        let bce = reconstruction_loss(&[1.0], &[0.5], LossKind::BinaryCrossEntropy).unwrap();
        assert!((bce - 2.0f64.ln()).abs() < 1e-12);
        let bce2 =
            reconstruction_loss(&[0.2, 0.8], &[0.5, 0.5], LossKind::BinaryCrossEntropy).unwrap();
        assert!((bce2 - 2.0 * 2.0f64.ln()).abs() < 1e-12, "got {bce2}");
    }

    #[test]
    fn bce_rejects_targets_outside_unit_interval() {
        let err = reconstruction_loss(&[1.2], &[0.5], LossKind::BinaryCrossEntropy).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn encode_zero_weight_model_gives_zero_code() {
        let mut model = tiny_model(1, 2, vec![4], 2, 1.0, LossKind::SquaredError);
        for layer in model
            .encoder_hidden
            .iter_mut()
            .chain([&mut model.mu_head, &mut model.logvar_head])
        {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        let code = model.encode(&[0.4, 0.6]).unwrap();
        assert_eq!(code.mu, vec![0.0, 0.0]);
        assert_eq!(code.logvar, vec![0.0, 0.0]);
        assert_eq!(code.z, vec![0.0, 0.0]);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = tiny_model(2, 2, vec![4], 2, 1.0, LossKind::BinaryCrossEntropy);
        let a = model.encode(&[0.2, 0.9]).unwrap();
        let b = model.encode(&[0.2, 0.9]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reparameterize_is_guarded_and_reproducible() {
        let mut rng = derive_rng(3, 0);
        let z = reparameterize(&[0.0], &[f64::NEG_INFINITY.max(-1e9)], &mut rng);
        assert!(z[0].is_finite());

        let mut r1 = derive_rng(4, 0);
        let mut r2 = derive_rng(4, 0);
        assert_eq!(
            reparameterize(&[1.0, 2.0], &[0.0, -3.0], &mut r1),
            reparameterize(&[1.0, 2.0], &[0.0, -3.0], &mut r2)
        );

        // logvar -10 -> sigma ~ 6.7e-3, so z stays within 0.03 of mu.
        let mut r3 = derive_rng(5, 0);
        for _ in 0..100 {
            let z = reparameterize(&[1.0], &[-10.0], &mut r3);
            assert!((z[0] - 1.0).abs() < 0.03, "z={}", z[0]);
        }
    }

    #[test]
    fn beta_zero_reduces_total_to_reconstruction() {
        let model = tiny_model(6, 2, vec![4], 2, 0.0, LossKind::SquaredError);
        let x = [0.3, 0.8];
        let total = model.total_loss(&x).unwrap();
        let xhat = {
            let code = model.encode(&x).unwrap();
            model.decode(&code.z).unwrap()
        };
        let recon = reconstruction_loss(&x, &xhat, LossKind::SquaredError).unwrap();
        assert_eq!(total, recon);
    }

    #[test]
    fn total_loss_dominates_kl_term() {
        let model = tiny_model(7, 2, vec![4], 2, 1.0, LossKind::SquaredError);
        for x in [[0.1, 0.9], [0.5, 0.5], [0.0, 1.0]] {
            let total = model.total_loss(&x).unwrap();
            let code = model.encode(&x).unwrap();
            let kl = kl_loss(&code.mu, &code.logvar);
            assert!(total >= model.beta * kl - 1e-12);
            assert!(total >= 0.0);
        }
    }

    #[test]
    fn train_zero_epochs_is_identity() {
        let mut model = tiny_model(8, 2, vec![4], 2, 1.0, LossKind::SquaredError);
        let before = model.param_fingerprint();
        let window = vec![vec![0.5, 0.5]; 10];
        let mut rng = derive_rng(8, 1);
        train_on_window(&mut model, &window, 0, 4, &mut rng).unwrap();
        assert_eq!(model.param_fingerprint(), before);
    }

    #[test]
    fn training_reduces_loss_on_simple_data() {
        let mut data_rng = derive_rng(9, 0);
        let dist = rand_distr::Normal::new(0.5, 0.05).unwrap();
        let window: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                (0..2)
                    .map(|_| f64::clamp(dist.sample(&mut data_rng), 0.0, 1.0))
                    .collect()
            })
            .collect();
        let mut model = tiny_model(9, 2, vec![8], 2, 1.0, LossKind::SquaredError);
        let mean_loss = |m: &VaeModel| {
            window.iter().map(|x| m.total_loss(x).unwrap()).sum::<f64>() / window.len() as f64
        };
        let initial = mean_loss(&model);
        let mut rng = derive_rng(9, 1);
        train_on_window(&mut model, &window, 50, 64, &mut rng).unwrap();
        let trained = mean_loss(&model);
        assert!(
            trained <= 0.5 * initial,
            "initial {initial}, trained {trained}"
        );
    }

    #[test]
    fn training_is_bit_reproducible() {
        let window: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64) / 50.0, 0.5]).collect();
        let run = || {
            let mut model = tiny_model(10, 2, vec![4], 2, 1.0, LossKind::BinaryCrossEntropy);
            let mut rng = derive_rng(10, 1);
            train_on_window(&mut model, &window, 5, 16, &mut rng).unwrap();
            model.param_fingerprint()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_check_tiny_vae() {
        let mut model = tiny_model(11, 2, vec![4], 1, 1.0, LossKind::BinaryCrossEntropy);
        let err = gradient_check(&mut model, &[0.3, 0.7], None, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_check_with_fixed_noise() {
        let mut model = tiny_model(12, 2, vec![4], 2, 1.0, LossKind::SquaredError);
        let eps = vec![0.37, -1.2];
        let err = gradient_check(&mut model, &[0.3, 0.7], Some(&eps), 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_check_zero_model_is_finite() {
        let mut model = tiny_model(13, 2, vec![4], 2, 1.0, LossKind::BinaryCrossEntropy);
        for li in 0..model.layers().len() {
            let layer = model.layer_mut(li);
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        let err = gradient_check(&mut model, &[0.0, 0.0], None, 1e-5).unwrap();
        assert!(err.is_finite());
    }

    #[test]
    fn trained_encoder_separates_near_from_far() {
        // Points near the band x1 + x2 >= 1 (scaled Sea normal region):
        // encodings of two nearby normals end up closer than a normal vs a
        // far-out anomaly.
        let mut data_rng = derive_rng(14, 0);
        let mut window = Vec::new();
        while window.len() < 300 {
            let a: f64 = data_rng.random_range(0.0..1.0);
            let b: f64 = data_rng.random_range(0.0..1.0);
            if a + b >= 1.0 {
                window.push(vec![a, b]);
            }
        }
        let mut model = tiny_model(14, 2, vec![8], 2, 1.0, LossKind::BinaryCrossEntropy);
        let mut rng = derive_rng(14, 1);
        train_on_window(&mut model, &window, 30, 64, &mut rng).unwrap();

        let e = |x: &[f64]| model.encode(x).unwrap().mu;
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let n1 = e(&[0.6, 0.6]);
        let n2 = e(&[0.62, 0.58]);
        let far = e(&[0.05, 0.05]);
        assert!(dist(&n1, &n2) < dist(&n1, &far));
    }

    #[test]
    fn checkpoint_roundtrips_exactly() {
        let model = tiny_model(15, 3, vec![5], 2, 0.7, LossKind::SquaredError);
        let norm = Normalizer::fit(&[vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]]).unwrap();
        let cp = Checkpoint::new(model, norm);
        let json = cp.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(cp, back);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mu in proptest::collection::vec(-5.0f64..5.0, 1..6),
                             lv in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            prop_assume!(mu.len() == lv.len());
            let v = kl_loss(&mu, &lv);
            prop_assert!(v >= -1e-12);
        }

        #[test]
        fn kl_zero_iff_standard_normal(scale in 0.0f64..0.1) {
            let mu = vec![scale, -scale];
            let lv = vec![scale, scale];
            let v = kl_loss(&mu, &lv);
            if scale == 0.0 {
                prop_assert!(v.abs() < 1e-12);
            } else {
                prop_assert!(v > 0.0);
            }
        }
    }
}
