//! Streaming anomalous-sequence detection built around an incrementally
//! trained variational autoencoder.
//!
//! The library provides:
//!
//! - a minimal dense-network substrate with hand-derived backpropagation
//!   and Adam ([`nn`]),
//! - the VAE model, its losses and window-based training ([`vae`]),
//! - bounded FIFO windows with replacement tracking ([`window`]),
//! - the adaptive anomaly threshold and prediction rule ([`detector`]),
//! - dual drift detection: per-latent-dimension two-sample KS tests with
//!   warn/alarm levels, plus a window-distance test over predicted
//!   anomalies ([`drift`]),
//! - the streaming orchestrator that ties it all together ([`pipeline`]),
//! - synthetic stream generators and CSV ingestion ([`datagen`]),
//! - prequential evaluation with fading factors ([`eval`]),
//! - seeded multi-run experiments and parameter sweeps ([`experiment`]).
//!
//! Data-parallel inner loops (window losses, mini-batch gradients, window
//! encodings, bootstrap calibration, multi-seed runs) run on rayon when the
//! `parallel` feature is enabled (default) and fall back to plain iterators
//! otherwise. Results are bit-identical either way: parallel maps collect in
//! input order and every reduction is sequential.

pub mod datagen;
pub mod detector;
pub mod drift;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod util;
pub mod vae;
pub mod window;

pub use error::{Error, Result};
pub use pipeline::{DdMode, Pipeline, PipelineConfig, StepOutcome};
