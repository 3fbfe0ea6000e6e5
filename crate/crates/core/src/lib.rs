//! Time-aware cross-domain sequential recommendation.
//!
//! Users interact with two item domains (A and B) over continuous time. The
//! model keeps long- and short-term behavioural states that drift between
//! events under a learned ODE and jump at each event through GRU updates,
//! adds a semantic preference extracted from a time-annotated text prompt,
//! and blends in-domain and cross-domain signals with per-user transfer
//! weights driven by temporal patterns and preference correlation.
//!
//! Module map:
//! - [`ingest`]: interaction logs, per-user sequences, splits, negatives,
//!   the synthetic generator, noise injection and interval analytics.
//! - [`temporal`]: gap discretisation, interval normalisation, gap tokens.
//! - [`encoder`]: embedding tables and the causal transformer layer.
//! - [`evolution`]: ODE/GRU state roll-out, gated fusion, regularisers.
//! - [`semantic`]: prompts, text encoders, PCA + adapter, counterfactuals.
//! - [`transfer`]: temporal patterns, preference factors, transfer weights.
//! - [`trainer`]: the assembled model, losses, optimisation, checkpoints.
//! - [`eval`]: ranking metrics, reports and the experiment suites.
//! - [`pipeline`]: run configuration and the prepare/train/evaluate steps.

pub mod autograd;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod evolution;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod semantic;
pub mod temporal;
pub mod trainer;
pub mod transfer;
pub mod util;

pub use error::{Error, Result};
