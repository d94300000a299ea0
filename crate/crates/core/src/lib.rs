//! Anchored domain adaptation for engagement prediction on data-poor
//! advertising partners.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks, losses and the adaptive-moment optimizer.
//! - [`model`]: the four model kinds (no-transfer, supervised domain
//!   adaptation, interpretable and latent anchored adaptation), base
//!   training, fine-tuning and checkpoints.
//! - [`data`]: synthetic partner-skewed campaign logs and the head/tail
//!   split protocol.
//! - [`metrics`]: AUC-ROC, NDCG@k, average precision, precision@k and ROC
//!   curves with macro/micro aggregation.
//! - [`experiment`]: the alpha grid search, the cold-start-to-full-data
//!   journey and report generation driven by the CLI.

pub mod error;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
