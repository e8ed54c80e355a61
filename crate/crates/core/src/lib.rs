//! Desk-scale laboratory for self-supervised positive sampling.
//!
//! Small encoders are trained with SimCLR or DINO objectives on a synthetic
//! corpus where every utterance mixes a speaker latent with a recording
//! channel latent. Positives can be taken from the same utterance (`ssl`),
//! from clustering-derived pseudo-positives (`ssps`), or from a different
//! recording of the same speaker using hidden labels (`supervised`).
//!
//! Modules:
//! - [`synthgen`]: corpus, views, trial lists
//! - [`nncore`]: MLP forward/backward, optimizers, schedules, EMA
//! - [`losses`]: SimCLR and DINO objectives
//! - [`ssps`]: memory queues, spherical k-means, pseudo-positive sampling
//! - [`eval`]: EER, minDCF, variance statistics
//! - [`trainer`]: configuration, training loop, checkpoints, CLI plumbing

pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod nncore;
pub mod parallel;
pub mod ssps;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
