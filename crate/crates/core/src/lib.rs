//! Across-domain generalized category discovery.
//!
//! Given a labeled source-domain set of patch features and an unlabeled,
//! domain-shifted target set that also contains novel classes, the engine
//! trains a small projector with entropy-based adversarial alignment, source
//! and target contrastive objectives and a conditional inpainting hinge, then
//! clusters the target with semi-supervised k-means and reports Hungarian
//! matched All/Old/New accuracy.

pub mod clustering;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod mining;
pub mod nnkit;
pub mod pipeline;

pub use error::{Error, Result};
