//! Multi-scale attention branch networks (MSABN) for image classification.
//!
//! The crate covers the whole training and human-in-the-loop workflow:
//!
//! * [`data`]: samples, bounding boxes, manifests, CIFAR binary ingestion and
//!   the append-only annotation store.
//! * [`model`]: residual backbones exposing three feature blocks, multi-scale
//!   fusion, the attention head and the perception branch.
//! * [`puzzle`]: 2x2 tiling, CAM merging and the L1 reconstruction loss.
//! * [`losses`] and [`metrics`]: the branch cross-entropies and accuracy metrics.
//! * [`hitl`]: attention audits, pool selection and copy-replace fine-tuning.
//! * [`harness`]: training, evaluation, overlay export and the annotation service.

pub mod data;
pub mod error;
pub mod harness;
pub mod hitl;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod puzzle;

pub use candle_core;
pub use error::{Error, Result};
