//! Superpixel mixing augmentation and the tooling around it.
//!
//! The crate is organised bottom-up:
//!
//! - [`imgcore`]: raster, label and probability-map types, RGB to Lab conversion
//!   and the morphological gradient used to drive the watershed.
//! - [`superpixel`]: regular marker grids, marker-based watershed and SLIC.
//! - [`mixer`]: superpixel sampling, binary mixing masks, image and
//!   pseudo-label mixing, weak augmentations.
//! - [`metrics`]: mIoU, ECE, NLL and the OOD ranking metrics (AUC, AUPR, FPR at 95% TPR).
//! - [`consistency`]: a per-pixel linear softmax segmenter trained with a
//!   teacher-student consistency objective on synthetic scenes.
//! - [`bound`]: exact evaluation of the training-loss risk bound over finite distributions.
//! - [`io`]: PNG, probability-map and checkpoint file formats.
//! - [`cli`]: the `spmix` command line.
//!
//! Every random decision takes an explicit [`Rng`]; there is no global randomness.

pub mod bound;
pub mod cli;
pub mod consistency;
mod error;
pub mod experiment;
pub mod imgcore;
pub mod io;
pub mod metrics;
pub mod mixer;
pub mod rng;
pub mod superpixel;

pub use error::{Error, Result};
pub use imgcore::{ImageBuffer, LabelMap, ProbMap, IGNORE_LABEL};
pub use mixer::{MixConfig, MixMask};
pub use rng::Rng;
pub use superpixel::{Algorithm, MarkerGrid, SuperpixelMap};
