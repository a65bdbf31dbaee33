//! Classifier composition for long-tailed recognition.
//!
//! A frozen linear classifier bank is trained on imbalanced data. For each
//! tail ("few") class, a small two-layer sub-module learns coefficients that
//! linearly combine the class's own weak classifier with the classifiers of
//! its nearest well-trained ("base") neighbors. The composed classifiers
//! replace the weak ones; base classifiers are never touched.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense types, differentiable primitives, a gradient tape.
//! - [`data`]: classifier banks, feature datasets, splits, file formats.
//! - [`datagen`]: synthetic long-tailed data and the baseline classifier bank.
//! - [`neighbors`]: class means, PCA over classifiers, nearest base classes.
//! - [`alphanet`]: the sub-modules, alpha pipeline, loss, and training loop.
//! - [`eval`]: split metrics, per-class reports, sweeps, CSV/SVG output.

pub mod alphanet;
pub mod data;
pub mod datagen;
mod error;
pub mod eval;
pub mod neighbors;
pub mod numerics;

pub use error::{Error, ErrorKind, Result};
