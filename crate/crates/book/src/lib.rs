//! The guide's chapters, compiled so that every listing runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/alpha.md")]
pub mod alpha {}
#[doc = include_str!("../../../book/src/neighbors.md")]
pub mod neighbors {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/files.md")]
pub mod files {}
