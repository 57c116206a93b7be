//! Two-stage compression of point-cloud classifiers.
//!
//! Stage 1 trains a width-sliceable classifier ("supernet") whose smallest
//! slice is the deployable tiny model; every epoch a randomly widened subnet
//! is trained jointly with the tiny slice so the shared weights land in a
//! region that transfers well. Stage 2 freezes a full-width teacher and
//! fine-tunes the tiny slice with logit distillation.
//!
//! The crate is self-contained: a reverse-mode autodiff tensor engine, a
//! synthetic/OFF point-cloud data layer, a multi-scale-grouping set
//! abstraction backbone, the augmentation and distillation losses, a
//! deterministic trainer, and a CLI.

pub mod augment;
pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod model;
pub mod report;
pub mod stream;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
