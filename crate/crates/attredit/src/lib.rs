//! Feature-level adversarial attribute editing with a conditional
//! deterministic diffusion backend.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`schedule`]: noise schedules and the deterministic inversion /
//!   generation loops.
//! - [`unet`]: the conditional noise predictor.
//! - [`codecs`]: style-code producers (noise-seeded mapper and
//!   reference-image extractor).
//! - [`editor`]: feature extraction, AdaIN translation and semantic encoding.
//! - [`discriminator`]: the multi-branch feature discriminator and the
//!   semantic-code attribute classifier.
//! - [`losses`]: reconstruction / adversarial / classification objectives.
//! - [`train`]: two-phase training (diffusion pretraining, editor training).
//! - [`data`]: label schema, annotation ingestion and the synthetic dataset.
//! - [`eval`]: end-to-end editing, accuracy and Fréchet-distance metrics.

pub mod autodiff;
pub mod error;
pub mod parallel;
pub mod codecs;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod editor;
pub mod checkpoint;
pub mod eval;
pub mod losses;
pub mod optim;
pub mod pixelcls;
pub mod unet;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
