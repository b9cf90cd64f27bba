//! Self-supervised stereo depth training with a staged weather curriculum.
//!
//! The crate is organised around the training pipeline:
//!
//! * [`synthdata`] renders rectified stereo scenes with exact depth and owns
//!   the on-disk dataset layout.
//! * [`augmentation`] produces the jittered, relative-adverse and adverse
//!   weather variants of each frame.
//! * [`geometry`] converts disparity to depth and synthesizes one stereo view
//!   from the other.
//! * [`losses`] holds the photometric and cross-stage consistency losses and
//!   the per-epoch consistency weight schedule.
//! * [`curriculum`] decides which variants are trained and contrasted at each
//!   level and when to move to the next level.
//! * [`model`] is the depth network contract, a reference encoder-decoder,
//!   the optimizer and checkpoints.
//! * [`trainer`] runs the epoch loop and [`evaluation`] scores the result.

pub mod augmentation;
pub mod curriculum;
mod error;
mod noise;
pub mod evaluation;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod model;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
