//! Monocular time-to-contact estimation from object scale change.
//!
//! The crate covers the TTC algebra, a synthetic clip generator with exact
//! labels, ground-truth annotation from 3D boxes, pixel- and feature-level
//! scale-ratio search, a small trainable scale head and the MiD/RTE metrics.

pub mod annotate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod geometry;
pub mod learn;
pub mod raster;
pub mod rng;
pub mod sequence;
pub mod synth;
pub mod ttc;

pub use error::{Result, TtcError};
pub use geometry::{BoundingBox, ImageSize};
pub use raster::Raster;
pub use sequence::{FrameSample, Sequence, SequenceLabel, SEQUENCE_LEN};
pub use ttc::{ScaleRatio, TtcInterval, TtcReference, TtcSeconds};
