//! Multi-object tracking with a consistency-model sampler over paired
//! bounding boxes.
//!
//! The pipeline per frame pair `(k-1, k)`:
//!
//! 1. [`sampler::run_inference`] seeds proposals from the previous frame's
//!    tracks, denoises them with a [`denoiser::Denoiser`] through the
//!    consistency parameterization in [`schedule`], and applies paired NMS.
//! 2. [`tracker::Tracker`] runs the four-stage IoU association cascade with
//!    Kalman re-association of lost tracks.
//! 3. [`eval`] scores the output with CLEAR-MOT and identity metrics.
//!
//! Every numeric module is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the double-precision instantiation used by the CLI.
// `!(x > 0)` also rejects NaN; matrix loops read best indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod mot_io;
pub mod num;
pub mod sampler;
pub mod schedule;
pub mod sequence;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use num::Scalar;

pub type BBox64 = geometry::BBox<f64>;
pub type BBox32 = geometry::BBox<f32>;
pub type PairedBox64 = geometry::PairedBox<f64>;
pub type PairedDetection64 = geometry::PairedDetection<f64>;
pub type NoiseSchedule64 = schedule::NoiseSchedule<f64>;
pub type NoiseSchedule32 = schedule::NoiseSchedule<f32>;
pub type SamplerConfig64 = sampler::SamplerConfig<f64>;
pub type OracleDenoiser64 = denoiser::OracleDenoiser<f64>;
pub type SequenceGt64 = sequence::SequenceGt<f64>;
pub type SequenceResult64 = sequence::SequenceResult<f64>;
pub type SimConfig64 = sim::SimConfig<f64>;
pub type Tracker64 = tracker::Tracker<f64>;
