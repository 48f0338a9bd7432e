//! Motion-forecast virtual points ("MoDAR" points) for 3D detection on
//! point-cloud sequences.
//!
//! The crate covers the full desk-scale loop: a deterministic synthetic
//! LiDAR sequence generator, a LiDAR-only detector pair (geometric clustering
//! and a controllable noisy oracle), a Kalman tracker, analytic trajectory
//! forecasters with forward and reverse modes, virtual-point encoding,
//! early/late fusion, and Waymo-style AP/APH evaluation.

// `!(x >= 0.0)` style checks are deliberate: they reject NaN along with the range
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod assignment;
pub mod dataio;
pub mod detector;
pub mod evalkit;
pub mod exec;
pub mod forecast;
pub mod fusion;
pub mod geometry;
pub mod modar;
pub mod pipeline;
pub mod seed;
pub mod simkit;
pub mod tracker;

pub use geometry::{Box3D, ObjectClass, Pose};

/// Frame period of every sequence, in seconds.
pub const FRAME_PERIOD_S: f64 = 0.1;
