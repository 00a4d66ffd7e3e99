//! Epipolar supervision for two-view feature matching.

pub mod estimation;
pub mod fixtures;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod matcher;
pub mod metrics;
pub mod pairgen;
pub mod pipeline;
pub mod synth;
