//! Cooperative multipath-based SLAM.
//!
//! Synthetic BS–MT, MT–MT and IMU measurements are generated from an
//! image-source model of a floor plan; a particle-based sum-product filter
//! with probabilistic data association then estimates the mobile-terminal
//! states together with a map of potential virtual anchors.

pub mod association;
pub mod geometry;
pub mod inference;
pub mod measurement;
pub mod metrics;
pub mod scenario;
pub mod special;
