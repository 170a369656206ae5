//! Batch multi-camera multi-object tracking.
//!
//! Detections are grouped per frame across cameras by ground-plane geometry,
//! single-camera tracklets are repaired and linked over time and across
//! cameras by a lifted multicut, and 3D trajectories are interpolated from the
//! resulting clusters.

pub mod affinity;
pub mod assignment;
pub mod config;
pub mod evaluation;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod multicut;
pub mod pipeline;
pub mod precluster;
pub mod simulator;
pub mod tracklets;
pub mod training;
pub mod trajectories;
