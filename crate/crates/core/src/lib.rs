//! Row-by-row swarm formation for differential-drive robots.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod localization;
pub mod locomotion;
pub mod network;
pub mod par;
pub mod protocol;
pub mod render;
pub mod safety;
pub mod study;
pub mod world;

pub use error::{Error, Result};
pub use world::{load_scenario, EstimatorKind, Point, Pose, ScenarioConfig, TargetShape};
