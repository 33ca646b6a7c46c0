//! Deterministic simulator of a wall-press in-pipe robot that cleans and
//! reseals pipe joints.
//!
//! The world advances in fixed 50 Hz ticks. Everything that changes it, from
//! an operator session or from the autopilot, goes through one FIFO of
//! [`mission::Command`]s, so a run is fully described by its scenario, seed
//! and command trace.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod kinematics;
pub mod mission;
pub mod mobile_base;
pub mod pipe_world;
pub mod protocol;
pub mod robot;
pub mod scenario;
pub mod tool_system;

pub use mission::{run_mission, Command, MissionPlan, MissionReport, MissionState, World};
pub use scenario::Scenario;
