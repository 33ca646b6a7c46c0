//! Differential-drive motion of the compressed robot along the pipe invert.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipe_world::PipeSpec;
use crate::robot::Mode;

pub const MAX_WHEEL_SPEED_MM_S: f64 = 300.0;
/// A joint still this far behind the robot reference plane is reported (negative distance).
pub const SENSOR_LOOKBEHIND_MM: f64 = 100.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub axial_mm: f64,
    pub lateral_mm: f64,
    pub yaw_rad: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    pub left_mm_s: f64,
    pub right_mm_s: f64,
}

impl DriveCommand {
    pub const STOP: DriveCommand = DriveCommand { left_mm_s: 0.0, right_mm_s: 0.0 };

    pub fn straight(speed_mm_s: f64) -> Self {
        DriveCommand { left_mm_s: speed_mm_s, right_mm_s: speed_mm_s }
    }

    pub fn is_stopped(&self) -> bool {
        self.left_mm_s == 0.0 && self.right_mm_s == 0.0
    }

    pub fn within_limits(&self) -> bool {
        self.left_mm_s.abs() <= MAX_WHEEL_SPEED_MM_S && self.right_mm_s.abs() <= MAX_WHEEL_SPEED_MM_S
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    pub track_width_mm: f64,
    pub max_speed_mm_s: f64,
    /// Lateral gain, rad/(s·mm).
    pub k_lateral: f64,
    /// Heading gain, 1/s.
    pub k_yaw: f64,
    pub cruise_mm_s: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            track_width_mm: 400.0,
            max_speed_mm_s: MAX_WHEEL_SPEED_MM_S,
            k_lateral: 0.002,
            k_yaw: 1.5,
            cruise_mm_s: 200.0,
        }
    }
}

impl DriveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.track_width_mm > 0.0) {
            return Err("drive.track_width_mm must be positive".into());
        }
        if !(self.max_speed_mm_s > 0.0 && self.max_speed_mm_s <= MAX_WHEEL_SPEED_MM_S) {
            return Err("drive.max_speed_mm_s must be in (0, 300]".into());
        }
        if !(self.cruise_mm_s > 0.0 && self.cruise_mm_s <= self.max_speed_mm_s) {
            return Err("drive.cruise_mm_s must be in (0, max_speed_mm_s]".into());
        }
        if !(self.k_lateral >= 0.0 && self.k_yaw >= 0.0) {
            return Err("drive gains must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriveError {
    #[error("drive requires compressed mode")]
    Interlock,
    #[error("time step must be positive")]
    BadTimeStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveFault {
    PipeEndOverrun,
    WallContact,
}

/// Where the body may travel: pipe length and lateral clearance to the wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveBounds {
    pub length_mm: f64,
    pub lateral_clearance_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveStep {
    pub pose: BasePose,
    pub fault: Option<DriveFault>,
}

pub fn step_drive(
    pose: BasePose,
    cmd: DriveCommand,
    mode: Mode,
    track_width_mm: f64,
    bounds: DriveBounds,
    dt: f64,
) -> Result<DriveStep, DriveError> {
    if mode != Mode::Compressed {
        return Err(DriveError::Interlock);
    }
    if !(dt > 0.0) {
        return Err(DriveError::BadTimeStep);
    }
    let v = (cmd.left_mm_s + cmd.right_mm_s) / 2.0;
    let omega = (cmd.right_mm_s - cmd.left_mm_s) / track_width_mm;
    let mut next = pose;
    if v != 0.0 {
        next.axial_mm += v * pose.yaw_rad.cos() * dt;
        next.lateral_mm += v * pose.yaw_rad.sin() * dt;
    }
    next.yaw_rad += omega * dt;

    let mut fault = None;
    if next.axial_mm < 0.0 || next.axial_mm > bounds.length_mm {
        next.axial_mm = next.axial_mm.clamp(0.0, bounds.length_mm);
        fault = Some(DriveFault::PipeEndOverrun);
    }
    if next.lateral_mm.abs() >= bounds.lateral_clearance_mm {
        next.lateral_mm = next.lateral_mm.clamp(-bounds.lateral_clearance_mm, bounds.lateral_clearance_mm);
        fault = Some(DriveFault::WallContact);
    }
    Ok(DriveStep { pose: next, fault })
}

/// Proportional steering that holds the body on the pipe axis while cruising.
pub fn centering_controller(pose: BasePose, cruise_mm_s: f64, cfg: &DriveConfig) -> DriveCommand {
    let omega = -(cfg.k_lateral * pose.lateral_mm + cfg.k_yaw * pose.yaw_rad);
    let half = omega * cfg.track_width_mm / 2.0;
    let limit = cfg.max_speed_mm_s;
    DriveCommand {
        left_mm_s: (cruise_mm_s - half).clamp(-limit, limit),
        right_mm_s: (cruise_mm_s + half).clamp(-limit, limit),
    }
}

/// Noiseless distance from the robot reference plane to the next joint.
pub fn distance_to_next_joint(spec: &PipeSpec, axial_mm: f64) -> f64 {
    spec.joints
        .iter()
        .map(|j| j.axial_pos_mm - axial_mm)
        .find(|&d| d >= -SENSOR_LOOKBEHIND_MM)
        .unwrap_or(f64::INFINITY)
}

/// Joint-proximity reading: signed distance to the nearest joint ahead plus
/// Gaussian noise. The noise stream is keyed by `(seed, tick_index)` so a
/// replay reproduces every reading.
pub fn joint_proximity_sensor(
    spec: &PipeSpec,
    pose: &BasePose,
    noise_sigma_mm: f64,
    seed: u64,
    tick_index: u64,
) -> f64 {
    let truth = distance_to_next_joint(spec, pose.axial_mm);
    if !truth.is_finite() || noise_sigma_mm <= 0.0 {
        return truth;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick_index);
    let noise = Normal::new(0.0, noise_sigma_mm).map(|n| n.sample(&mut rng)).unwrap_or(0.0);
    truth + noise
}
