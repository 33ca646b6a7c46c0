use serde::{Deserialize, Serialize};

use crate::kinematics::{retracted_legs, LegGeometry, LegState, LEG_COUNT};
use crate::mission::MissionState;
use crate::mobile_base::{BasePose, DriveCommand};
use crate::tool_system::{Cartridge, DriveWheelArm, ToolKind, ToolPose, TOOL_R_MIN_MM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Compressed,
    Extended,
}

/// Everything the tick advances about the robot itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotState {
    pub pose: BasePose,
    pub drive: DriveCommand,
    pub mode: Mode,
    pub legs: [LegState; LEG_COUNT],
    pub tool: ToolPose,
    pub tool_target: Option<ToolPose>,
    pub tool_kind: Option<ToolKind>,
    pub cartridge: Cartridge,
    pub drive_wheel_arm: DriveWheelArm,
    pub mission: MissionState,
    pub tick_index: u64,
    /// Latest joint-proximity reading; infinite when no joint is ahead.
    pub sensor_distance_mm: f64,
}

impl RobotState {
    pub fn new(pose: BasePose, geom: &LegGeometry, cartridge: Cartridge) -> Self {
        RobotState {
            pose,
            drive: DriveCommand::STOP,
            mode: Mode::Compressed,
            legs: retracted_legs(geom),
            tool: ToolPose::stowed(),
            tool_target: None,
            tool_kind: None,
            cartridge,
            drive_wheel_arm: DriveWheelArm::default(),
            mission: MissionState::Driving,
            tick_index: 0,
            sensor_distance_mm: f64::INFINITY,
        }
    }

    /// True while the tool arm or the drive-wheel arm is out of its stowed position.
    pub fn tool_arm_deployed(&self) -> bool {
        self.tool.r_mm > TOOL_R_MIN_MM || self.tool_target.is_some() || !self.drive_wheel_arm.is_retracted()
    }

    pub fn all_legs_in_contact(&self) -> bool {
        self.legs.iter().all(|l| l.in_contact)
    }
}
