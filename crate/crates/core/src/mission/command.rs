use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kinematics::PressTarget;
use crate::tool_system::ToolKind;

/// Who put a command on the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Autopilot,
    Session(u32),
    Local,
}

/// A command at wire resolution. The last four variants are internal and
/// never appear on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Drive { left_mm_s: i16, right_mm_s: i16 },
    Mode { target: PressTarget },
    ToolSelect { kind: ToolKind },
    ToolMove { r_mm: u16, theta_cdeg: u16, z_mm: i16 },
    Inject { start: bool },
    Spatula,
    Clean { passes: u8, brush: ToolKind },
    CartridgeLoad,
    Lock { acquire: bool },
    Subscribe { mask: u8 },
    Estop,
    Heartbeat,
    /// Stop drive, tool motion and injection without faulting.
    Halt,
    BeginAlign,
    Complete,
    Abort { cause: FaultCause, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub source: Source,
    pub seq: u16,
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NackCode {
    UnknownType = 1,
    BadLength = 2,
    OutOfRange = 3,
    Locked = 4,
    Interlock = 5,
    GateNotMet = 6,
    CartridgeEmpty = 7,
    WrongTool = 8,
    OutsideWorkspace = 9,
    ArmNotDeployed = 10,
    Unreachable = 11,
    Busy = 12,
    Faulted = 13,
    NotOnJoint = 14,
    CoverageLow = 15,
    ToolDeployed = 16,
}

impl NackCode {
    const ALL: [NackCode; 16] = [
        NackCode::UnknownType,
        NackCode::BadLength,
        NackCode::OutOfRange,
        NackCode::Locked,
        NackCode::Interlock,
        NackCode::GateNotMet,
        NackCode::CartridgeEmpty,
        NackCode::WrongTool,
        NackCode::OutsideWorkspace,
        NackCode::ArmNotDeployed,
        NackCode::Unreachable,
        NackCode::Busy,
        NackCode::Faulted,
        NackCode::NotOnJoint,
        NackCode::CoverageLow,
        NackCode::ToolDeployed,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            NackCode::UnknownType => "UNKNOWN_TYPE",
            NackCode::BadLength => "BAD_LENGTH",
            NackCode::OutOfRange => "OUT_OF_RANGE",
            NackCode::Locked => "LOCKED",
            NackCode::Interlock => "INTERLOCK",
            NackCode::GateNotMet => "GATE_NOT_MET",
            NackCode::CartridgeEmpty => "CARTRIDGE_EMPTY",
            NackCode::WrongTool => "WRONG_TOOL",
            NackCode::OutsideWorkspace => "OUTSIDE_WORKSPACE",
            NackCode::ArmNotDeployed => "ARM_NOT_DEPLOYED",
            NackCode::Unreachable => "UNREACHABLE",
            NackCode::Busy => "BUSY",
            NackCode::Faulted => "FAULTED",
            NackCode::NotOnJoint => "NOT_ON_JOINT",
            NackCode::CoverageLow => "COVERAGE_LOW",
            NackCode::ToolDeployed => "TOOL_DEPLOYED",
        }
    }
}

impl fmt::Display for NackCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultCause {
    Estop = 1,
    JointUnreachable = 2,
    CartridgeEmpty = 3,
    LossOfContact = 4,
    PipeOverload = 5,
    PipeEndOverrun = 6,
    WallContact = 7,
    CleaningIncomplete = 8,
    AlignmentFailed = 9,
    Timeout = 10,
    CommandRejected = 11,
    Internal = 12,
}

impl FaultCause {
    const ALL: [FaultCause; 12] = [
        FaultCause::Estop,
        FaultCause::JointUnreachable,
        FaultCause::CartridgeEmpty,
        FaultCause::LossOfContact,
        FaultCause::PipeOverload,
        FaultCause::PipeEndOverrun,
        FaultCause::WallContact,
        FaultCause::CleaningIncomplete,
        FaultCause::AlignmentFailed,
        FaultCause::Timeout,
        FaultCause::CommandRejected,
        FaultCause::Internal,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.code() == code)
    }

    pub fn describe(self) -> &'static str {
        match self {
            FaultCause::Estop => "emergency stop",
            FaultCause::JointUnreachable => "joint unreachable",
            FaultCause::CartridgeEmpty => "cartridge empty",
            FaultCause::LossOfContact => "loss of contact",
            FaultCause::PipeOverload => "pipe overload",
            FaultCause::PipeEndOverrun => "pipe end overrun",
            FaultCause::WallContact => "wall contact",
            FaultCause::CleaningIncomplete => "cleaning incomplete",
            FaultCause::AlignmentFailed => "alignment failed",
            FaultCause::Timeout => "mission timeout",
            FaultCause::CommandRejected => "command rejected",
            FaultCause::Internal => "internal error",
        }
    }
}

impl fmt::Display for FaultCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}
