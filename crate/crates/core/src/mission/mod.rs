//! Rehabilitation state machine, the fixed-step simulation tick, and the
//! autopilot that sequences a mission through the same command path an
//! operator uses.

mod autopilot;
mod command;
pub mod replay;
mod report;
mod world;

use serde::{Deserialize, Serialize};

pub use autopilot::{run_mission, run_mission_observed, AbortPolicy, Autopilot, MissionOutput, MissionPlan, PlanError};
pub use command::{Command, Envelope, FaultCause, NackCode, Source};
pub use report::{JointReport, MissionReport, Outcome, PhaseTimes, Totals};
pub use world::{CleanJob, Event, FinishJob, Ledger, Process, World, TICK_DT_S, TICK_HZ, WORK_WINDOW_MM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionState {
    Driving,
    Aligning,
    Extending,
    ExtendedIdle,
    Cleaning,
    SealPrep,
    Sealing,
    Finishing,
    Compressing,
    Fault,
    Done,
}

impl MissionState {
    pub const ALL: [MissionState; 11] = [
        MissionState::Driving,
        MissionState::Aligning,
        MissionState::Extending,
        MissionState::ExtendedIdle,
        MissionState::Cleaning,
        MissionState::SealPrep,
        MissionState::Sealing,
        MissionState::Finishing,
        MissionState::Compressing,
        MissionState::Fault,
        MissionState::Done,
    ];

    /// States in which a brush, nozzle or spatula acts on the wall.
    pub fn is_power_tool(self) -> bool {
        matches!(self, MissionState::Cleaning | MissionState::Sealing | MissionState::Finishing)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MissionState::Driving => "DRIVING",
            MissionState::Aligning => "ALIGNING",
            MissionState::Extending => "EXTENDING",
            MissionState::ExtendedIdle => "EXTENDED_IDLE",
            MissionState::Cleaning => "CLEANING",
            MissionState::SealPrep => "SEAL_PREP",
            MissionState::Sealing => "SEALING",
            MissionState::Finishing => "FINISHING",
            MissionState::Compressing => "COMPRESSING",
            MissionState::Fault => "FAULT",
            MissionState::Done => "DONE",
        }
    }
}

impl std::fmt::Display for MissionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Legal edges of the mission graph, shared by the autopilot and teleoperation.
///
/// Power-tool states are entered only from `EXTENDED_IDLE` and return to it;
/// `FAULT` is reachable from everywhere and left only by compressing.
pub fn validate_transition(from: MissionState, to: MissionState) -> bool {
    use MissionState::*;
    if to == Fault {
        return true;
    }
    matches!(
        (from, to),
        (Driving, Aligning | Extending | Done)
            | (Aligning, Driving | Extending | Done)
            | (Extending, ExtendedIdle | Compressing)
            | (ExtendedIdle, Cleaning | SealPrep | Sealing | Finishing | Compressing)
            | (Cleaning | SealPrep | Sealing | Finishing, ExtendedIdle)
            | (Compressing, Driving)
            | (Fault, Compressing)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use MissionState::*;

    #[test]
    fn cleaning_requires_wall_press() {
        assert!(!validate_transition(Driving, Cleaning));
        assert!(!validate_transition(Aligning, Sealing));
        assert!(!validate_transition(Extending, Cleaning));
    }

    #[test]
    fn sealing_from_extended_idle() {
        assert!(validate_transition(ExtendedIdle, Sealing));
        assert!(!validate_transition(SealPrep, Sealing));
    }

    #[test]
    fn fault_always_reachable() {
        for s in MissionState::ALL {
            assert!(validate_transition(s, Fault), "{s}");
        }
    }

    #[test]
    fn power_tools_only_from_extended_idle() {
        for from in MissionState::ALL {
            for to in MissionState::ALL {
                if to.is_power_tool() && validate_transition(from, to) {
                    assert_eq!(from, ExtendedIdle, "{from} -> {to}");
                }
            }
        }
    }

    #[test]
    fn done_is_terminal() {
        for to in MissionState::ALL {
            assert_eq!(validate_transition(Done, to), to == Fault);
        }
    }

    #[test]
    fn codes_round_trip() {
        for s in MissionState::ALL {
            assert_eq!(MissionState::from_code(s.code()), Some(s));
        }
        assert_eq!(MissionState::from_code(11), None);
    }
}
