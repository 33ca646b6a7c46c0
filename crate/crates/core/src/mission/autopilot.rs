use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::command::{Command, Envelope, FaultCause, Source};
use super::replay::Recorder;
use super::report::{MissionReport, ReportBuilder};
use super::world::{Event, World, TICK_DT_S, TICK_HZ};
use super::MissionState;
use crate::kinematics::PressTarget;
use crate::mobile_base::{centering_controller, DriveCommand, MAX_WHEEL_SPEED_MM_S};
use crate::pipe_world::{removal_fraction, sector_center, sector_of, Volume};
use crate::scenario::Scenario;
use crate::tool_system::{ToolKind, MAX_AXIAL_OFFSET_MM, REMOVAL_GATE, TOOL_R_MIN_MM};

/// Switch from cruise to creep this far before the nominal joint position.
const APPROACH_MM: f64 = 400.0;
const CREEP_MM_S: f64 = 50.0;
const CREEP_STOP_MM: f64 = 5.0;
const NUDGE_MM_S: f64 = 20.0;
const SENSOR_SAMPLES: u32 = 25;
const SETTLE_TICKS: u32 = 2;
const ALIGN_TOLERANCE_MM: f64 = 2.0;
const MAX_ALIGN_ATTEMPTS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortPolicy {
    /// Fault the mission on an unreachable joint.
    #[default]
    Halt,
    /// Record the joint as skipped and drive on.
    SkipUnreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    /// Joint indices to rehabilitate, in driving order.
    pub targets: Vec<usize>,
    pub straight_passes: u8,
    pub tapered_passes: u8,
    /// Extra single tapered passes allowed when the removal gate is still unmet.
    pub max_extra_passes: u8,
    pub cruise_mm_s: f64,
    pub reload_cartridge: bool,
    pub abort: AbortPolicy,
    pub max_duration_s: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("plan targets joint {0}, which does not exist")]
    UnknownJoint(usize),
    #[error("plan targets must be strictly increasing")]
    NotAscending,
    #[error("joint {0} lies behind the start position")]
    Behind(usize),
    #[error("cruise speed {0} mm/s outside (0, max wheel speed]")]
    BadCruise(f64),
}

impl MissionPlan {
    pub fn all_joints(scenario: &Scenario) -> Self {
        MissionPlan {
            targets: (0..scenario.pipe.joints.len()).collect(),
            straight_passes: 2,
            tapered_passes: 2,
            max_extra_passes: 4,
            cruise_mm_s: scenario.drive.cruise_mm_s,
            reload_cartridge: true,
            abort: AbortPolicy::Halt,
            max_duration_s: 86_400.0,
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<(), PlanError> {
        if !(self.cruise_mm_s > 0.0 && self.cruise_mm_s <= scenario.drive.max_speed_mm_s) {
            return Err(PlanError::BadCruise(self.cruise_mm_s));
        }
        for (k, &t) in self.targets.iter().enumerate() {
            let joint = scenario.pipe.joints.get(t).ok_or(PlanError::UnknownJoint(t))?;
            if k > 0 && t <= self.targets[k - 1] {
                return Err(PlanError::NotAscending);
            }
            if joint.axial_pos_mm < scenario.start.axial_mm - CREEP_STOP_MM {
                return Err(PlanError::Behind(t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Align {
    Approach,
    Creep,
    Settle(u32),
    Measure { sum: f64, count: u32 },
    Nudge(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Extend,
    Select(ToolKind),
    PlaceBrush,
    Clean(ToolKind, u8),
    GateCheck,
    Reload,
    PlaceNozzle,
    Seal,
    Finish,
    Stow,
    Compress,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    NextJoint,
    Align(Align),
    Work(VecDeque<Step>),
    Completed,
}

/// Sequences a mission by emitting ordinary commands; it never touches the
/// world directly.
#[derive(Debug, Clone)]
pub struct Autopilot {
    plan: MissionPlan,
    cursor: usize,
    phase: Phase,
    issued: bool,
    last_drive: Option<(i16, i16)>,
    align_attempts: u32,
    extra_passes: u8,
    skipped: Vec<(usize, String)>,
}

/// Quantize to wire resolution. The wheel difference is rounded on its own so
/// steering keeps 1 mm/s resolution instead of losing small corrections when
/// both wheels round the same way.
fn drive_command(cmd: DriveCommand) -> (i16, i16) {
    let limit = MAX_WHEEL_SPEED_MM_S;
    let left = cmd.left_mm_s.round();
    let right = left + (cmd.right_mm_s - cmd.left_mm_s).round();
    (left.clamp(-limit, limit) as i16, right.clamp(-limit, limit) as i16)
}

fn theta_cdeg(theta_rad: f64) -> u16 {
    ((theta_rad * 18_000.0 / PI).round() as i64).rem_euclid(36_000) as u16
}

impl Autopilot {
    pub fn new(plan: MissionPlan) -> Self {
        Autopilot {
            plan,
            cursor: 0,
            phase: Phase::NextJoint,
            issued: false,
            last_drive: None,
            align_attempts: 0,
            extra_passes: 0,
            skipped: Vec::new(),
        }
    }

    /// Joint currently being approached or worked on.
    pub fn current_joint(&self) -> Option<usize> {
        self.plan.targets.get(self.cursor).copied()
    }

    /// Joints passed over under [`AbortPolicy::SkipUnreachable`], with the reason.
    pub fn skipped(&self) -> &[(usize, String)] {
        &self.skipped
    }

    fn drive(&mut self, out: &mut Vec<Command>, wheels: (i16, i16)) {
        if self.last_drive != Some(wheels) {
            self.last_drive = Some(wheels);
            out.push(Command::Drive { left_mm_s: wheels.0, right_mm_s: wheels.1 });
        }
    }

    fn abort(&mut self, out: &mut Vec<Command>, cause: FaultCause, detail: String) {
        out.push(Command::Abort { cause, detail });
        self.phase = Phase::Completed;
    }

    fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
        self.issued = false;
    }

    /// Decide the commands for the next tick from the world as it stands and
    /// the events the last tick produced.
    pub fn step(&mut self, world: &World, events: &[Event]) -> Vec<Command> {
        let mut out = Vec::new();
        if matches!(world.state(), MissionState::Fault | MissionState::Done) {
            return out;
        }
        for ev in events {
            if let Event::Nack { source: Source::Autopilot, code, detail, .. } = ev {
                let cause = match code {
                    super::NackCode::CartridgeEmpty => FaultCause::CartridgeEmpty,
                    super::NackCode::Unreachable => FaultCause::JointUnreachable,
                    super::NackCode::GateNotMet => FaultCause::CleaningIncomplete,
                    _ => FaultCause::CommandRejected,
                };
                self.abort(&mut out, cause, format!("{code}: {detail}"));
                return out;
            }
        }
        // A phase may finish and hand over to the next within one call.
        for _ in 0..8 {
            let before = (self.phase.clone(), self.issued);
            self.advance(world, &mut out);
            if !out.is_empty() || (self.phase.clone(), self.issued) == before {
                break;
            }
        }
        out
    }

    fn advance(&mut self, world: &World, out: &mut Vec<Command>) {
        match self.phase.clone() {
            Phase::Completed => {}
            Phase::NextJoint => match self.current_joint() {
                None => {
                    out.push(Command::Complete);
                    self.set_phase(Phase::Completed);
                }
                Some(_) => {
                    self.align_attempts = 0;
                    self.extra_passes = 0;
                    self.set_phase(Phase::Align(Align::Approach));
                }
            },
            Phase::Align(align) => self.advance_align(world, align, out),
            Phase::Work(steps) => self.advance_work(world, steps, out),
        }
    }

    fn advance_align(&mut self, world: &World, align: Align, out: &mut Vec<Command>) {
        let j = self.current_joint().expect("aligning toward a joint");
        let joint = &world.pipe.joints[j];
        let pose = world.robot.pose;
        let remaining = joint.axial_pos_mm - pose.axial_mm;
        let cfg = &world.scenario.drive;
        match align {
            Align::Approach => {
                if remaining <= APPROACH_MM {
                    if world.state() == MissionState::Driving {
                        out.push(Command::BeginAlign);
                    }
                    self.set_phase(Phase::Align(Align::Creep));
                    return;
                }
                let wheels = drive_command(centering_controller(pose, self.plan.cruise_mm_s, cfg));
                self.drive(out, wheels);
            }
            Align::Creep => {
                if remaining <= CREEP_STOP_MM {
                    self.drive(out, (0, 0));
                    self.set_phase(Phase::Align(Align::Settle(SETTLE_TICKS)));
                    return;
                }
                let wheels = drive_command(centering_controller(pose, CREEP_MM_S, cfg));
                self.drive(out, wheels);
            }
            Align::Settle(n) => {
                let next = if n == 0 { Align::Measure { sum: 0.0, count: 0 } } else { Align::Settle(n - 1) };
                self.set_phase(Phase::Align(next));
            }
            Align::Measure { sum, count } => {
                let reading = world.robot.sensor_distance_mm;
                if !reading.is_finite() {
                    return self.abort(out, FaultCause::AlignmentFailed, format!("joint {j} not detected by proximity sensor"));
                }
                let (sum, count) = (sum + reading, count + 1);
                if count < SENSOR_SAMPLES {
                    self.set_phase(Phase::Align(Align::Measure { sum, count }));
                    return;
                }
                let estimate = sum / count as f64;
                if estimate.abs() <= ALIGN_TOLERANCE_MM {
                    return self.check_reach(world, out);
                }
                self.align_attempts += 1;
                if self.align_attempts > MAX_ALIGN_ATTEMPTS {
                    return self.abort(out, FaultCause::AlignmentFailed, format!("joint {j}: residual {estimate:.1} mm"));
                }
                let ticks = ((estimate.abs() / (NUDGE_MM_S * TICK_DT_S)).round() as u32).max(1);
                let v = (NUDGE_MM_S as i16) * if estimate > 0.0 { 1 } else { -1 };
                self.drive(out, (v, v));
                self.set_phase(Phase::Align(Align::Nudge(ticks)));
            }
            Align::Nudge(n) => {
                if n <= 1 {
                    self.drive(out, (0, 0));
                    self.set_phase(Phase::Align(Align::Settle(SETTLE_TICKS)));
                } else {
                    self.set_phase(Phase::Align(Align::Nudge(n - 1)));
                }
            }
        }
    }

    fn check_reach(&mut self, world: &World, out: &mut Vec<Command>) {
        let j = self.current_joint().expect("aligned on a joint");
        let joint = &world.pipe.joints[j];
        if joint.finished {
            self.cursor += 1;
            return self.set_phase(Phase::NextJoint);
        }
        if joint.axial_offset_mm.abs() > MAX_AXIAL_OFFSET_MM {
            let detail = format!(
                "joint {j} unreachable: axial offset {} mm exceeds {} mm",
                joint.axial_offset_mm, MAX_AXIAL_OFFSET_MM
            );
            match self.plan.abort {
                AbortPolicy::Halt => return self.abort(out, FaultCause::JointUnreachable, detail),
                AbortPolicy::SkipUnreachable => {
                    self.skipped.push((j, detail));
                    self.cursor += 1;
                    return self.set_phase(Phase::NextJoint);
                }
            }
        }
        let mut steps = VecDeque::from([Step::Extend]);
        let brushes: Vec<(ToolKind, u8)> =
            [(ToolKind::BrushStraight, self.plan.straight_passes), (ToolKind::BrushTapered, self.plan.tapered_passes)]
                .into_iter()
                .filter(|&(_, p)| p > 0)
                .collect();
        let first = brushes.first().map(|b| b.0).unwrap_or(ToolKind::BrushTapered);
        steps.extend([Step::Select(first), Step::PlaceBrush]);
        for (kind, passes) in brushes {
            steps.extend([Step::Select(kind), Step::Clean(kind, passes)]);
        }
        steps.extend([
            Step::GateCheck,
            Step::Reload,
            Step::Select(ToolKind::Nozzle),
            Step::PlaceNozzle,
            Step::Seal,
            Step::Select(ToolKind::Spatula),
            Step::Finish,
            Step::Stow,
            Step::Compress,
        ]);
        self.set_phase(Phase::Work(steps));
    }

    fn next_step(&mut self, mut steps: VecDeque<Step>) {
        steps.pop_front();
        if steps.is_empty() {
            self.cursor += 1;
            self.set_phase(Phase::NextJoint);
        } else {
            self.set_phase(Phase::Work(steps));
        }
    }

    fn advance_work(&mut self, world: &World, steps: VecDeque<Step>, out: &mut Vec<Command>) {
        let Some(&step) = steps.front() else {
            return self.next_step(steps);
        };
        let j = self.current_joint().expect("working a joint");
        let joint = &world.pipe.joints[j];
        let robot = &world.robot;
        let state = world.state();
        let n = joint.sector_count();
        let groove_z = (joint.groove_pos_mm() - robot.pose.axial_mm).round() as i16;
        let wall_r = world.wall_radius_mm();

        match step {
            Step::Extend => {
                if !self.issued {
                    self.last_drive = None;
                    out.push(Command::Mode { target: PressTarget::Extended });
                    self.issued = true;
                } else if state == MissionState::ExtendedIdle {
                    self.next_step(steps);
                }
            }
            Step::Select(kind) => {
                let ready = robot.tool_kind == Some(kind) && robot.drive_wheel_arm.deployed;
                if ready {
                    self.next_step(steps);
                } else if !self.issued && robot.tool_kind != Some(kind) {
                    out.push(Command::ToolSelect { kind });
                    self.issued = true;
                } else if !self.issued {
                    // right tool, arm still deploying
                    self.issued = true;
                }
            }
            Step::PlaceBrush => {
                if !self.issued {
                    out.push(Command::ToolMove {
                        r_mm: wall_r.round() as u16,
                        theta_cdeg: theta_cdeg(sector_center(0, n)),
                        z_mm: groove_z,
                    });
                    self.issued = true;
                } else if world.tool_idle() {
                    self.next_step(steps);
                }
            }
            Step::Clean(kind, passes) => {
                if !self.issued {
                    out.push(Command::Clean { passes, brush: kind });
                    self.issued = true;
                } else if state == MissionState::ExtendedIdle {
                    self.next_step(steps);
                }
            }
            Step::GateCheck => {
                let removal = removal_fraction(joint);
                if removal >= REMOVAL_GATE {
                    return self.next_step(steps);
                }
                if self.extra_passes >= self.plan.max_extra_passes {
                    return self.abort(
                        out,
                        FaultCause::CleaningIncomplete,
                        format!("joint {j}: removal {removal:.4} below gate after extra passes"),
                    );
                }
                self.extra_passes += 1;
                let mut steps = steps;
                steps.push_front(Step::Clean(ToolKind::BrushTapered, 1));
                steps.push_front(Step::Select(ToolKind::BrushTapered));
                self.set_phase(Phase::Work(steps));
            }
            Step::Reload => {
                let need: Volume = (0..n).map(|s| joint.seal.remaining(s)).sum();
                if self.plan.reload_cartridge && robot.cartridge.fill < need && robot.cartridge.fill < robot.cartridge.capacity {
                    out.push(Command::CartridgeLoad);
                }
                self.next_step(steps);
            }
            Step::PlaceNozzle => {
                let Some(sector) = (0..n).find(|&s| joint.seal.remaining(s) > Volume::ZERO) else {
                    // bead already complete
                    let mut steps = steps;
                    steps.pop_front();
                    steps.pop_front();
                    return self.set_phase(Phase::Work(steps));
                };
                if !self.issued {
                    out.push(Command::ToolMove {
                        r_mm: (wall_r + joint.groove_depth_mm / 2.0).round() as u16,
                        theta_cdeg: theta_cdeg(sector_center(sector, n)),
                        z_mm: groove_z,
                    });
                    self.issued = true;
                } else if state == MissionState::ExtendedIdle && world.tool_idle() {
                    self.next_step(steps);
                }
            }
            Step::Seal => {
                if !self.issued {
                    out.push(Command::Inject { start: true });
                    self.issued = true;
                    return;
                }
                if state != MissionState::Sealing || robot.tool_target.is_some() {
                    return;
                }
                let here = sector_of(robot.tool.theta_rad, n);
                if joint.seal.remaining(here) > Volume::ZERO {
                    return;
                }
                match (1..n).map(|k| (here + k) % n).find(|&s| joint.seal.remaining(s) > Volume::ZERO) {
                    Some(next) => out.push(Command::ToolMove {
                        r_mm: (wall_r + joint.groove_depth_mm / 2.0).round() as u16,
                        theta_cdeg: theta_cdeg(sector_center(next, n)),
                        z_mm: groove_z,
                    }),
                    None => {
                        out.push(Command::Inject { start: false });
                        self.next_step(steps);
                    }
                }
            }
            Step::Finish => {
                if !self.issued {
                    out.push(Command::Spatula);
                    self.issued = true;
                } else if state == MissionState::ExtendedIdle {
                    self.next_step(steps);
                }
            }
            Step::Stow => {
                if !self.issued {
                    out.push(Command::ToolMove {
                        r_mm: TOOL_R_MIN_MM as u16,
                        theta_cdeg: theta_cdeg(robot.tool.theta_rad),
                        z_mm: 0,
                    });
                    self.issued = true;
                } else if world.tool_idle() {
                    self.next_step(steps);
                }
            }
            Step::Compress => {
                if !self.issued {
                    out.push(Command::Mode { target: PressTarget::Compressed });
                    self.issued = true;
                } else if state == MissionState::Driving {
                    self.last_drive = None;
                    self.next_step(steps);
                }
            }
        }
    }
}

pub struct MissionOutput {
    pub report: MissionReport,
    pub replay_log: String,
    pub world: World,
}

pub fn run_mission(scenario: &Scenario, plan: &MissionPlan) -> Result<MissionOutput, PlanError> {
    run_mission_observed(scenario, plan, |_, _| {})
}

/// Run the autopilot to DONE or FAULT; `observer` sees the world after every tick.
pub fn run_mission_observed(
    scenario: &Scenario,
    plan: &MissionPlan,
    mut observer: impl FnMut(&World, &[Event]),
) -> Result<MissionOutput, PlanError> {
    plan.validate(scenario)?;
    let mut world = World::new(scenario);
    let mut pilot = Autopilot::new(plan.clone());
    let mut recorder = Recorder::new(Vec::new(), scenario).expect("in-memory log");
    let mut report = ReportBuilder::new(&world, &plan.targets);
    let max_ticks = (plan.max_duration_s * TICK_HZ as f64).ceil() as u64;
    let mut events: Vec<Event> = Vec::new();
    let mut seq: u16 = 0;
    let mut reported_skips = 0;

    while !matches!(world.state(), MissionState::Done | MissionState::Fault) {
        let mut commands = pilot.step(&world, &events);
        if world.tick_index() >= max_ticks {
            commands.push(Command::Abort {
                cause: FaultCause::Timeout,
                detail: format!("mission exceeded {} s", plan.max_duration_s),
            });
        }
        for (j, detail) in &pilot.skipped()[reported_skips..] {
            report.skipped(world.tick_index(), *j, detail.clone());
        }
        reported_skips = pilot.skipped().len();

        let envelopes: Vec<Envelope> = commands
            .into_iter()
            .map(|command| {
                seq = seq.wrapping_add(1);
                Envelope { source: Source::Autopilot, seq, command }
            })
            .collect();
        let tick = world.tick_index();
        let joint = pilot.current_joint();
        let mut queue: VecDeque<Envelope> = envelopes.iter().cloned().collect();
        events = world.tick(&mut queue);
        recorder.record_tick(tick, &envelopes, &world).expect("in-memory log");
        report.observe(&world, &events, joint);
        observer(&world, &events);
    }

    let final_hash = world.state_hash();
    let log = recorder.finish(&world).expect("in-memory log");
    Ok(MissionOutput {
        report: report.finish(&world, final_hash),
        replay_log: String::from_utf8(log).expect("log is utf-8"),
        world,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_cdeg_wraps() {
        assert_eq!(theta_cdeg(0.0), 0);
        assert_eq!(theta_cdeg(-PI / 2.0), 27_000);
        assert_eq!(theta_cdeg(sector_center(0, 72)), 250);
    }

    #[test]
    fn plan_validation() {
        let s = Scenario::default_mission();
        let mut plan = MissionPlan::all_joints(&s);
        assert!(plan.validate(&s).is_ok());
        plan.targets = vec![3, 2];
        assert_eq!(plan.validate(&s), Err(PlanError::NotAscending));
        plan.targets = vec![99];
        assert_eq!(plan.validate(&s), Err(PlanError::UnknownJoint(99)));
    }

    #[test]
    fn empty_plan_completes_at_once() {
        let s = Scenario::default_mission();
        let mut plan = MissionPlan::all_joints(&s);
        plan.targets.clear();
        let out = run_mission(&s, &plan).unwrap();
        assert_eq!(out.world.state(), MissionState::Done);
        assert_eq!(out.report.ticks, 1);
    }

    #[test]
    fn single_joint_is_finished() {
        let s = Scenario::default_mission();
        let mut plan = MissionPlan::all_joints(&s);
        plan.targets = vec![0];
        let out = run_mission(&s, &plan).unwrap();
        assert_eq!(out.world.state(), MissionState::Done, "{:?}", out.report.faults);
        let j = &out.report.joints[0];
        assert!(j.finished);
        assert!(j.removal_fraction >= REMOVAL_GATE);
        assert!((out.report.totals.injection_time_s - 30.0).abs() < 0.1);
    }
}
