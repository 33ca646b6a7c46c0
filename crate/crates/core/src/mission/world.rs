use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::command::{Command, Envelope, FaultCause, NackCode, Source};
use super::{validate_transition, MissionState};
use crate::kinematics::{
    contact_forces, legs_at, required_extension, wall_press_transition, KinematicsError, PressTarget,
};
use crate::mobile_base::{joint_proximity_sensor, step_drive, DriveBounds, DriveCommand, DriveFault};
use crate::pipe_world::{sector_center, sector_of, seal_coverage, PipeSpec, Volume};
use crate::robot::{Mode, RobotState};
use crate::scenario::Scenario;
use crate::tool_system::{
    brush_sector, brush_vibration_check, check_clean, check_inject, inject_metered, move_tool, spatula_finish,
    ToolError, ToolKind, ToolPose, WorkContext, FINISH_COVERAGE, TOOL_R_MIN_MM,
};

pub const TICK_HZ: u32 = 50;
pub const TICK_DT_S: f64 = 1.0 / TICK_HZ as f64;
/// A joint counts as "the working joint" when its nominal position is this close.
pub const WORK_WINDOW_MM: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanJob {
    pub joint: usize,
    pub brush: ToolKind,
    pub alpha: f64,
    pub start_sector: usize,
    pub total_sectors: usize,
    pub done_sectors: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinishJob {
    pub joint: usize,
    pub start_sector: usize,
    pub done_sectors: usize,
    pub elapsed_s: f64,
}

/// Work in progress that spans ticks.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Process {
    pub leg_target: Option<PressTarget>,
    pub clean: Option<CleanJob>,
    pub finish: Option<FinishJob>,
    pub injecting: bool,
}

/// Sealant bookkeeping across the whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub initial_fill: Volume,
    pub loaded: Volume,
    pub deposited: Volume,
    pub cartridge_loads: u32,
    pub injection_time_s: f64,
    pub distance_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Ack { source: Source, seq: u16 },
    Nack { source: Source, seq: u16, code: NackCode, detail: String },
    StateChanged { from: MissionState, to: MissionState },
    Fault { cause: FaultCause, detail: String },
    JointUpdated { joint: usize },
    CartridgeLoaded { added: Volume },
}

type Rejection = (NackCode, String);

fn reject<T>(code: NackCode, detail: impl Into<String>) -> Result<T, Rejection> {
    Err((code, detail.into()))
}

fn tool_rejection(err: ToolError) -> Rejection {
    let code = match err {
        ToolError::NotExtended => NackCode::Interlock,
        ToolError::OutsideWorkspace { .. } => NackCode::OutsideWorkspace,
        ToolError::ArmNotDeployed => NackCode::ArmNotDeployed,
        ToolError::WrongTool => NackCode::WrongTool,
        ToolError::Unreachable(_) => NackCode::Unreachable,
        ToolError::NotOnJoint => NackCode::NotOnJoint,
        ToolError::GateNotMet(_) => NackCode::GateNotMet,
        ToolError::CartridgeEmpty => NackCode::CartridgeEmpty,
        ToolError::CoverageLow(_) => NackCode::CoverageLow,
        ToolError::PipeOverload { .. } => NackCode::Interlock,
    };
    (code, err.to_string())
}

/// The simulated robot in its pipe. Advanced only by [`World::tick`].
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub pipe: PipeSpec,
    pub robot: RobotState,
    pub process: Process,
    pub fault: Option<(FaultCause, String)>,
    pub ledger: Ledger,
}

impl World {
    pub fn new(scenario: &Scenario) -> Self {
        let cartridge = scenario.cartridge.build();
        let ledger = Ledger { initial_fill: cartridge.fill, ..Default::default() };
        let robot = RobotState::new(scenario.start, &scenario.leg_geometry, cartridge);
        let mut world = World {
            scenario: scenario.clone(),
            pipe: scenario.pipe.clone(),
            robot,
            process: Process::default(),
            fault: None,
            ledger,
        };
        world.robot.sensor_distance_mm = world.read_sensor();
        world
    }

    pub fn state(&self) -> MissionState {
        self.robot.mission
    }

    pub fn tick_index(&self) -> u64 {
        self.robot.tick_index
    }

    pub fn time_s(&self) -> f64 {
        self.robot.tick_index as f64 * TICK_DT_S
    }

    pub fn wall_radius_mm(&self) -> f64 {
        self.pipe.diameter_at(self.robot.pose.axial_mm) / 2.0
    }

    /// Joint whose nominal position is within [`WORK_WINDOW_MM`] of the body.
    pub fn working_joint(&self) -> Option<usize> {
        self.pipe.joint_index_near(self.robot.pose.axial_mm, WORK_WINDOW_MM).ok().flatten()
    }

    pub fn work_context(&self) -> WorkContext {
        WorkContext {
            mode: self.robot.mode,
            tool: self.robot.tool,
            kind: self.robot.tool_kind,
            robot_axial_mm: self.robot.pose.axial_mm,
            wall_radius_mm: self.wall_radius_mm(),
        }
    }

    /// Tool pose is stationary and no job is running.
    pub fn tool_idle(&self) -> bool {
        self.robot.tool_target.is_none() && self.process.clean.is_none() && self.process.finish.is_none()
    }

    /// Digest of the full mutable state; equal hashes mean identical runs.
    pub fn state_hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            robot: &'a RobotState,
            joints: &'a [crate::pipe_world::JointSpec],
            process: &'a Process,
            fault: &'a Option<(FaultCause, String)>,
            ledger: &'a Ledger,
        }
        let view = View {
            robot: &self.robot,
            joints: &self.pipe.joints,
            process: &self.process,
            fault: &self.fault,
            ledger: &self.ledger,
        };
        let bytes = serde_json::to_vec(&view).expect("world state serializes");
        hex::encode(&Sha256::digest(&bytes)[..16])
    }

    /// A process state that should never occur: a power tool active without a
    /// firm wall press.
    pub fn safety_violation(&self) -> Option<String> {
        let state = self.robot.mission;
        if state.is_power_tool() && (self.robot.mode != Mode::Extended || !self.robot.all_legs_in_contact()) {
            return Some(format!("{state} without all legs in wall contact"));
        }
        None
    }

    /// Advance one fixed step: drain the command queue in order, then move
    /// every actuator and process.
    pub fn tick(&mut self, queue: &mut VecDeque<Envelope>) -> Vec<Event> {
        let mut events = Vec::new();
        while let Some(env) = queue.pop_front() {
            let Envelope { source, seq, command } = env;
            match self.apply(command, &mut events) {
                Ok(()) => events.push(Event::Ack { source, seq }),
                Err((code, detail)) => events.push(Event::Nack { source, seq, code, detail }),
            }
        }
        self.advance(&mut events);
        self.robot.tick_index += 1;
        events
    }

    fn set_state(&mut self, to: MissionState, events: &mut Vec<Event>) {
        let from = self.robot.mission;
        if from == to {
            return;
        }
        debug_assert!(validate_transition(from, to), "illegal transition {from} -> {to}");
        self.robot.mission = to;
        events.push(Event::StateChanged { from, to });
    }

    fn trip(&mut self, cause: FaultCause, detail: String, events: &mut Vec<Event>) {
        self.robot.drive = DriveCommand::STOP;
        self.robot.tool_target = None;
        self.robot.drive_wheel_arm.halt();
        self.process = Process::default();
        self.set_state(MissionState::Fault, events);
        events.push(Event::Fault { cause, detail: detail.clone() });
        self.fault = Some((cause, detail));
    }

    fn halt(&mut self, events: &mut Vec<Event>) {
        self.robot.drive = DriveCommand::STOP;
        self.robot.tool_target = None;
        self.process.injecting = false;
        self.process.clean = None;
        self.process.finish = None;
        if self.robot.mission.is_power_tool() {
            self.set_state(MissionState::ExtendedIdle, events);
        }
    }

    fn require_working_joint(&self) -> Result<usize, Rejection> {
        self.working_joint().ok_or((NackCode::NotOnJoint, "no joint at the robot position".into()))
    }

    fn apply(&mut self, command: Command, events: &mut Vec<Event>) -> Result<(), Rejection> {
        use MissionState as S;
        let state = self.robot.mission;
        match command {
            Command::Heartbeat | Command::Lock { .. } | Command::Subscribe { .. } => return Ok(()),
            Command::Estop => {
                self.trip(FaultCause::Estop, "emergency stop".into(), events);
                return Ok(());
            }
            Command::Abort { cause, detail } => {
                self.trip(cause, detail, events);
                return Ok(());
            }
            Command::Halt => {
                self.halt(events);
                return Ok(());
            }
            _ => {}
        }
        if state == S::Done {
            return reject(NackCode::Faulted, "mission complete");
        }
        if state == S::Fault
            && !matches!(command, Command::Mode { target: PressTarget::Compressed } | Command::ToolMove { .. } | Command::CartridgeLoad)
        {
            return reject(NackCode::Faulted, "robot is in FAULT");
        }

        match command {
            Command::Drive { left_mm_s, right_mm_s } => {
                let cmd = DriveCommand { left_mm_s: left_mm_s as f64, right_mm_s: right_mm_s as f64 };
                let limit = self.scenario.drive.max_speed_mm_s;
                if cmd.left_mm_s.abs() > limit || cmd.right_mm_s.abs() > limit {
                    return reject(NackCode::OutOfRange, format!("wheel speed exceeds {limit} mm/s"));
                }
                if !matches!(state, S::Driving | S::Aligning) || self.robot.mode != Mode::Compressed {
                    return reject(NackCode::Interlock, "drive requires compressed mode");
                }
                self.robot.drive = cmd;
            }
            Command::Mode { target: PressTarget::Extended } => {
                if matches!(state, S::Extending) || self.robot.mode == Mode::Extended {
                    return Ok(());
                }
                if !matches!(state, S::Driving | S::Aligning) {
                    return reject(NackCode::Interlock, format!("cannot extend from {state}"));
                }
                if !self.robot.drive.is_stopped() {
                    return reject(NackCode::Interlock, KinematicsError::ExtendWhileMoving.to_string());
                }
                let d = self.pipe.diameter_at(self.robot.pose.axial_mm);
                required_extension(d, &self.scenario.leg_geometry)
                    .map_err(|e| (NackCode::OutOfRange, e.to_string()))?;
                self.process.leg_target = Some(PressTarget::Extended);
                self.set_state(S::Extending, events);
            }
            Command::Mode { target: PressTarget::Compressed } => {
                let retracted = self.robot.mode == Mode::Compressed
                    && legs_at(&self.robot.legs, self.scenario.leg_geometry.extension_min_mm);
                if state == S::Compressing || (retracted && matches!(state, S::Driving | S::Aligning)) {
                    return Ok(());
                }
                if !matches!(state, S::ExtendedIdle | S::Extending | S::Fault) {
                    return reject(NackCode::Interlock, format!("cannot compress from {state}"));
                }
                if self.robot.tool.r_mm > TOOL_R_MIN_MM || self.robot.tool_target.is_some() {
                    return reject(NackCode::ToolDeployed, KinematicsError::ToolDeployed.to_string());
                }
                if !self.robot.drive_wheel_arm.is_retracted() {
                    self.robot.drive_wheel_arm.start_retract();
                }
                self.process.leg_target = Some(PressTarget::Compressed);
                self.set_state(S::Compressing, events);
            }
            Command::ToolSelect { kind } => {
                if !matches!(state, S::ExtendedIdle | S::SealPrep) || self.robot.mode != Mode::Extended {
                    return reject(NackCode::Interlock, "tool change requires extended idle");
                }
                if self.robot.tool_target.is_some() {
                    return reject(NackCode::Busy, "tool arm is moving");
                }
                self.robot.tool_kind = Some(kind);
                if !self.robot.drive_wheel_arm.deployed {
                    let wall = self.wall_radius_mm();
                    self.robot.drive_wheel_arm.start_deploy(wall, &self.scenario.tool);
                }
                match (kind, state) {
                    (ToolKind::Nozzle, S::ExtendedIdle) => self.set_state(S::SealPrep, events),
                    (k, S::SealPrep) if k != ToolKind::Nozzle => self.set_state(S::ExtendedIdle, events),
                    _ => {}
                }
            }
            Command::ToolMove { r_mm, theta_cdeg, z_mm } => {
                if theta_cdeg > 35_999 {
                    return reject(NackCode::OutOfRange, "theta exceeds 35999 centidegrees");
                }
                if !matches!(state, S::ExtendedIdle | S::SealPrep | S::Sealing | S::Fault)
                    || self.robot.mode != Mode::Extended
                {
                    return reject(NackCode::Interlock, format!("tool motion not allowed in {state}"));
                }
                if !self.robot.drive_wheel_arm.deployed {
                    return reject(NackCode::ArmNotDeployed, ToolError::ArmNotDeployed.to_string());
                }
                let target = ToolPose {
                    r_mm: r_mm as f64,
                    theta_rad: theta_cdeg as f64 * PI / 18_000.0,
                    z_mm: z_mm as f64,
                };
                target.check_workspace().map_err(tool_rejection)?;
                self.robot.tool_target = Some(target);
            }
            Command::Inject { start: false } => {
                if state == S::Sealing {
                    self.process.injecting = false;
                    self.set_state(S::ExtendedIdle, events);
                }
            }
            Command::Inject { start: true } => {
                if state == S::Sealing {
                    return Ok(());
                }
                if state != S::ExtendedIdle {
                    return reject(NackCode::Interlock, format!("cannot inject from {state}"));
                }
                let j = self.require_working_joint()?;
                let ctx = self.work_context();
                check_inject(&self.pipe.joints[j], &self.robot.cartridge, &ctx).map_err(tool_rejection)?;
                self.process.injecting = true;
                self.set_state(S::Sealing, events);
            }
            Command::Clean { passes, brush } => {
                if state != S::ExtendedIdle {
                    return reject(NackCode::Interlock, format!("cannot clean from {state}"));
                }
                if !brush.is_brush() || self.robot.tool_kind != Some(brush) {
                    return reject(NackCode::WrongTool, ToolError::WrongTool.to_string());
                }
                if self.robot.tool_target.is_some() {
                    return reject(NackCode::Busy, "tool arm is moving");
                }
                let j = self.require_working_joint()?;
                let ctx = self.work_context();
                let kind = check_clean(&self.pipe.joints[j], &ctx).map_err(tool_rejection)?;
                if passes == 0 {
                    return Ok(());
                }
                let alpha = kind.removal_per_pass(&self.scenario.tool).unwrap_or(0.0);
                let n = self.pipe.joints[j].sector_count();
                self.process.clean = Some(CleanJob {
                    joint: j,
                    brush: kind,
                    alpha,
                    start_sector: sector_of(self.robot.tool.theta_rad, n),
                    total_sectors: passes as usize * n,
                    done_sectors: 0,
                    elapsed_s: 0.0,
                });
                self.set_state(S::Cleaning, events);
            }
            Command::Spatula => {
                if state != S::ExtendedIdle {
                    return reject(NackCode::Interlock, format!("cannot finish from {state}"));
                }
                if self.robot.tool_kind != Some(ToolKind::Spatula) {
                    return reject(NackCode::WrongTool, ToolError::WrongTool.to_string());
                }
                if self.robot.tool_target.is_some() {
                    return reject(NackCode::Busy, "tool arm is moving");
                }
                let j = self.require_working_joint()?;
                let joint = &self.pipe.joints[j];
                if !self.work_context().tool_in_socket(joint) {
                    return reject(NackCode::NotOnJoint, ToolError::NotOnJoint.to_string());
                }
                if joint.finished {
                    return Ok(());
                }
                let coverage = seal_coverage(joint);
                if coverage < FINISH_COVERAGE {
                    return reject(NackCode::CoverageLow, ToolError::CoverageLow(coverage).to_string());
                }
                self.process.finish = Some(FinishJob {
                    joint: j,
                    start_sector: sector_of(self.robot.tool.theta_rad, joint.sector_count()),
                    done_sectors: 0,
                    elapsed_s: 0.0,
                });
                self.set_state(S::Finishing, events);
            }
            Command::CartridgeLoad => {
                if state == S::Sealing {
                    return reject(NackCode::Busy, "cannot reload while injecting");
                }
                let added = self.robot.cartridge.reload();
                self.ledger.loaded += added;
                self.ledger.cartridge_loads += 1;
                events.push(Event::CartridgeLoaded { added });
            }
            Command::BeginAlign => {
                if state != S::Driving || self.robot.mode != Mode::Compressed {
                    return reject(NackCode::Interlock, format!("cannot align from {state}"));
                }
                self.set_state(S::Aligning, events);
            }
            Command::Complete => {
                if !matches!(state, S::Driving | S::Aligning) {
                    return reject(NackCode::Interlock, format!("cannot complete from {state}"));
                }
                self.robot.drive = DriveCommand::STOP;
                self.set_state(S::Done, events);
            }
            Command::Heartbeat
            | Command::Lock { .. }
            | Command::Subscribe { .. }
            | Command::Estop
            | Command::Halt
            | Command::Abort { .. } => unreachable!("handled above"),
        }
        Ok(())
    }

    fn advance(&mut self, events: &mut Vec<Event>) {
        let dt = TICK_DT_S;
        self.advance_drive(dt, events);
        self.advance_legs(dt, events);
        self.robot.drive_wheel_arm.step(&self.scenario.tool, dt);
        self.advance_tool(dt);
        self.advance_cleaning(dt, events);
        self.advance_injection(dt, events);
        self.advance_finishing(dt, events);
        self.update_contact(events);

        if self.robot.mission == MissionState::SealPrep && self.tool_idle() && self.robot.drive_wheel_arm.deployed {
            let in_groove = self
                .working_joint()
                .is_some_and(|j| self.work_context().nozzle_in_groove(&self.pipe.joints[j]));
            if in_groove {
                self.set_state(MissionState::ExtendedIdle, events);
            }
        }

        self.robot.sensor_distance_mm = self.read_sensor();
        if let Some(problem) = self.safety_violation() {
            self.trip(FaultCause::Internal, problem, events);
        }
    }

    fn read_sensor(&self) -> f64 {
        joint_proximity_sensor(
            &self.pipe,
            &self.robot.pose,
            self.scenario.sensor_noise_mm,
            self.scenario.seed,
            self.robot.tick_index,
        )
    }

    fn advance_drive(&mut self, dt: f64, events: &mut Vec<Event>) {
        let moving = matches!(self.robot.mission, MissionState::Driving | MissionState::Aligning)
            && self.robot.mode == Mode::Compressed
            && !self.robot.drive.is_stopped();
        if !moving {
            return;
        }
        let axial = self.robot.pose.axial_mm;
        let bounds = DriveBounds {
            length_mm: self.pipe.total_length_mm(),
            lateral_clearance_mm: self.pipe.diameter_at(axial) / 2.0 - self.scenario.leg_geometry.body_radius_mm,
        };
        let step = match step_drive(
            self.robot.pose,
            self.robot.drive,
            self.robot.mode,
            self.scenario.drive.track_width_mm,
            bounds,
            dt,
        ) {
            Ok(step) => step,
            Err(e) => return self.trip(FaultCause::Internal, e.to_string(), events),
        };
        self.ledger.distance_mm += (step.pose.axial_mm - axial).abs();
        self.robot.pose = step.pose;
        match step.fault {
            Some(DriveFault::PipeEndOverrun) => {
                self.trip(FaultCause::PipeEndOverrun, "drove past the end of the pipe".into(), events)
            }
            Some(DriveFault::WallContact) => {
                self.trip(FaultCause::WallContact, "body touched the pipe wall".into(), events)
            }
            None => {}
        }
    }

    fn advance_legs(&mut self, dt: f64, events: &mut Vec<Event>) {
        let Some(target) = self.process.leg_target else { return };
        if target == PressTarget::Compressed && !self.robot.drive_wheel_arm.is_retracted() {
            return;
        }
        let d = self.pipe.diameter_at(self.robot.pose.axial_mm);
        let geom = &self.scenario.leg_geometry;
        match wall_press_transition(&self.robot, d, geom, target, dt) {
            Ok(next) => {
                self.robot = next;
                match target {
                    PressTarget::Extended if self.robot.mode == Mode::Extended => {
                        self.process.leg_target = None;
                        self.set_state(MissionState::ExtendedIdle, events);
                    }
                    PressTarget::Compressed if legs_at(&self.robot.legs, geom.extension_min_mm) => {
                        self.process.leg_target = None;
                        self.set_state(MissionState::Driving, events);
                    }
                    _ => {}
                }
            }
            Err(e) => {
                let cause = match e {
                    KinematicsError::LossOfContact(_) => FaultCause::LossOfContact,
                    _ => FaultCause::Internal,
                };
                self.trip(cause, e.to_string(), events);
            }
        }
    }

    fn advance_tool(&mut self, dt: f64) {
        let Some(target) = self.robot.tool_target else { return };
        match move_tool(
            self.robot.tool,
            target,
            &self.robot.drive_wheel_arm,
            self.robot.mode,
            &self.scenario.tool,
            dt,
        ) {
            Ok(motion) => {
                self.robot.tool = motion.pose;
                if motion.arrived {
                    self.robot.tool_target = None;
                }
            }
            Err(_) => self.robot.tool_target = None,
        }
    }

    fn advance_cleaning(&mut self, dt: f64, events: &mut Vec<Event>) {
        let Some(mut job) = self.process.clean.take() else { return };
        if let Err(e) = brush_vibration_check(&self.scenario.leg_geometry, &self.scenario.tool) {
            return self.trip(FaultCause::PipeOverload, e.to_string(), events);
        }
        let joint = &mut self.pipe.joints[job.joint];
        let n = joint.sector_count();
        let dwell = self.scenario.tool.sector_dwell_s(n);
        job.elapsed_s += dt;
        let mut touched = false;
        while job.done_sectors < job.total_sectors && job.elapsed_s >= dwell * (job.done_sectors + 1) as f64 {
            let sector = (job.start_sector + job.done_sectors) % n;
            brush_sector(&mut joint.corrosion, sector, job.alpha);
            self.robot.tool.theta_rad = sector_center((sector + 1) % n, n);
            job.done_sectors += 1;
            touched = true;
        }
        if touched {
            events.push(Event::JointUpdated { joint: job.joint });
        }
        if job.done_sectors == job.total_sectors {
            self.robot.tool.theta_rad = sector_center(job.start_sector, n);
            self.set_state(MissionState::ExtendedIdle, events);
        } else {
            self.process.clean = Some(job);
        }
    }

    fn advance_injection(&mut self, dt: f64, events: &mut Vec<Event>) {
        if !self.process.injecting {
            return;
        }
        let Some(j) = self.working_joint() else { return };
        let ctx = self.work_context();
        let joint = &mut self.pipe.joints[j];
        let sector = sector_of(ctx.tool.theta_rad, joint.seal.sector_count());
        let remaining = joint.seal.remaining(sector);
        if remaining == Volume::ZERO {
            return;
        }
        match inject_metered(joint, &mut self.robot.cartridge, &ctx, dt, Some(remaining)) {
            Ok(shot) => {
                self.ledger.deposited += shot.volume;
                self.ledger.injection_time_s += shot.duration_s;
                events.push(Event::JointUpdated { joint: j });
                if self.robot.cartridge.is_empty() && joint.seal.remaining(sector) > Volume::ZERO {
                    self.trip(FaultCause::CartridgeEmpty, "cartridge ran out mid-bead".into(), events);
                }
            }
            Err(ToolError::CartridgeEmpty) => {
                self.trip(FaultCause::CartridgeEmpty, "cartridge ran out mid-bead".into(), events);
            }
            // nozzle moved off the groove: the piston waits
            Err(_) => {}
        }
    }

    fn advance_finishing(&mut self, dt: f64, events: &mut Vec<Event>) {
        let Some(mut job) = self.process.finish.take() else { return };
        let n = self.pipe.joints[job.joint].sector_count();
        let dwell = self.scenario.tool.sector_dwell_s(n);
        job.elapsed_s += dt;
        while job.done_sectors < n && job.elapsed_s >= dwell * (job.done_sectors + 1) as f64 {
            job.done_sectors += 1;
            self.robot.tool.theta_rad = sector_center((job.start_sector + job.done_sectors) % n, n);
        }
        if job.done_sectors < n {
            self.process.finish = Some(job);
            return;
        }
        let joint = &mut self.pipe.joints[job.joint];
        if let Err(e) = spatula_finish(joint, self.robot.tool_kind) {
            return self.trip(FaultCause::Internal, e.to_string(), events);
        }
        events.push(Event::JointUpdated { joint: job.joint });
        self.set_state(MissionState::ExtendedIdle, events);
    }

    fn update_contact(&mut self, events: &mut Vec<Event>) {
        if self.robot.mode != Mode::Extended || self.process.leg_target.is_some() {
            return;
        }
        let geom = &self.scenario.leg_geometry;
        let mut baseline = self.robot.legs.clone();
        for leg in baseline.iter_mut() {
            leg.spring_compression_mm = geom.preload_mm;
            leg.contact_force_n = geom.spring_rate_n_per_mm * geom.preload_mm;
            leg.in_contact = true;
        }
        let thrust = if matches!(self.robot.mission, MissionState::Cleaning | MissionState::Finishing) {
            let f = self.scenario.tool.brush_contact_force_n;
            let th = self.robot.tool.theta_rad;
            [f * th.cos(), f * th.sin()]
        } else {
            [0.0, 0.0]
        };
        match contact_forces(&baseline, geom, thrust) {
            Ok(sol) => self.robot.legs = sol.legs,
            Err(e) => self.trip(FaultCause::LossOfContact, e.to_string(), events),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(&Scenario::default_mission())
    }

    fn send(w: &mut World, cmd: Command) -> Vec<Event> {
        let mut q = VecDeque::from([Envelope { source: Source::Local, seq: 1, command: cmd }]);
        w.tick(&mut q)
    }

    fn run(w: &mut World, ticks: usize) {
        for _ in 0..ticks {
            w.tick(&mut VecDeque::new());
        }
    }

    fn nack_code(events: &[Event]) -> Option<NackCode> {
        events.iter().find_map(|e| match e {
            Event::Nack { code, .. } => Some(*code),
            _ => None,
        })
    }

    #[test]
    fn extend_from_retracted_takes_twelve_seconds() {
        // 80 mm -> 200 mm at 10 mm/s
        let mut w = world();
        send(&mut w, Command::Mode { target: PressTarget::Extended });
        assert_eq!(w.state(), MissionState::Extending);
        run(&mut w, 598);
        assert_eq!(w.state(), MissionState::Extending);
        run(&mut w, 1);
        assert_eq!(w.state(), MissionState::ExtendedIdle);
        assert!(w.robot.all_legs_in_contact());
    }

    #[test]
    fn drive_rejected_when_extended() {
        let mut w = world();
        send(&mut w, Command::Mode { target: PressTarget::Extended });
        run(&mut w, 600);
        let ev = send(&mut w, Command::Drive { left_mm_s: 100, right_mm_s: 100 });
        assert_eq!(nack_code(&ev), Some(NackCode::Interlock));
    }

    #[test]
    fn extend_rejected_while_moving() {
        let mut w = world();
        send(&mut w, Command::Drive { left_mm_s: 100, right_mm_s: 100 });
        let ev = send(&mut w, Command::Mode { target: PressTarget::Extended });
        assert_eq!(nack_code(&ev), Some(NackCode::Interlock));
    }

    #[test]
    fn over_speed_is_out_of_range() {
        let mut w = world();
        let ev = send(&mut w, Command::Drive { left_mm_s: 301, right_mm_s: 0 });
        assert_eq!(nack_code(&ev), Some(NackCode::OutOfRange));
    }

    #[test]
    fn estop_faults_within_one_tick() {
        let mut w = world();
        send(&mut w, Command::Drive { left_mm_s: 200, right_mm_s: 200 });
        send(&mut w, Command::Estop);
        assert_eq!(w.state(), MissionState::Fault);
        assert!(w.robot.drive.is_stopped());
        let ev = send(&mut w, Command::Drive { left_mm_s: 10, right_mm_s: 10 });
        assert_eq!(nack_code(&ev), Some(NackCode::Faulted));
    }

    #[test]
    fn fault_recovers_by_compressing() {
        let mut w = world();
        send(&mut w, Command::Mode { target: PressTarget::Extended });
        run(&mut w, 600);
        send(&mut w, Command::Estop);
        send(&mut w, Command::Mode { target: PressTarget::Compressed });
        assert_eq!(w.state(), MissionState::Compressing);
        run(&mut w, 600);
        assert_eq!(w.state(), MissionState::Driving);
    }

    #[test]
    fn inject_before_cleaning_is_gated() {
        let mut w = world();
        // joint 0 sits at 5000 mm
        send(&mut w, Command::Drive { left_mm_s: 200, right_mm_s: 200 });
        run(&mut w, 1249);
        send(&mut w, Command::Drive { left_mm_s: 0, right_mm_s: 0 });
        assert!((w.robot.pose.axial_mm - 5000.0).abs() < 1e-6);
        send(&mut w, Command::Mode { target: PressTarget::Extended });
        run(&mut w, 600);
        send(&mut w, Command::ToolSelect { kind: ToolKind::Nozzle });
        run(&mut w, 300);
        send(&mut w, Command::ToolMove { r_mm: 508, theta_cdeg: 250, z_mm: 0 });
        // 350 -> 508 mm at 20 mm/s
        run(&mut w, 400);
        assert_eq!(w.state(), MissionState::ExtendedIdle);
        let ev = send(&mut w, Command::Inject { start: true });
        assert_eq!(nack_code(&ev), Some(NackCode::GateNotMet));
        assert_eq!(w.pipe.joints[0].seal.total(), Volume::ZERO);
    }

    #[test]
    fn hash_tracks_state() {
        let a = world();
        let mut b = world();
        assert_eq!(a.state_hash(), b.state_hash());
        run(&mut b, 1);
        assert_ne!(a.state_hash(), b.state_hash());
    }
}
