//! Cylindrical-workspace tool arm and the cleaning, injection and finishing
//! processes it applies to a joint's sector maps.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{angle_diff, ramp, transmitted_force, wrap_angle, LegGeometry};
use crate::pipe_world::{removal_fraction, sector_of, seal_coverage, CorrosionMap, JointSpec, Volume};
use crate::robot::Mode;

pub const TOOL_R_MIN_MM: f64 = 350.0;
pub const TOOL_R_MAX_MM: f64 = 620.0;
pub const TOOL_Z_LIMIT_MM: f64 = 150.0;
/// Largest socket displacement from nominal the tool system is rated to reach.
pub const MAX_AXIAL_OFFSET_MM: f64 = 100.0;
pub const PISTON_SPEED_MM_S: f64 = 6.0;
pub const INJECTION_FORCE_N: f64 = 1000.0;
/// Minimum corrosion removal before sealant may be applied.
pub const REMOVAL_GATE: f64 = 0.80;
pub const FINISH_COVERAGE: f64 = 0.99;
/// Radial tolerance for a tool to count as touching the wall.
pub const WALL_TOLERANCE_MM: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("tool operations require extended mode")]
    NotExtended,
    #[error("{axis} target {value} outside workspace [{min},{max}]")]
    OutsideWorkspace { axis: &'static str, value: f64, min: f64, max: f64 },
    #[error("drive-wheel arm not deployed")]
    ArmNotDeployed,
    #[error("wrong tool selected")]
    WrongTool,
    #[error("joint unreachable: axial offset {0} mm exceeds 100 mm")]
    Unreachable(f64),
    #[error("tool not positioned on the joint")]
    NotOnJoint,
    #[error("corrosion removal {0:.4} below 0.80 gate")]
    GateNotMet(f64),
    #[error("cartridge empty")]
    CartridgeEmpty,
    #[error("finish requires full bead (coverage {0:.4})")]
    CoverageLow(f64),
    #[error("transmitted vibration {transmitted_n:.1} N exceeds pipe limit {limit_n:.1} N")]
    PipeOverload { transmitted_n: f64, limit_n: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolPose {
    pub r_mm: f64,
    pub theta_rad: f64,
    pub z_mm: f64,
}

impl ToolPose {
    pub fn stowed() -> Self {
        ToolPose { r_mm: TOOL_R_MIN_MM, theta_rad: 0.0, z_mm: 0.0 }
    }

    pub fn check_workspace(&self) -> Result<(), ToolError> {
        let axes = [
            ("r", self.r_mm, TOOL_R_MIN_MM, TOOL_R_MAX_MM),
            ("z", self.z_mm, -TOOL_Z_LIMIT_MM, TOOL_Z_LIMIT_MM),
        ];
        for (axis, value, min, max) in axes {
            if !(min..=max).contains(&value) {
                return Err(ToolError::OutsideWorkspace { axis, value, min, max });
            }
        }
        if !(0.0..TAU).contains(&self.theta_rad) {
            return Err(ToolError::OutsideWorkspace { axis: "theta", value: self.theta_rad, min: 0.0, max: TAU });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    BrushStraight,
    BrushTapered,
    Nozzle,
    Spatula,
}

impl ToolKind {
    pub fn is_brush(self) -> bool {
        matches!(self, ToolKind::BrushStraight | ToolKind::BrushTapered)
    }

    /// Fraction of a sector's corrosion one brush pass removes.
    pub fn removal_per_pass(self, cfg: &ToolConfig) -> Option<f64> {
        match self {
            ToolKind::BrushStraight => Some(cfg.alpha_straight),
            ToolKind::BrushTapered => Some(cfg.alpha_tapered),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub r_rate_mm_s: f64,
    pub theta_rate_rad_s: f64,
    pub z_rate_mm_s: f64,
    pub alpha_straight: f64,
    pub alpha_tapered: f64,
    pub brush_frequency_hz: f64,
    /// Harmonic force amplitude of the spinning brush.
    pub brush_force_amplitude_n: f64,
    /// Static thrust of a brush or spatula pressed on the wall.
    pub brush_contact_force_n: f64,
    pub pipe_force_limit_n: f64,
    pub arm_rate_mm_s: f64,
    pub arm_base_radius_mm: f64,
    pub arm_preload_mm: f64,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            r_rate_mm_s: 20.0,
            theta_rate_rad_s: 0.2,
            z_rate_mm_s: 20.0,
            alpha_straight: 0.35,
            alpha_tapered: 0.55,
            brush_frequency_hz: 50.0,
            brush_force_amplitude_n: 300.0,
            brush_contact_force_n: 150.0,
            pipe_force_limit_n: 100.0,
            arm_rate_mm_s: 50.0,
            arm_base_radius_mm: 300.0,
            arm_preload_mm: 15.0,
        }
    }
}

impl ToolConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tool.r_rate_mm_s", self.r_rate_mm_s),
            ("tool.theta_rate_rad_s", self.theta_rate_rad_s),
            ("tool.z_rate_mm_s", self.z_rate_mm_s),
            ("tool.brush_frequency_hz", self.brush_frequency_hz),
            ("tool.pipe_force_limit_n", self.pipe_force_limit_n),
            ("tool.arm_rate_mm_s", self.arm_rate_mm_s),
            ("tool.arm_base_radius_mm", self.arm_base_radius_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        for (name, a) in [("tool.alpha_straight", self.alpha_straight), ("tool.alpha_tapered", self.alpha_tapered)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(format!("{name} must be in (0,1)"));
            }
        }
        if self.brush_force_amplitude_n < 0.0 || self.brush_contact_force_n < 0.0 || self.arm_preload_mm < 0.0 {
            return Err("tool forces and preload must be non-negative".into());
        }
        if self.arm_base_radius_mm >= 400.0 {
            return Err("tool.arm_base_radius_mm must be inside the smallest pipe".into());
        }
        Ok(())
    }

    /// Time the brush dwells on one sector while sweeping at the θ rate.
    pub fn sector_dwell_s(&self, sectors: usize) -> f64 {
        TAU / sectors as f64 / self.theta_rate_rad_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartridgeConfig {
    pub capacity_mm3: f64,
    pub piston_diameter_mm: f64,
    /// Fill at mission start; a full cartridge when absent.
    pub initial_fill_mm3: Option<f64>,
}

impl Default for CartridgeConfig {
    fn default() -> Self {
        CartridgeConfig { capacity_mm3: 2.0e6, piston_diameter_mm: 100.0, initial_fill_mm3: None }
    }
}

impl CartridgeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.capacity_mm3 > 0.0 && self.capacity_mm3.is_finite()) {
            return Err("cartridge.capacity_mm3 must be positive".into());
        }
        if !(self.piston_diameter_mm > 0.0) {
            return Err("cartridge.piston_diameter_mm must be positive".into());
        }
        if let Some(fill) = self.initial_fill_mm3 {
            if !(0.0..=self.capacity_mm3).contains(&fill) {
                return Err("cartridge.initial_fill_mm3 must be within [0, capacity]".into());
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Cartridge {
        let capacity = Volume::from_mm3(self.capacity_mm3);
        let fill = self.initial_fill_mm3.map(Volume::from_mm3).unwrap_or(capacity);
        Cartridge {
            capacity,
            fill,
            piston_area_mm2: PI * self.piston_diameter_mm * self.piston_diameter_mm / 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cartridge {
    pub capacity: Volume,
    pub fill: Volume,
    pub piston_area_mm2: f64,
}

impl Cartridge {
    pub fn piston_speed_mm_s(&self) -> f64 {
        PISTON_SPEED_MM_S
    }

    pub fn max_force_n(&self) -> f64 {
        INJECTION_FORCE_N
    }

    /// Volumetric flow with the piston at its fixed speed.
    pub fn flow_mm3_s(&self) -> f64 {
        PISTON_SPEED_MM_S * self.piston_area_mm2
    }

    pub fn is_empty(&self) -> bool {
        self.fill.0 <= 0
    }

    /// Refill to capacity; returns the volume added.
    pub fn reload(&mut self) -> Volume {
        let added = self.capacity - self.fill;
        self.fill = self.capacity;
        added
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DriveWheelArm {
    /// In wall contact with its spring partially compressed.
    pub deployed: bool,
    pub spring_partial_compression_mm: f64,
    pub travel_mm: f64,
    pub target_travel_mm: Option<f64>,
}

impl DriveWheelArm {
    pub fn is_retracted(&self) -> bool {
        !self.deployed && self.travel_mm == 0.0 && self.target_travel_mm.is_none()
    }

    pub fn start_deploy(&mut self, wall_radius_mm: f64, cfg: &ToolConfig) {
        if self.deployed {
            return;
        }
        self.target_travel_mm = Some(wall_radius_mm - cfg.arm_base_radius_mm + cfg.arm_preload_mm);
    }

    pub fn start_retract(&mut self) {
        self.deployed = false;
        self.spring_partial_compression_mm = 0.0;
        self.target_travel_mm = Some(0.0);
    }

    pub fn halt(&mut self) {
        self.target_travel_mm = None;
    }

    pub fn step(&mut self, cfg: &ToolConfig, dt: f64) {
        let Some(goal) = self.target_travel_mm else { return };
        self.travel_mm = ramp(self.travel_mm, goal, cfg.arm_rate_mm_s * dt);
        if self.travel_mm == goal {
            self.target_travel_mm = None;
            if goal > 0.0 {
                self.deployed = true;
                self.spring_partial_compression_mm = cfg.arm_preload_mm;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolMotion {
    pub pose: ToolPose,
    pub arrived: bool,
}

/// Step every tool axis toward `target` at its fixed rate; θ takes the short way round.
pub fn move_tool(
    current: ToolPose,
    target: ToolPose,
    arm: &DriveWheelArm,
    mode: Mode,
    cfg: &ToolConfig,
    dt: f64,
) -> Result<ToolMotion, ToolError> {
    if mode != Mode::Extended {
        return Err(ToolError::NotExtended);
    }
    if !arm.deployed {
        return Err(ToolError::ArmNotDeployed);
    }
    target.check_workspace()?;
    let dtheta = angle_diff(current.theta_rad, target.theta_rad);
    let step_theta = cfg.theta_rate_rad_s * dt;
    let theta = if dtheta.abs() <= step_theta {
        target.theta_rad
    } else {
        wrap_angle(current.theta_rad + step_theta.copysign(dtheta))
    };
    let pose = ToolPose {
        r_mm: ramp(current.r_mm, target.r_mm, cfg.r_rate_mm_s * dt),
        theta_rad: theta,
        z_mm: ramp(current.z_mm, target.z_mm, cfg.z_rate_mm_s * dt),
    };
    Ok(ToolMotion { pose, arrived: pose == target })
}

/// Robot-side facts the process preconditions are checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkContext {
    pub mode: Mode,
    pub tool: ToolPose,
    pub kind: Option<ToolKind>,
    pub robot_axial_mm: f64,
    pub wall_radius_mm: f64,
}

impl WorkContext {
    /// Groove centre relative to the robot reference plane.
    pub fn groove_z_mm(&self, joint: &JointSpec) -> f64 {
        joint.groove_pos_mm() - self.robot_axial_mm
    }

    pub fn tool_at_wall(&self, joint: &JointSpec) -> bool {
        let r = self.tool.r_mm;
        r >= self.wall_radius_mm - WALL_TOLERANCE_MM && r <= self.wall_radius_mm + joint.groove_depth_mm
    }

    pub fn tool_in_socket(&self, joint: &JointSpec) -> bool {
        (self.tool.z_mm - self.groove_z_mm(joint)).abs() <= joint.socket_width_mm / 2.0 && self.tool_at_wall(joint)
    }

    /// Nozzle tip seated at least `WALL_TOLERANCE_MM` past the groove mouth.
    pub fn nozzle_in_groove(&self, joint: &JointSpec) -> bool {
        (self.tool.z_mm - self.groove_z_mm(joint)).abs() <= joint.groove_width_mm / 2.0
            && self.tool.r_mm >= self.wall_radius_mm + WALL_TOLERANCE_MM
            && self.tool.r_mm <= self.wall_radius_mm + joint.groove_depth_mm
    }

    fn require_extended(&self) -> Result<(), ToolError> {
        if self.mode != Mode::Extended {
            return Err(ToolError::NotExtended);
        }
        Ok(())
    }
}

pub fn check_reachable(joint: &JointSpec) -> Result<(), ToolError> {
    if joint.axial_offset_mm.abs() > MAX_AXIAL_OFFSET_MM {
        return Err(ToolError::Unreachable(joint.axial_offset_mm));
    }
    Ok(())
}

/// Contiguous run of sectors, wrapping past the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectorRange {
    pub start: usize,
    pub count: usize,
}

impl SectorRange {
    pub fn full(sectors: usize) -> Self {
        SectorRange { start: 0, count: sectors }
    }

    pub fn indices(&self, sectors: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.start;
        (0..self.count.min(sectors)).map(move |k| (start + k) % sectors)
    }
}

pub fn check_clean(joint: &JointSpec, ctx: &WorkContext) -> Result<ToolKind, ToolError> {
    ctx.require_extended()?;
    let kind = ctx.kind.filter(|k| k.is_brush()).ok_or(ToolError::WrongTool)?;
    check_reachable(joint)?;
    if !ctx.tool_in_socket(joint) {
        return Err(ToolError::NotOnJoint);
    }
    Ok(kind)
}

/// One brush pass over a single sector.
pub fn brush_sector(map: &mut CorrosionMap, sector: usize, alpha: f64) {
    map.levels[sector] *= 1.0 - alpha;
}

/// Corrosion after `passes` brush passes over `range`: `c * (1 - alpha)^passes`.
pub fn clean_pass(
    joint: &JointSpec,
    ctx: &WorkContext,
    range: SectorRange,
    passes: u32,
    cfg: &ToolConfig,
) -> Result<CorrosionMap, ToolError> {
    let alpha = check_clean(joint, ctx)?.removal_per_pass(cfg).ok_or(ToolError::WrongTool)?;
    let mut map = joint.corrosion.clone();
    let factor = (1.0 - alpha).powi(passes as i32);
    for s in range.indices(map.sector_count()) {
        map.levels[s] *= factor;
    }
    Ok(map)
}

/// Vibration the pipe sees from a spinning brush through the leg suspension.
pub fn brush_vibration_check(geom: &LegGeometry, cfg: &ToolConfig) -> Result<f64, ToolError> {
    let transmitted = transmitted_force(geom, cfg.brush_frequency_hz, cfg.brush_force_amplitude_n);
    if transmitted > cfg.pipe_force_limit_n {
        return Err(ToolError::PipeOverload { transmitted_n: transmitted, limit_n: cfg.pipe_force_limit_n });
    }
    Ok(transmitted)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub sector: usize,
    pub volume: Volume,
    /// Piston run time that delivered `volume`.
    pub duration_s: f64,
}

pub fn check_inject(joint: &JointSpec, cartridge: &Cartridge, ctx: &WorkContext) -> Result<(), ToolError> {
    if ctx.kind != Some(ToolKind::Nozzle) {
        return Err(ToolError::WrongTool);
    }
    ctx.require_extended()?;
    let removal = removal_fraction(joint);
    if removal < REMOVAL_GATE {
        return Err(ToolError::GateNotMet(removal));
    }
    if !ctx.nozzle_in_groove(joint) {
        return Err(ToolError::NotOnJoint);
    }
    if cartridge.is_empty() {
        return Err(ToolError::CartridgeEmpty);
    }
    Ok(())
}

/// Push sealant for `dt` into the sector under the nozzle.
pub fn inject(
    joint: &mut JointSpec,
    cartridge: &mut Cartridge,
    ctx: &WorkContext,
    dt: f64,
) -> Result<Injection, ToolError> {
    inject_metered(joint, cartridge, ctx, dt, None)
}

/// As [`inject`], stopping the piston once `limit` has been delivered.
pub fn inject_metered(
    joint: &mut JointSpec,
    cartridge: &mut Cartridge,
    ctx: &WorkContext,
    dt: f64,
    limit: Option<Volume>,
) -> Result<Injection, ToolError> {
    check_inject(joint, cartridge, ctx)?;
    let flow = cartridge.flow_mm3_s();
    let mut volume = Volume::from_mm3(flow * dt);
    if let Some(limit) = limit {
        volume = volume.min(limit);
    }
    volume = volume.min(cartridge.fill).max(Volume::ZERO);
    let sector = sector_of(ctx.tool.theta_rad, joint.seal.sector_count());
    joint.seal.deposited[sector] += volume;
    cartridge.fill -= volume;
    Ok(Injection { sector, volume, duration_s: volume.mm3() / flow })
}

/// Mark the bead finished. Returns false when it already was.
pub fn spatula_finish(joint: &mut JointSpec, kind: Option<ToolKind>) -> Result<bool, ToolError> {
    if kind != Some(ToolKind::Spatula) {
        return Err(ToolError::WrongTool);
    }
    if joint.finished {
        return Ok(false);
    }
    let coverage = seal_coverage(joint);
    if coverage < FINISH_COVERAGE {
        return Err(ToolError::CoverageLow(coverage));
    }
    joint.finished = true;
    Ok(true)
}
