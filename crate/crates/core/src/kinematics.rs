//! Wall-press geometry and suspension of the maintenance unit.
//!
//! Six radial wheeled legs sit in two rings (front and rear) of three, spaced
//! 120° apart. Each leg is a prismatic actuator in series with an independent
//! spring-damper; once the wheel reaches the wall the spring is preloaded and
//! the leg carries a normal force `k * compression`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipe_world::{MAX_DIAMETER_MM, MIN_DIAMETER_MM};
use crate::robot::{Mode, RobotState};

pub const LEG_COUNT: usize = 6;
pub const LEGS_PER_RING: usize = 3;
const EQUILIBRIUM_TOL_N: f64 = 1e-6;
const CENTERING_TOL_MM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("diameter {0} mm out of [800,1200]")]
    DiameterOutOfRange(f64),
    #[error("extension {extension_mm:.3} mm outside leg travel [{min_mm}, {max_mm}]")]
    OutsideTravel { extension_mm: f64, min_mm: f64, max_mm: f64 },
    #[error("loss of contact: {0}")]
    LossOfContact(String),
    #[error("extend requires standstill")]
    ExtendWhileMoving,
    #[error("compress requires the tool arm stowed")]
    ToolDeployed,
    #[error("invalid leg geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegGeometry {
    pub body_radius_mm: f64,
    pub wheel_radius_mm: f64,
    pub extension_min_mm: f64,
    pub extension_max_mm: f64,
    pub spring_rate_n_per_mm: f64,
    pub damping_ratio: f64,
    pub equivalent_mass_kg: f64,
    /// Spring compression applied once a wheel reaches the wall.
    pub preload_mm: f64,
    /// Axial distance between the front and rear leg rings.
    pub ring_spacing_mm: f64,
    pub ramp_rate_mm_s: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        LegGeometry {
            body_radius_mm: 250.0,
            wheel_radius_mm: 50.0,
            extension_min_mm: 80.0,
            extension_max_mm: 320.0,
            spring_rate_n_per_mm: 20.0,
            damping_ratio: 0.4,
            equivalent_mass_kg: 30.0,
            preload_mm: 10.0,
            ring_spacing_mm: 800.0,
            ramp_rate_mm_s: 10.0,
        }
    }
}

impl LegGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let positive = [
            ("body_radius_mm", self.body_radius_mm),
            ("wheel_radius_mm", self.wheel_radius_mm),
            ("extension_min_mm", self.extension_min_mm),
            ("extension_max_mm", self.extension_max_mm),
            ("spring_rate_n_per_mm", self.spring_rate_n_per_mm),
            ("damping_ratio", self.damping_ratio),
            ("equivalent_mass_kg", self.equivalent_mass_kg),
            ("preload_mm", self.preload_mm),
            ("ring_spacing_mm", self.ring_spacing_mm),
            ("ramp_rate_mm_s", self.ramp_rate_mm_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!("{name} must be positive")));
            }
        }
        if self.extension_min_mm >= self.extension_max_mm {
            return Err(KinematicsError::InvalidGeometry(
                "extension_min_mm must be below extension_max_mm".into(),
            ));
        }
        let reach_min = self.body_radius_mm + self.wheel_radius_mm + self.extension_min_mm;
        let reach_max = self.body_radius_mm + self.wheel_radius_mm + self.extension_max_mm;
        if reach_min > MIN_DIAMETER_MM / 2.0 || reach_max < MAX_DIAMETER_MM / 2.0 {
            return Err(KinematicsError::InvalidGeometry(format!(
                "reachable wall radius [{reach_min}, {reach_max}] must contain [400, 600]"
            )));
        }
        Ok(())
    }

    /// Undamped natural frequency of one leg on its spring.
    pub fn natural_frequency_hz(&self) -> f64 {
        let k_n_per_m = self.spring_rate_n_per_mm * 1000.0;
        (k_n_per_m / self.equivalent_mass_kg).sqrt() / TAU
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ring {
    Front,
    Rear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegState {
    pub ring: Ring,
    /// Angular slot; the leg points along `index * 120°`.
    pub index: u8,
    pub extension_mm: f64,
    pub spring_compression_mm: f64,
    pub contact_force_n: f64,
    pub in_contact: bool,
}

impl LegState {
    pub fn retracted(ring: Ring, index: u8, geom: &LegGeometry) -> Self {
        LegState {
            ring,
            index,
            extension_mm: geom.extension_min_mm,
            spring_compression_mm: 0.0,
            contact_force_n: 0.0,
            in_contact: false,
        }
    }

    pub fn angle_rad(&self) -> f64 {
        leg_angle(self.index as usize)
    }
}

pub fn leg_angle(index: usize) -> f64 {
    index as f64 * TAU / LEGS_PER_RING as f64
}

fn unit(angle: f64) -> [f64; 2] {
    [angle.cos(), angle.sin()]
}

/// Front ring legs 0..3 then rear ring legs 0..3.
pub fn retracted_legs(geom: &LegGeometry) -> [LegState; LEG_COUNT] {
    std::array::from_fn(|i| {
        let ring = if i < LEGS_PER_RING { Ring::Front } else { Ring::Rear };
        LegState::retracted(ring, (i % LEGS_PER_RING) as u8, geom)
    })
}

/// Leg extension that puts a wheel on the wall when the body is centred.
pub fn required_extension(pipe_diameter_mm: f64, geom: &LegGeometry) -> Result<f64, KinematicsError> {
    if !(MIN_DIAMETER_MM..=MAX_DIAMETER_MM).contains(&pipe_diameter_mm) {
        return Err(KinematicsError::DiameterOutOfRange(pipe_diameter_mm));
    }
    let e = pipe_diameter_mm / 2.0 - geom.body_radius_mm - geom.wheel_radius_mm;
    if e < geom.extension_min_mm || e > geom.extension_max_mm {
        return Err(KinematicsError::OutsideTravel {
            extension_mm: e,
            min_mm: geom.extension_min_mm,
            max_mm: geom.extension_max_mm,
        });
    }
    Ok(e)
}

pub fn diameter_from_extension(extension_mm: f64, geom: &LegGeometry) -> f64 {
    2.0 * (extension_mm + geom.body_radius_mm + geom.wheel_radius_mm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringOffset {
    pub offset_mm: f64,
    /// Direction of the body-axis displacement, in the leg angle frame.
    pub direction_rad: f64,
    /// Common spring compression shared by the three legs at equilibrium.
    pub compression_mm: f64,
}

/// Distance from body centre `c` along `u` to a circular wall of radius `r`.
fn ray_to_wall(c: [f64; 2], u: [f64; 2], r: f64) -> Option<f64> {
    let cu = c[0] * u[0] + c[1] * u[1];
    let disc = r * r - (c[0] * c[0] + c[1] * c[1]) + cu * cu;
    if disc < 0.0 {
        return None;
    }
    Some(-cu + disc.sqrt())
}

/// Body-axis displacement of one leg ring pressed against the wall.
///
/// With equal spring rates the three legs balance only when their spring
/// compressions are equal, so the body settles where
/// `L_i - wall_distance_i(c)` is the same for every leg (`L_i` is the
/// body-to-tip length). That is a transcendental 2-D system in the body
/// centre `c`; it is solved by Newton iteration from the linearised guess.
pub fn centering_error(
    extensions_mm: [f64; 3],
    pipe_diameter_mm: f64,
    geom: &LegGeometry,
) -> Result<CenteringOffset, KinematicsError> {
    if !(MIN_DIAMETER_MM..=MAX_DIAMETER_MM).contains(&pipe_diameter_mm) {
        return Err(KinematicsError::DiameterOutOfRange(pipe_diameter_mm));
    }
    for &e in &extensions_mm {
        if e < geom.extension_min_mm || e > geom.extension_max_mm {
            return Err(KinematicsError::OutsideTravel {
                extension_mm: e,
                min_mm: geom.extension_min_mm,
                max_mm: geom.extension_max_mm,
            });
        }
    }
    let r = pipe_diameter_mm / 2.0;
    let reach = geom.body_radius_mm + geom.wheel_radius_mm;
    let tips = extensions_mm.map(|e| reach + e);
    let dirs: [[f64; 2]; 3] = std::array::from_fn(|i| unit(leg_angle(i)));

    if tips[0] == tips[1] && tips[1] == tips[2] {
        let compression = tips[0] - r;
        if compression < -CENTERING_TOL_MM {
            return Err(KinematicsError::LossOfContact(format!(
                "legs {:.3} mm short of the wall",
                -compression
            )));
        }
        return Ok(CenteringOffset { offset_mm: 0.0, direction_rad: 0.0, compression_mm: compression });
    }

    let target = [tips[0] - tips[1], tips[0] - tips[2]];
    let residual = |c: [f64; 2]| -> Option<[f64; 2]> {
        let d0 = ray_to_wall(c, dirs[0], r)?;
        let d1 = ray_to_wall(c, dirs[1], r)?;
        let d2 = ray_to_wall(c, dirs[2], r)?;
        Some([d0 - d1 - target[0], d0 - d2 - target[1]])
    };
    let grad = |c: [f64; 2], u: [f64; 2]| -> [f64; 2] {
        let cu = c[0] * u[0] + c[1] * u[1];
        let root = (r * r - (c[0] * c[0] + c[1] * c[1]) + cu * cu).sqrt();
        [
            -u[0] + (-c[0] + cu * u[0]) / root,
            -u[1] + (-c[1] + cu * u[1]) / root,
        ]
    };

    // linearised: d_i ~ r - c.u_i
    let a = [
        [dirs[1][0] - dirs[0][0], dirs[1][1] - dirs[0][1]],
        [dirs[2][0] - dirs[0][0], dirs[2][1] - dirs[0][1]],
    ];
    let mut c = solve2(a, target).unwrap_or([0.0, 0.0]);

    let mut converged = false;
    for _ in 0..60 {
        let Some(g) = residual(c) else { break };
        if g[0].abs().max(g[1].abs()) < CENTERING_TOL_MM {
            converged = true;
            break;
        }
        let g0 = grad(c, dirs[0]);
        let g1 = grad(c, dirs[1]);
        let g2 = grad(c, dirs[2]);
        let jac = [
            [g0[0] - g1[0], g0[1] - g1[1]],
            [g0[0] - g2[0], g0[1] - g2[1]],
        ];
        let Some(step) = solve2(jac, g) else { break };
        c = [c[0] - step[0], c[1] - step[1]];
    }
    let clearance = r - geom.body_radius_mm;
    let offset = (c[0] * c[0] + c[1] * c[1]).sqrt();
    if !converged || offset >= clearance {
        return Err(KinematicsError::LossOfContact("no wall-contact pose within leg travel".into()));
    }
    let compression = tips[0] - ray_to_wall(c, dirs[0], r).unwrap_or(f64::NAN);
    if !(compression >= -CENTERING_TOL_MM) {
        return Err(KinematicsError::LossOfContact(format!(
            "legs {:.3} mm short of the wall",
            -compression
        )));
    }
    Ok(CenteringOffset {
        offset_mm: offset,
        direction_rad: c[1].atan2(c[0]).rem_euclid(TAU),
        compression_mm: compression,
    })
}

/// Same as [`centering_error`] for the three legs of one ring.
pub fn centering_error_for_ring(
    legs: &[LegState],
    pipe_diameter_mm: f64,
    geom: &LegGeometry,
) -> Result<CenteringOffset, KinematicsError> {
    if legs.len() != LEGS_PER_RING {
        return Err(KinematicsError::LossOfContact(format!("ring has {} legs", legs.len())));
    }
    if let Some(leg) = legs.iter().find(|l| !l.in_contact) {
        return Err(KinematicsError::LossOfContact(format!("leg {} not in contact", leg.index)));
    }
    let mut ext = [0.0; 3];
    for leg in legs {
        ext[leg.index as usize] = leg.extension_mm;
    }
    centering_error(ext, pipe_diameter_mm, geom)
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([
        (b[0] * a[1][1] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - b[0] * a[1][0]) / det,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSolution {
    pub forces_n: [f64; LEG_COUNT],
    pub legs: [LegState; LEG_COUNT],
}

/// Leg normal forces that hold the body against an external radial load.
///
/// `external_load_n` is the thrust the body applies outward on the wall (for
/// instance a brush pressed against the pipe), split evenly between the two
/// rings. Each ring shifts by a small displacement `delta` so that
/// `sum(k * (s_i + delta.u_i) * u_i) + load = 0`; a leg whose force would go
/// negative lifts off and the ring is re-solved on the remaining two.
pub fn contact_forces(
    legs: &[LegState; LEG_COUNT],
    geom: &LegGeometry,
    external_load_n: [f64; 2],
) -> Result<ContactSolution, KinematicsError> {
    let k = geom.spring_rate_n_per_mm;
    let ring_load = [external_load_n[0] / 2.0, external_load_n[1] / 2.0];
    let mut out = legs.clone();
    let mut forces = [0.0; LEG_COUNT];
    for ring in 0..2 {
        let base = ring * LEGS_PER_RING;
        let ring_legs = &legs[base..base + LEGS_PER_RING];
        let f = solve_ring(ring_legs, k, ring_load)?;
        for (i, force) in f.into_iter().enumerate() {
            let leg = &mut out[base + i];
            forces[base + i] = force;
            leg.contact_force_n = force;
            leg.spring_compression_mm = force / k;
            leg.in_contact = force > 0.0;
        }
    }
    Ok(ContactSolution { forces_n: forces, legs: out })
}

fn solve_ring(legs: &[LegState], k: f64, load: [f64; 2]) -> Result<[f64; 3], KinematicsError> {
    let dirs: Vec<[f64; 2]> = legs.iter().map(|l| unit(l.angle_rad())).collect();
    let mut active: Vec<usize> =
        (0..legs.len()).filter(|&i| legs[i].in_contact && legs[i].spring_compression_mm > 0.0).collect();

    if active.len() == 3 {
        // sum(u u^T) = 1.5 I for three legs at 120 deg
        let mut pre = [0.0, 0.0];
        for &i in &active {
            let f = k * legs[i].spring_compression_mm;
            pre[0] += f * dirs[i][0];
            pre[1] += f * dirs[i][1];
        }
        let delta = [-(load[0] + pre[0]) / (1.5 * k), -(load[1] + pre[1]) / (1.5 * k)];
        let mut forces = [0.0; 3];
        for &i in &active {
            let shift = delta[0] * dirs[i][0] + delta[1] * dirs[i][1];
            forces[i] = k * (legs[i].spring_compression_mm + shift);
        }
        if forces.iter().all(|&f| f >= 0.0) {
            return Ok(forces);
        }
        active.retain(|&i| forces[i] > 0.0);
    }

    if active.len() == 2 {
        let (a, b) = (active[0], active[1]);
        let basis = [[dirs[a][0], dirs[b][0]], [dirs[a][1], dirs[b][1]]];
        let f = solve2(basis, [-load[0], -load[1]])
            .ok_or_else(|| KinematicsError::LossOfContact("degenerate leg pair".into()))?;
        if f[0] > 0.0 && f[1] > 0.0 {
            let mut forces = [0.0; 3];
            forces[a] = f[0];
            forces[b] = f[1];
            let sum = [f[0] * dirs[a][0] + f[1] * dirs[b][0], f[0] * dirs[a][1] + f[1] * dirs[b][1]];
            debug_assert!((sum[0] + load[0]).abs() < EQUILIBRIUM_TOL_N);
            debug_assert!((sum[1] + load[1]).abs() < EQUILIBRIUM_TOL_N);
            return Ok(forces);
        }
    }
    Err(KinematicsError::LossOfContact(format!(
        "{} ring cannot balance load ({:.1}, {:.1}) N",
        match legs.first().map(|l| l.ring) {
            Some(Ring::Rear) => "rear",
            _ => "front",
        },
        load[0],
        load[1]
    )))
}

/// Force transmissibility of a single-DOF base-isolated mount.
///
/// Returns `f64::INFINITY` at undamped resonance (`r == 1`, `zeta == 0`).
pub fn transmissibility(frequency_ratio: f64, damping_ratio: f64) -> f64 {
    let r = frequency_ratio;
    let two_zeta_r = 2.0 * damping_ratio * r;
    let num = 1.0 + two_zeta_r * two_zeta_r;
    let den = (1.0 - r * r).powi(2) + two_zeta_r * two_zeta_r;
    if den == 0.0 {
        return f64::INFINITY;
    }
    (num / den).sqrt()
}

/// Force a leg suspension passes to the pipe for a harmonic tool load.
pub fn transmitted_force(geom: &LegGeometry, forcing_hz: f64, amplitude_n: f64) -> f64 {
    let ratio = forcing_hz / geom.natural_frequency_hz();
    amplitude_n * transmissibility(ratio, geom.damping_ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressTarget {
    Extended,
    Compressed,
}

/// Advance the leg ramp one step toward `target`.
///
/// Extension ramps every leg at `ramp_rate_mm_s` to the required extension;
/// when all six arrive the springs take their preload and the mode flips to
/// extended with the body centred. Compression releases the preload at once
/// (mode becomes compressed) and then ramps the legs back to minimum travel.
pub fn wall_press_transition(
    state: &RobotState,
    pipe_diameter_mm: f64,
    geom: &LegGeometry,
    target: PressTarget,
    dt: f64,
) -> Result<RobotState, KinematicsError> {
    let mut next = state.clone();
    match target {
        PressTarget::Extended => {
            if state.drive.left_mm_s != 0.0 || state.drive.right_mm_s != 0.0 {
                return Err(KinematicsError::ExtendWhileMoving);
            }
            let goal = required_extension(pipe_diameter_mm, geom)?;
            if state.mode == Mode::Extended && state.legs.iter().all(|l| l.extension_mm == goal) {
                return Ok(next);
            }
            let step = geom.ramp_rate_mm_s * dt;
            let mut arrived = true;
            for leg in next.legs.iter_mut() {
                leg.extension_mm = ramp(leg.extension_mm, goal, step);
                arrived &= leg.extension_mm == goal;
            }
            if arrived {
                let force = geom.spring_rate_n_per_mm * geom.preload_mm;
                for leg in next.legs.iter_mut() {
                    leg.spring_compression_mm = geom.preload_mm;
                    leg.contact_force_n = force;
                    leg.in_contact = true;
                }
                let front = centering_error_for_ring(&next.legs[..3], pipe_diameter_mm, geom)?;
                let rear = centering_error_for_ring(&next.legs[3..], pipe_diameter_mm, geom)?;
                let lateral = |c: &CenteringOffset| c.offset_mm * c.direction_rad.sin();
                next.pose.lateral_mm = (lateral(&front) + lateral(&rear)) / 2.0;
                next.pose.yaw_rad = ((lateral(&front) - lateral(&rear)) / geom.ring_spacing_mm).atan();
                next.mode = Mode::Extended;
            }
        }
        PressTarget::Compressed => {
            if state.tool_arm_deployed() {
                return Err(KinematicsError::ToolDeployed);
            }
            next.mode = Mode::Compressed;
            let step = geom.ramp_rate_mm_s * dt;
            for leg in next.legs.iter_mut() {
                leg.spring_compression_mm = 0.0;
                leg.contact_force_n = 0.0;
                leg.in_contact = false;
                leg.extension_mm = ramp(leg.extension_mm, geom.extension_min_mm, step);
            }
        }
    }
    Ok(next)
}

pub fn legs_at(legs: &[LegState; LEG_COUNT], extension_mm: f64) -> bool {
    legs.iter().all(|l| l.extension_mm == extension_mm)
}

/// Move `current` toward `goal` by at most `step`, landing exactly on `goal`.
/// Rounding left over from repeated steps does not cost an extra tick.
pub(crate) fn ramp(current: f64, goal: f64, step: f64) -> f64 {
    let delta = goal - current;
    if delta.abs() <= step * (1.0 + 1e-9) {
        goal
    } else {
        current + step.copysign(delta)
    }
}

/// Normalise an angle into [0, 2π).
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Signed shortest angular difference `to - from` in (-π, π].
pub(crate) fn angle_diff(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}
