use super::message::{
    tool_kind_code, EventCode, EventTelemetry, JointMap, StateTelemetry, MAP_SECTORS, NO_JOINT, SENSOR_NONE,
};
use crate::mission::{Event, World};
use crate::pipe_world::{sector_center, sector_of};
use crate::robot::Mode;

/// Round `value / unit` to the nearest integer and clamp it into `T`.
fn fixed<T: TryFrom<i64> + Copy>(value: f64, unit: f64, min: T, max: T) -> T
where
    i64: From<T>,
{
    let q = (value / unit).round();
    if q.is_nan() {
        return min;
    }
    let q = q.clamp(i64::from(min) as f64, i64::from(max) as f64) as i64;
    T::try_from(q).unwrap_or(max)
}

fn cdeg(theta_rad: f64) -> u16 {
    let c = (theta_rad.to_degrees() * 100.0).round() as i64;
    c.rem_euclid(36_000) as u16
}

pub fn quantize_unit(level: f64) -> u8 {
    (level.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize_unit(byte: u8) -> f64 {
    byte as f64 / 255.0
}

pub fn state_telemetry(world: &World) -> StateTelemetry {
    let r = &world.robot;
    let mut s = StateTelemetry {
        tick: r.tick_index,
        axial_dmm: fixed(r.pose.axial_mm, 0.1, i32::MIN, i32::MAX),
        lateral_dmm: fixed(r.pose.lateral_mm, 0.1, i16::MIN, i16::MAX),
        yaw_e4: fixed(r.pose.yaw_rad, 1e-4, i16::MIN, i16::MAX),
        left_mm_s: fixed(r.drive.left_mm_s, 1.0, i16::MIN, i16::MAX),
        right_mm_s: fixed(r.drive.right_mm_s, 1.0, i16::MIN, i16::MAX),
        mode: u8::from(r.mode == Mode::Extended),
        mission: r.mission.code(),
        fault: world.fault.as_ref().map_or(0, |(c, _)| c.code()),
        tool_kind: tool_kind_code(r.tool_kind),
        tool_r_dmm: fixed(r.tool.r_mm, 0.1, 0, u16::MAX),
        tool_theta_cdeg: cdeg(r.tool.theta_rad),
        tool_z_dmm: fixed(r.tool.z_mm, 0.1, i16::MIN, i16::MAX),
        arm_deployed: u8::from(r.drive_wheel_arm.deployed),
        cartridge_fill_dmm3: fixed(r.cartridge.fill.mm3(), 0.1, 0, u32::MAX),
        cartridge_capacity_dmm3: fixed(r.cartridge.capacity.mm3(), 0.1, 0, u32::MAX),
        sensor_dmm: if r.sensor_distance_mm.is_finite() {
            fixed(r.sensor_distance_mm, 0.1, i32::MIN, i32::MAX - 1)
        } else {
            SENSOR_NONE
        },
        joint: world.working_joint().map_or(NO_JOINT, |j| j.min(NO_JOINT as usize - 1) as u16),
        ..Default::default()
    };
    for (i, leg) in r.legs.iter().enumerate() {
        s.leg_extension_cmm[i] = fixed(leg.extension_mm, 0.01, 0, u16::MAX);
        s.leg_force_dn[i] = fixed(leg.contact_force_n, 0.1, 0, u16::MAX);
    }
    s
}

/// Corrosion and bead coverage of one joint on the fixed 72-sector grid.
/// Joints modelled with another sector count are sampled at each grid
/// sector's centre.
pub fn joint_map(world: &World, joint: usize) -> Option<JointMap> {
    let j = world.pipe.joints.get(joint)?;
    let n = j.sector_count();
    let mut map = JointMap { joint: joint as u16, corrosion: [0; MAP_SECTORS], coverage: [0; MAP_SECTORS] };
    for k in 0..MAP_SECTORS {
        let src = if n == MAP_SECTORS { k } else { sector_of(sector_center(k, MAP_SECTORS), n) };
        map.corrosion[k] = quantize_unit(j.corrosion.levels[src]);
        map.coverage[k] = quantize_unit(j.seal.sector_coverage(src));
    }
    Some(map)
}

/// Operator-facing form of a world event; ACK/NACK and joint updates travel
/// as their own messages.
pub fn event_telemetry(world: &World, event: &Event) -> Option<EventTelemetry> {
    let (code, detail) = match event {
        Event::StateChanged { from, to } => (EventCode::StateChanged, format!("{from}->{to}")),
        Event::Fault { cause, detail } => (EventCode::Fault, format!("{}: {cause}: {detail}", cause.code())),
        Event::JointUpdated { joint } if world.pipe.joints[*joint].finished && world.process.finish.is_none() => {
            // only the update that completed the spatula sweep
            if world.state() != crate::mission::MissionState::ExtendedIdle {
                return None;
            }
            (EventCode::JointFinished, joint.to_string())
        }
        Event::CartridgeLoaded { added } => (EventCode::CartridgeLoaded, format!("{:.1}", added.mm3())),
        _ => return None,
    };
    Some(EventTelemetry { code, detail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn quantization_within_one_step() {
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            assert!((dequantize_unit(quantize_unit(v)) - v).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn fresh_world_state() {
        let w = World::new(&Scenario::default_mission());
        let s = state_telemetry(&w);
        assert_eq!(s.mode, 0);
        assert_eq!(s.leg_extension_cmm, [8000; 6]);
        assert_eq!(s.tool_r_dmm, 3500);
        assert_eq!(s.cartridge_fill_dmm3, 20_000_000);
    }

    #[test]
    fn fresh_joint_map_fully_corroded() {
        let w = World::new(&Scenario::default_mission());
        let m = joint_map(&w, 0).unwrap();
        assert!(m.corrosion.iter().all(|&b| b == 255));
        assert!(m.coverage.iter().all(|&b| b == 0));
        assert!(joint_map(&w, 99).is_none());
    }

    #[test]
    fn fixed_saturates() {
        assert_eq!(fixed::<i16>(1e9, 0.1, i16::MIN, i16::MAX), i16::MAX);
        assert_eq!(fixed::<u16>(-5.0, 0.1, 0, u16::MAX), 0);
    }
}
