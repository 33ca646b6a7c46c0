use thiserror::Error;

use super::frame::{Frame, FrameError, MAX_PAYLOAD};
use crate::kinematics::PressTarget;
use crate::mission::Command;
use crate::mobile_base::MAX_WHEEL_SPEED_MM_S;
use crate::tool_system::ToolKind;

pub mod msg_type {
    pub const DRIVE: u8 = 0x01;
    pub const MODE: u8 = 0x02;
    pub const TOOL_SELECT: u8 = 0x03;
    pub const TOOL_MOVE: u8 = 0x04;
    pub const INJECT: u8 = 0x05;
    pub const SPATULA: u8 = 0x06;
    pub const CLEAN: u8 = 0x07;
    pub const CARTRIDGE_LOAD: u8 = 0x08;
    pub const LOCK: u8 = 0x09;
    pub const SUBSCRIBE: u8 = 0x0A;
    pub const ESTOP: u8 = 0x0E;
    pub const HEARTBEAT: u8 = 0x0F;
    pub const STATE: u8 = 0x80;
    pub const JOINT_MAP: u8 = 0x81;
    pub const EVENT: u8 = 0x82;
    pub const ACK: u8 = 0x83;
}

pub const MAX_THETA_CDEG: u16 = 35_999;
pub const MAP_SECTORS: usize = 72;
pub const NO_TOOL: u8 = 0xFF;
pub const NO_JOINT: u16 = 0xFFFF;
/// Sensor field value when no joint lies ahead.
pub const SENSOR_NONE: i32 = i32::MAX;

/// Subscription bits carried by SUBSCRIBE.
pub mod topic {
    pub const STATE: u8 = 0x01;
    pub const JOINT_MAP: u8 = 0x02;
    pub const EVENT: u8 = 0x04;
    pub const ALL: u8 = STATE | JOINT_MAP | EVENT;
}

/// Status byte of an ACK/NACK; 0 is ACK, anything else a `NackCode`.
pub const STATUS_OK: u8 = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unknown message type 0x{0:02X}")]
    UnknownType(u8),
    #[error("message type 0x{msg_type:02X} needs {expected} payload bytes, got {actual}")]
    BadLength { msg_type: u8, expected: usize, actual: usize },
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: i64 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

fn out_of_range<T>(field: &'static str, value: impl Into<i64>) -> Result<T, CodecError> {
    Err(CodecError::OutOfRange { field, value: value.into() })
}

/// Fixed-point snapshot of the robot, one per tick.
///
/// Units: positions in 0.1 mm, yaw in 1e-4 rad, leg extension in 0.01 mm,
/// leg force in 0.1 N, tool angle in centidegrees, volumes in 0.1 mm^3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateTelemetry {
    pub tick: u64,
    pub axial_dmm: i32,
    pub lateral_dmm: i16,
    pub yaw_e4: i16,
    pub left_mm_s: i16,
    pub right_mm_s: i16,
    /// 0 compressed, 1 extended.
    pub mode: u8,
    pub mission: u8,
    /// 0 none, otherwise a `FaultCause` code.
    pub fault: u8,
    pub tool_kind: u8,
    pub leg_extension_cmm: [u16; 6],
    pub leg_force_dn: [u16; 6],
    pub tool_r_dmm: u16,
    pub tool_theta_cdeg: u16,
    pub tool_z_dmm: i16,
    pub arm_deployed: u8,
    pub cartridge_fill_dmm3: u32,
    pub cartridge_capacity_dmm3: u32,
    pub sensor_dmm: i32,
    pub joint: u16,
}

pub const STATE_LEN: usize = 8 + 4 + 2 + 2 + 2 + 2 + 4 + 6 * 2 + 6 * 2 + 2 + 2 + 2 + 1 + 4 + 4 + 4 + 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointMap {
    pub joint: u16,
    pub corrosion: [u8; MAP_SECTORS],
    pub coverage: [u8; MAP_SECTORS],
}

pub const JOINT_MAP_LEN: usize = 2 + 2 * MAP_SECTORS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum EventCode {
    StateChanged = 1,
    Fault = 2,
    JointFinished = 3,
    CartridgeLoaded = 4,
    LockChanged = 5,
    CrcError = 6,
}

impl EventCode {
    pub fn from_code(code: u8) -> Option<Self> {
        use EventCode::*;
        [StateChanged, Fault, JointFinished, CartridgeLoaded, LockChanged, CrcError]
            .into_iter()
            .find(|c| *c as u8 == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTelemetry {
    pub code: EventCode,
    pub detail: String,
}

/// Every message that can travel in a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Drive { left_mm_s: i16, right_mm_s: i16 },
    Mode { extend: bool },
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
    State(StateTelemetry),
    JointMap(JointMap),
    Event(EventTelemetry),
    Ack { seq: u16, status: u8 },
}

fn tool_code(kind: ToolKind) -> u8 {
    match kind {
        ToolKind::BrushStraight => 0,
        ToolKind::BrushTapered => 1,
        ToolKind::Nozzle => 2,
        ToolKind::Spatula => 3,
    }
}

fn tool_from_code(code: u8) -> Option<ToolKind> {
    match code {
        0 => Some(ToolKind::BrushStraight),
        1 => Some(ToolKind::BrushTapered),
        2 => Some(ToolKind::Nozzle),
        3 => Some(ToolKind::Spatula),
        _ => None,
    }
}

pub fn tool_kind_code(kind: Option<ToolKind>) -> u8 {
    kind.map(tool_code).unwrap_or(NO_TOOL)
}

pub fn tool_kind_from_code(code: u8) -> Option<ToolKind> {
    tool_from_code(code)
}

fn check_wheel(field: &'static str, v: i16) -> Result<(), CodecError> {
    if (v as f64).abs() > MAX_WHEEL_SPEED_MM_S {
        return out_of_range(field, v);
    }
    Ok(())
}

fn flag(field: &'static str, b: u8) -> Result<bool, CodecError> {
    match b {
        0 => Ok(false),
        1 => Ok(true),
        _ => out_of_range(field, b),
    }
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        head.try_into().expect("length checked")
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_be_bytes(self.take())
    }
    fn i16(&mut self) -> i16 {
        i16::from_be_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take())
    }
    fn i32(&mut self) -> i32 {
        i32::from_be_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_be_bytes(self.take())
    }
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Drive { .. } => DRIVE,
            Message::Mode { .. } => MODE,
            Message::ToolSelect { .. } => TOOL_SELECT,
            Message::ToolMove { .. } => TOOL_MOVE,
            Message::Inject { .. } => INJECT,
            Message::Spatula => SPATULA,
            Message::Clean { .. } => CLEAN,
            Message::CartridgeLoad => CARTRIDGE_LOAD,
            Message::Lock { .. } => LOCK,
            Message::Subscribe { .. } => SUBSCRIBE,
            Message::Estop => ESTOP,
            Message::Heartbeat => HEARTBEAT,
            Message::State(_) => STATE,
            Message::JointMap(_) => JOINT_MAP,
            Message::Event(_) => EVENT,
            Message::Ack { .. } => ACK,
        }
    }

    pub fn is_command(&self) -> bool {
        self.msg_type() < 0x80
    }

    /// Payload bytes; fails when a field is outside its wire range.
    pub fn payload(&self) -> Result<Vec<u8>, CodecError> {
        let mut p = Vec::new();
        match self {
            Message::Drive { left_mm_s, right_mm_s } => {
                check_wheel("left_mm_s", *left_mm_s)?;
                check_wheel("right_mm_s", *right_mm_s)?;
                p.extend(left_mm_s.to_be_bytes());
                p.extend(right_mm_s.to_be_bytes());
            }
            Message::Mode { extend } => p.push(u8::from(*extend)),
            Message::ToolSelect { kind } => p.push(tool_code(*kind)),
            Message::ToolMove { r_mm, theta_cdeg, z_mm } => {
                if *theta_cdeg > MAX_THETA_CDEG {
                    return out_of_range("theta_cdeg", *theta_cdeg);
                }
                p.extend(r_mm.to_be_bytes());
                p.extend(theta_cdeg.to_be_bytes());
                p.extend(z_mm.to_be_bytes());
            }
            Message::Inject { start } => p.push(u8::from(*start)),
            Message::Clean { passes, brush } => {
                if !brush.is_brush() {
                    return out_of_range("brush", tool_code(*brush));
                }
                p.push(*passes);
                p.push(tool_code(*brush));
            }
            Message::Lock { acquire } => p.push(u8::from(*acquire)),
            Message::Subscribe { mask } => {
                if mask & !topic::ALL != 0 {
                    return out_of_range("mask", *mask);
                }
                p.push(*mask);
            }
            Message::Spatula | Message::CartridgeLoad | Message::Estop | Message::Heartbeat => {}
            Message::State(s) => {
                p.extend(s.tick.to_be_bytes());
                p.extend(s.axial_dmm.to_be_bytes());
                p.extend(s.lateral_dmm.to_be_bytes());
                p.extend(s.yaw_e4.to_be_bytes());
                p.extend(s.left_mm_s.to_be_bytes());
                p.extend(s.right_mm_s.to_be_bytes());
                p.extend([s.mode, s.mission, s.fault, s.tool_kind]);
                for e in s.leg_extension_cmm {
                    p.extend(e.to_be_bytes());
                }
                for f in s.leg_force_dn {
                    p.extend(f.to_be_bytes());
                }
                p.extend(s.tool_r_dmm.to_be_bytes());
                p.extend(s.tool_theta_cdeg.to_be_bytes());
                p.extend(s.tool_z_dmm.to_be_bytes());
                p.push(s.arm_deployed);
                p.extend(s.cartridge_fill_dmm3.to_be_bytes());
                p.extend(s.cartridge_capacity_dmm3.to_be_bytes());
                p.extend(s.sensor_dmm.to_be_bytes());
                p.extend(s.joint.to_be_bytes());
                debug_assert_eq!(p.len(), STATE_LEN);
            }
            Message::JointMap(m) => {
                p.extend(m.joint.to_be_bytes());
                p.extend(m.corrosion);
                p.extend(m.coverage);
            }
            Message::Event(e) => {
                p.push(e.code as u8);
                p.extend(truncate_utf8(&e.detail, MAX_PAYLOAD - 1).as_bytes());
            }
            Message::Ack { seq, status } => {
                p.extend(seq.to_be_bytes());
                p.push(*status);
            }
        }
        Ok(p)
    }

    pub fn to_frame(&self, seq: u16) -> Result<Frame, CodecError> {
        Ok(Frame::new(self.msg_type(), seq, self.payload()?))
    }

    pub fn encode(&self, seq: u16) -> Result<Vec<u8>, CodecError> {
        Ok(self.to_frame(seq)?.encode()?)
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, CodecError> {
        use msg_type::*;
        let t = frame.msg_type;
        let expected = match t {
            DRIVE => Some(4),
            MODE | TOOL_SELECT | INJECT | LOCK | SUBSCRIBE => Some(1),
            TOOL_MOVE => Some(6),
            CLEAN => Some(2),
            SPATULA | CARTRIDGE_LOAD | ESTOP | HEARTBEAT => Some(0),
            STATE => Some(STATE_LEN),
            JOINT_MAP => Some(JOINT_MAP_LEN),
            ACK => Some(3),
            EVENT => None,
            _ => return Err(CodecError::UnknownType(t)),
        };
        let actual = frame.payload.len();
        match expected {
            Some(n) if n != actual => return Err(CodecError::BadLength { msg_type: t, expected: n, actual }),
            None if actual == 0 => return Err(CodecError::BadLength { msg_type: t, expected: 1, actual }),
            _ => {}
        }
        let mut r = Reader { bytes: &frame.payload };
        let msg = match t {
            DRIVE => {
                let (left_mm_s, right_mm_s) = (r.i16(), r.i16());
                check_wheel("left_mm_s", left_mm_s)?;
                check_wheel("right_mm_s", right_mm_s)?;
                Message::Drive { left_mm_s, right_mm_s }
            }
            MODE => Message::Mode { extend: flag("mode", r.u8())? },
            TOOL_SELECT => {
                let b = r.u8();
                Message::ToolSelect { kind: tool_from_code(b).map_or_else(|| out_of_range("kind", b), Ok)? }
            }
            TOOL_MOVE => {
                let (r_mm, theta_cdeg, z_mm) = (r.u16(), r.u16(), r.i16());
                if theta_cdeg > MAX_THETA_CDEG {
                    return out_of_range("theta_cdeg", theta_cdeg);
                }
                Message::ToolMove { r_mm, theta_cdeg, z_mm }
            }
            INJECT => Message::Inject { start: flag("inject", r.u8())? },
            SPATULA => Message::Spatula,
            CLEAN => {
                let passes = r.u8();
                let b = r.u8();
                match tool_from_code(b) {
                    Some(brush) if brush.is_brush() => Message::Clean { passes, brush },
                    _ => return out_of_range("brush", b),
                }
            }
            CARTRIDGE_LOAD => Message::CartridgeLoad,
            LOCK => Message::Lock { acquire: flag("lock", r.u8())? },
            SUBSCRIBE => {
                let mask = r.u8();
                if mask & !topic::ALL != 0 {
                    return out_of_range("mask", mask);
                }
                Message::Subscribe { mask }
            }
            ESTOP => Message::Estop,
            HEARTBEAT => Message::Heartbeat,
            STATE => {
                let mut s = StateTelemetry {
                    tick: r.u64(),
                    axial_dmm: r.i32(),
                    lateral_dmm: r.i16(),
                    yaw_e4: r.i16(),
                    left_mm_s: r.i16(),
                    right_mm_s: r.i16(),
                    mode: r.u8(),
                    mission: r.u8(),
                    fault: r.u8(),
                    tool_kind: r.u8(),
                    ..Default::default()
                };
                for e in s.leg_extension_cmm.iter_mut() {
                    *e = r.u16();
                }
                for f in s.leg_force_dn.iter_mut() {
                    *f = r.u16();
                }
                s.tool_r_dmm = r.u16();
                s.tool_theta_cdeg = r.u16();
                s.tool_z_dmm = r.i16();
                s.arm_deployed = r.u8();
                s.cartridge_fill_dmm3 = r.u32();
                s.cartridge_capacity_dmm3 = r.u32();
                s.sensor_dmm = r.i32();
                s.joint = r.u16();
                Message::State(s)
            }
            JOINT_MAP => {
                let joint = r.u16();
                Message::JointMap(JointMap { joint, corrosion: r.take(), coverage: r.take() })
            }
            EVENT => {
                let b = r.u8();
                let code = EventCode::from_code(b).map_or_else(|| out_of_range("event code", b), Ok)?;
                let detail = String::from_utf8_lossy(r.bytes).into_owned();
                Message::Event(EventTelemetry { code, detail })
            }
            ACK => Message::Ack { seq: r.u16(), status: r.u8() },
            _ => unreachable!("type checked above"),
        };
        Ok(msg)
    }

    /// The simulator command this message requests, if it is one.
    pub fn to_command(&self) -> Option<Command> {
        Some(match *self {
            Message::Drive { left_mm_s, right_mm_s } => Command::Drive { left_mm_s, right_mm_s },
            Message::Mode { extend } => Command::Mode {
                target: if extend { PressTarget::Extended } else { PressTarget::Compressed },
            },
            Message::ToolSelect { kind } => Command::ToolSelect { kind },
            Message::ToolMove { r_mm, theta_cdeg, z_mm } => Command::ToolMove { r_mm, theta_cdeg, z_mm },
            Message::Inject { start } => Command::Inject { start },
            Message::Spatula => Command::Spatula,
            Message::Clean { passes, brush } => Command::Clean { passes, brush },
            Message::CartridgeLoad => Command::CartridgeLoad,
            Message::Lock { acquire } => Command::Lock { acquire },
            Message::Subscribe { mask } => Command::Subscribe { mask },
            Message::Estop => Command::Estop,
            Message::Heartbeat => Command::Heartbeat,
            _ => return None,
        })
    }

    /// Wire form of a command; internal commands have none.
    pub fn from_command(cmd: &Command) -> Option<Message> {
        Some(match *cmd {
            Command::Drive { left_mm_s, right_mm_s } => Message::Drive { left_mm_s, right_mm_s },
            Command::Mode { target } => Message::Mode { extend: target == PressTarget::Extended },
            Command::ToolSelect { kind } => Message::ToolSelect { kind },
            Command::ToolMove { r_mm, theta_cdeg, z_mm } => Message::ToolMove { r_mm, theta_cdeg, z_mm },
            Command::Inject { start } => Message::Inject { start },
            Command::Spatula => Message::Spatula,
            Command::Clean { passes, brush } => Message::Clean { passes, brush },
            Command::CartridgeLoad => Message::CartridgeLoad,
            Command::Lock { acquire } => Message::Lock { acquire },
            Command::Subscribe { mask } => Message::Subscribe { mask },
            Command::Estop => Message::Estop,
            Command::Heartbeat => Message::Heartbeat,
            Command::Halt | Command::BeginAlign | Command::Complete | Command::Abort { .. } => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drive_layout() {
        let bytes = Message::Drive { left_mm_s: 100, right_mm_s: -100 }.encode(1).unwrap();
        assert_eq!(hex::encode(&bytes[..12]), "44570101000100040064ff9c");
    }

    #[test]
    fn theta_boundary() {
        let ok = Message::ToolMove { r_mm: 500, theta_cdeg: 35_999, z_mm: 0 };
        assert!(ok.encode(0).is_ok());
        let bad = Message::ToolMove { r_mm: 500, theta_cdeg: 36_000, z_mm: 0 };
        assert_eq!(bad.encode(0), Err(CodecError::OutOfRange { field: "theta_cdeg", value: 36_000 }));
    }

    #[test]
    fn wheel_limit() {
        assert!(Message::Drive { left_mm_s: 300, right_mm_s: -300 }.encode(0).is_ok());
        assert!(Message::Drive { left_mm_s: 301, right_mm_s: 0 }.encode(0).is_err());
        let frame = Frame::new(msg_type::DRIVE, 0, vec![0x01, 0x2D, 0, 0]);
        assert!(matches!(Message::from_frame(&frame), Err(CodecError::OutOfRange { .. })));
    }

    #[test]
    fn unknown_and_bad_length() {
        assert_eq!(Message::from_frame(&Frame::new(0x42, 0, vec![])), Err(CodecError::UnknownType(0x42)));
        assert_eq!(
            Message::from_frame(&Frame::new(msg_type::MODE, 0, vec![])),
            Err(CodecError::BadLength { msg_type: 2, expected: 1, actual: 0 })
        );
    }

    #[test]
    fn state_round_trip() {
        let s = StateTelemetry {
            tick: 123_456,
            axial_dmm: 50_000,
            lateral_dmm: -12,
            yaw_e4: 7,
            mode: 1,
            mission: 3,
            tool_kind: NO_TOOL,
            leg_extension_cmm: [20_000; 6],
            leg_force_dn: [2000, 2100, 1900, 2000, 2000, 2000],
            sensor_dmm: SENSOR_NONE,
            joint: NO_JOINT,
            ..Default::default()
        };
        let bytes = Message::State(s).encode(9).unwrap();
        assert_eq!(bytes.len(), 8 + STATE_LEN + 4);
        let (frames, _) = super::super::frame::decode_all(&bytes);
        assert_eq!(Message::from_frame(&frames[0]).unwrap(), Message::State(s));
    }

    #[test]
    fn event_detail_truncated_on_char_boundary() {
        let long = "é".repeat(600);
        let msg = Message::Event(EventTelemetry { code: EventCode::Fault, detail: long });
        let payload = msg.payload().unwrap();
        assert!(payload.len() <= MAX_PAYLOAD);
        assert!(std::str::from_utf8(&payload[1..]).is_ok());
    }

    #[test]
    fn internal_commands_have_no_wire_form() {
        assert_eq!(Message::from_command(&Command::Halt), None);
        let m = Message::Clean { passes: 2, brush: ToolKind::BrushTapered };
        assert_eq!(Message::from_command(&m.to_command().unwrap()), Some(m));
    }
}
