//! Binary framing, message layouts and telemetry snapshots. See
//! `docs/protocol.md` for the byte-level description.

mod frame;
mod message;
mod telemetry;

pub use frame::{crc32, decode_all, Frame, FrameDecoder, FrameError, CRC_LEN, HEADER_LEN, MAGIC, MAX_FRAME, MAX_PAYLOAD, VERSION};
pub use message::{
    msg_type, tool_kind_code, tool_kind_from_code, topic, CodecError, EventCode, EventTelemetry, JointMap, Message,
    StateTelemetry, JOINT_MAP_LEN, MAP_SECTORS, MAX_THETA_CDEG, NO_JOINT, NO_TOOL, SENSOR_NONE, STATE_LEN, STATUS_OK,
};
pub use telemetry::{dequantize_unit, event_telemetry, joint_map, quantize_unit, state_telemetry};
