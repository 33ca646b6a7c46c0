use pipebot_core::kinematics::PressTarget;
use pipebot_core::mission::Command;
use pipebot_core::protocol::{decode_all, FrameDecoder, Message};
use pipebot_core::tool_system::ToolKind;
use proptest::prelude::*;

fn tool() -> impl Strategy<Value = ToolKind> {
    prop_oneof![
        Just(ToolKind::BrushStraight),
        Just(ToolKind::BrushTapered),
        Just(ToolKind::Nozzle),
        Just(ToolKind::Spatula)
    ]
}

fn wire_command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (-300i16..=300, -300i16..=300).prop_map(|(left_mm_s, right_mm_s)| Command::Drive { left_mm_s, right_mm_s }),
        any::<bool>().prop_map(|e| Command::Mode {
            target: if e { PressTarget::Extended } else { PressTarget::Compressed }
        }),
        tool().prop_map(|kind| Command::ToolSelect { kind }),
        (any::<u16>(), 0u16..36000, any::<i16>())
            .prop_map(|(r_mm, theta_cdeg, z_mm)| Command::ToolMove { r_mm, theta_cdeg, z_mm }),
        any::<bool>().prop_map(|start| Command::Inject { start }),
        Just(Command::Spatula),
        (any::<u8>(), tool().prop_filter("brush", |k| k.is_brush()))
            .prop_map(|(passes, brush)| Command::Clean { passes, brush }),
        Just(Command::CartridgeLoad),
        any::<bool>().prop_map(|acquire| Command::Lock { acquire }),
        (0u8..8).prop_map(|mask| Command::Subscribe { mask }),
        Just(Command::Estop),
        Just(Command::Heartbeat),
    ]
}

proptest! {
    #[test]
    fn commands_survive_the_wire(cmd in wire_command(), seq in any::<u16>()) {
        let msg = Message::from_command(&cmd).unwrap();
        let (frames, rest) = decode_all(&msg.encode(seq).unwrap());
        prop_assert!(rest.is_empty());
        prop_assert_eq!(frames.len(), 1);
        prop_assert_eq!(frames[0].seq, seq);
        let back = Message::from_frame(&frames[0]).unwrap().to_command().unwrap();
        prop_assert_eq!(back, cmd);
    }

    #[test]
    fn chunking_does_not_change_decoding(
        cmds in prop::collection::vec(wire_command(), 1..20),
        noise in prop::collection::vec(any::<u8>(), 0..16),
        chunk in 1usize..64,
    ) {
        let mut bytes = noise.clone();
        for (i, c) in cmds.iter().enumerate() {
            bytes.extend(Message::from_command(c).unwrap().encode(i as u16).unwrap());
        }
        let (whole, _) = decode_all(&bytes);
        let mut decoder = FrameDecoder::new();
        let mut pieces = Vec::new();
        for part in bytes.chunks(chunk) {
            decoder.push(part);
            pieces.extend(decoder.by_ref());
        }
        prop_assert_eq!(&whole, &pieces);
        // leading garbage may swallow at most the first frame
        prop_assert!(whole.len() + 1 >= cmds.len());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..2048)) {
        let (frames, _) = decode_all(&bytes);
        for f in frames {
            let _ = Message::from_frame(&f);
        }
    }
}
