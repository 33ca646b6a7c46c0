use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use pipebot_core::mission::{MissionPlan, MissionState, NackCode};
use pipebot_core::protocol::{msg_type, topic, EventCode, Frame, FrameDecoder, Message, StateTelemetry, STATUS_OK};
use pipebot_core::Scenario;
use pipebot_server::{ServeOptions, Server, ShutdownHandle};

const WAIT: Duration = Duration::from_secs(20);

struct Running {
    addr: SocketAddr,
    bridge: SocketAddr,
    stop: ShutdownHandle,
    handle: std::thread::JoinHandle<std::io::Result<pipebot_server::ServeSummary>>,
}

fn start(tick_period: Duration, autopilot: bool) -> Running {
    let scenario = Scenario::default_mission();
    let opts = ServeOptions {
        port: 0,
        bridge_port: 0,
        tick_period,
        autopilot: autopilot.then(|| MissionPlan::all_joints(&scenario)),
        ..Default::default()
    };
    let server = Server::bind(scenario, opts).unwrap();
    let addr = server.local_addr().unwrap();
    let bridge = server.bridge_addr().unwrap();
    let stop = server.shutdown_handle();
    let handle = server.spawn(None);
    Running { addr, bridge, stop, handle }
}

impl Running {
    fn finish(self) -> pipebot_server::ServeSummary {
        self.stop.shutdown();
        self.handle.join().unwrap().unwrap()
    }
}

struct Client {
    stream: TcpStream,
    decoder: FrameDecoder,
    seq: u16,
}

impl Client {
    fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        Client { stream, decoder: FrameDecoder::new(), seq: 0 }
    }

    fn send(&mut self, msg: Message) -> u16 {
        self.seq += 1;
        self.stream.write_all(&msg.encode(self.seq).unwrap()).unwrap();
        self.seq
    }

    fn send_raw(&mut self, frame: Frame) {
        self.stream.write_all(&frame.encode().unwrap()).unwrap();
    }

    fn next(&mut self, deadline: Instant) -> Option<Message> {
        loop {
            if let Some(frame) = self.decoder.next_frame() {
                return Some(Message::from_frame(&frame).unwrap());
            }
            if Instant::now() > deadline {
                return None;
            }
            let mut buf = [0u8; 8192];
            match self.stream.read(&mut buf) {
                Ok(0) => return None,
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(_) => {}
            }
        }
    }

    fn wait_for<T>(&mut self, mut pick: impl FnMut(&Message) -> Option<T>) -> T {
        let deadline = Instant::now() + WAIT;
        while let Some(msg) = self.next(deadline) {
            if let Some(v) = pick(&msg) {
                return v;
            }
        }
        panic!("timed out waiting for message");
    }

    fn status_of(&mut self, seq: u16) -> u8 {
        self.wait_for(|m| match m {
            Message::Ack { seq: s, status } if *s == seq => Some(*status),
            _ => None,
        })
    }

    fn state(&mut self) -> StateTelemetry {
        self.wait_for(|m| match m {
            Message::State(s) => Some(*s),
            _ => None,
        })
    }
}

#[test]
fn heartbeat_is_acked() {
    let server = start(Duration::from_millis(20), false);
    let mut c = Client::connect(server.addr);
    let seq = c.send(Message::Heartbeat);
    assert_eq!(c.status_of(seq), STATUS_OK);
    server.finish();
}

#[test]
fn commands_without_lock_are_rejected() {
    let server = start(Duration::from_millis(5), false);
    let mut a = Client::connect(server.addr);
    let mut b = Client::connect(server.addr);
    let seq = a.send(Message::Lock { acquire: true });
    assert_eq!(a.status_of(seq), STATUS_OK);
    let seq = b.send(Message::Drive { left_mm_s: 100, right_mm_s: 100 });
    assert_eq!(b.status_of(seq), NackCode::Locked.code());
    let seq = b.send(Message::Lock { acquire: true });
    assert_eq!(b.status_of(seq), NackCode::Locked.code());
    let seq = a.send(Message::Drive { left_mm_s: 100, right_mm_s: 100 });
    assert_eq!(a.status_of(seq), STATUS_OK);
    server.finish();
}

#[test]
fn lock_holder_disconnect_halts_drive() {
    let server = start(Duration::from_millis(5), false);
    let mut a = Client::connect(server.addr);
    let mut b = Client::connect(server.addr);
    let seq = a.send(Message::Lock { acquire: true });
    assert_eq!(a.status_of(seq), STATUS_OK);
    let seq = a.send(Message::Drive { left_mm_s: 150, right_mm_s: 150 });
    assert_eq!(a.status_of(seq), STATUS_OK);
    b.wait_for(|m| matches!(m, Message::State(s) if s.left_mm_s == 150).then_some(()));
    drop(a);
    b.wait_for(|m| matches!(m, Message::Event(e) if e.code == EventCode::LockChanged && e.detail == "released").then_some(()));
    let s = b.state();
    assert_eq!((s.left_mm_s, s.right_mm_s), (0, 0));
    let seq = b.send(Message::Lock { acquire: true });
    assert_eq!(b.status_of(seq), STATUS_OK);
    server.finish();
}

#[test]
fn unknown_type_is_nacked_not_disconnected() {
    let server = start(Duration::from_millis(5), false);
    let mut c = Client::connect(server.addr);
    c.send_raw(Frame::new(0x42, 77, vec![]));
    assert_eq!(c.status_of(77), NackCode::UnknownType.code());
    c.send_raw(Frame::new(msg_type::MODE, 78, vec![0, 0]));
    assert_eq!(c.status_of(78), NackCode::BadLength.code());
    c.send_raw(Frame::new(msg_type::TOOL_MOVE, 79, vec![1, 244, 0x8C, 0xA0, 0, 0]));
    assert_eq!(c.status_of(79), NackCode::OutOfRange.code());
    let seq = c.send(Message::Heartbeat);
    assert_eq!(c.status_of(seq), STATUS_OK);
    server.finish();
}

#[test]
fn state_stream_is_gapless() {
    let server = start(Duration::from_millis(2), false);
    let mut c = Client::connect(server.addr);
    let first = c.state().tick;
    for k in 1..200 {
        assert_eq!(c.state().tick, first + k);
    }
    server.finish();
}

#[test]
fn ticks_with_no_sessions() {
    let server = start(Duration::from_millis(2), false);
    std::thread::sleep(Duration::from_millis(100));
    let summary = server.finish();
    assert!(summary.ticks > 5);
    assert_eq!(summary.sessions, 0);
}

#[test]
fn bridge_carries_the_same_frames() {
    let server = start(Duration::from_millis(5), false);
    let url = format!("ws://{}/", server.bridge);
    let (mut ws, _) = tungstenite::connect(url).unwrap();
    let bytes = Message::Heartbeat.encode(9).unwrap();
    ws.send(tungstenite::Message::Binary(bytes.into())).unwrap();
    let deadline = Instant::now() + WAIT;
    let mut acked = false;
    while Instant::now() < deadline && !acked {
        if let tungstenite::Message::Binary(b) = ws.read().unwrap() {
            let mut dec = FrameDecoder::new();
            dec.push(&b);
            let frames: Vec<Frame> = dec.by_ref().collect();
            assert_eq!(frames.len(), 1, "one frame per bridge message");
            assert!(dec.pending().is_empty());
            acked = matches!(Message::from_frame(&frames[0]).unwrap(), Message::Ack { seq: 9, status: STATUS_OK });
        }
    }
    assert!(acked);
    let _ = ws.close(None);
    server.finish();
}

#[test]
fn autopilot_runs_while_observers_are_read_only() {
    let server = start(Duration::from_millis(1), true);
    let mut c = Client::connect(server.addr);
    let seq = c.send(Message::Subscribe { mask: topic::STATE | topic::EVENT });
    assert_eq!(c.status_of(seq), STATUS_OK);
    let seq = c.send(Message::Drive { left_mm_s: 10, right_mm_s: 10 });
    assert_eq!(c.status_of(seq), NackCode::Locked.code());
    let start_axial = c.state().axial_dmm;
    c.wait_for(|m| matches!(m, Message::State(s) if s.axial_dmm > start_axial + 1000).then_some(()));

    // taking the lock disengages the autopilot and stops the robot
    let seq = c.send(Message::Lock { acquire: true });
    assert_eq!(c.status_of(seq), STATUS_OK);
    c.wait_for(|m| matches!(m, Message::State(s) if s.left_mm_s == 0 && s.right_mm_s == 0).then_some(()));
    let a = c.state().axial_dmm;
    for _ in 0..20 {
        assert_eq!(c.state().axial_dmm, a);
    }
    server.finish();
}

#[test]
fn shutdown_while_sealing_stops_injection() {
    let server = start(Duration::ZERO, true);
    let mut c = Client::connect(server.addr);
    let seq = c.send(Message::Subscribe { mask: topic::EVENT });
    assert_eq!(c.status_of(seq), STATUS_OK);
    c.wait_for(|m| matches!(m, Message::Event(e) if e.detail.ends_with("->SEALING")).then_some(()));
    let summary = server.finish();
    assert_eq!(summary.final_state, MissionState::ExtendedIdle);
}
