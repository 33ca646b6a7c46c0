//! Teleoperation server: raw TCP sessions and a WebSocket bridge carrying
//! the same frames, one operator lock, and per-tick telemetry fan-out.
//!
//! One thread owns the [`World`] and ticks it. Session threads only decode
//! frames and forward them over a channel; replies and telemetry travel back
//! as encoded bytes.

mod session;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{self, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use pipebot_core::mission::replay::Recorder;
use pipebot_core::mission::{Autopilot, Command, Envelope, Event, MissionPlan, MissionState, NackCode, Source, World};
use pipebot_core::protocol::{
    event_telemetry, joint_map, state_telemetry, topic, CodecError, EventCode, EventTelemetry, Message, STATUS_OK,
};
use pipebot_core::Scenario;

pub use session::{Inbound, Transport};

pub const DEFAULT_PORT: u16 = 4857;
pub const DEFAULT_BRIDGE_PORT: u16 = 4858;
pub const TICK_PERIOD: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: IpAddr,
    pub port: u16,
    pub bridge_port: u16,
    /// Wall-clock time per tick; 20 ms runs in real time.
    pub tick_period: Duration,
    /// Run this plan until an operator takes the lock.
    pub autopilot: Option<MissionPlan>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            bridge_port: DEFAULT_BRIDGE_PORT,
            tick_period: TICK_PERIOD,
            autopilot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub final_state: MissionState,
    pub final_hash: String,
    pub sessions: u32,
}

/// Cloneable flag that asks a running server to stop after its current tick.
#[derive(Debug, Clone, Default)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_set(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct Server {
    scenario: Scenario,
    opts: ServeOptions,
    tcp: TcpListener,
    bridge: TcpListener,
    stop: ShutdownHandle,
}

struct Client {
    outbound: SyncSender<Vec<u8>>,
    subscriptions: u8,
    seq: u16,
}

impl Client {
    fn send(&mut self, msg: &Message) -> bool {
        self.seq = self.seq.wrapping_add(1);
        let Ok(bytes) = msg.encode(self.seq) else { return true };
        match self.outbound.try_send(bytes) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => false,
        }
    }
}

fn nack_for(err: &CodecError) -> NackCode {
    match err {
        CodecError::UnknownType(_) => NackCode::UnknownType,
        CodecError::BadLength { .. } | CodecError::Frame(_) => NackCode::BadLength,
        CodecError::OutOfRange { .. } => NackCode::OutOfRange,
    }
}

fn accept_loop(
    listener: TcpListener,
    transport: Transport,
    next_id: Arc<AtomicU32>,
    tx: SyncSender<Inbound>,
    stop: ShutdownHandle,
) {
    let _ = listener.set_nonblocking(true);
    while !stop.is_set() {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                let tx = tx.clone();
                let stop = stop.0.clone();
                thread::spawn(move || start_session(stream, transport, id, tx, stop));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn start_session(stream: TcpStream, transport: Transport, id: u32, tx: SyncSender<Inbound>, stop: Arc<AtomicBool>) {
    let (out_tx, out_rx) = mpsc::sync_channel(session::OUTBOUND_CAPACITY);
    match transport {
        Transport::Tcp => {
            if tx.send(Inbound::Open { id, transport, outbound: out_tx }).is_ok() {
                session::run_tcp(stream, id, out_rx, tx);
            }
        }
        Transport::WebSocket => {
            let Ok(ws) = tungstenite::accept(stream) else { return };
            if tx.send(Inbound::Open { id, transport, outbound: out_tx }).is_ok() {
                session::run_websocket(ws, id, out_rx, tx, stop);
            }
        }
    }
}

impl Server {
    /// Bind both listeners; fails when a port is taken.
    pub fn bind(scenario: Scenario, opts: ServeOptions) -> io::Result<Server> {
        let tcp = TcpListener::bind(SocketAddr::new(opts.bind, opts.port))?;
        let bridge = TcpListener::bind(SocketAddr::new(opts.bind, opts.bridge_port))?;
        Ok(Server { scenario, opts, tcp, bridge, stop: ShutdownHandle::default() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.tcp.local_addr()
    }

    pub fn bridge_addr(&self) -> io::Result<SocketAddr> {
        self.bridge.local_addr()
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        self.stop.clone()
    }

    /// Run on a background thread.
    pub fn spawn(self, log: Option<Box<dyn Write + Send>>) -> JoinHandle<io::Result<ServeSummary>> {
        thread::spawn(move || self.run(log))
    }

    /// Tick until shut down. The final tick halts every actuator.
    pub fn run(self, log: Option<Box<dyn Write + Send>>) -> io::Result<ServeSummary> {
        let Server { scenario, opts, tcp, bridge, stop } = self;
        let (tx, rx) = mpsc::sync_channel::<Inbound>(4096);
        let next_id = Arc::new(AtomicU32::new(1));
        let acceptors = [(tcp, Transport::Tcp), (bridge, Transport::WebSocket)].map(|(listener, transport)| {
            let (tx, ids, stop) = (tx.clone(), next_id.clone(), stop.clone());
            thread::spawn(move || accept_loop(listener, transport, ids, tx, stop))
        });
        drop(tx);

        let mut recorder = match log {
            Some(w) => Some(Recorder::new(w, &scenario)?),
            None => None,
        };
        let mut hub = Hub::new(&scenario, opts.autopilot.clone());
        let mut deadline = Instant::now();
        loop {
            let stopping = stop.is_set();
            hub.drain(&rx);
            if stopping {
                hub.queue.push_back(Envelope { source: Source::Local, seq: 0, command: Command::Halt });
                hub.autopilot = None;
            }
            let tick = hub.world.tick_index();
            let applied = hub.step();
            if let Some(rec) = recorder.as_mut() {
                rec.record_tick(tick, &applied, &hub.world)?;
            }
            if stopping {
                break;
            }
            deadline += opts.tick_period;
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            } else if now - deadline > opts.tick_period * 50 {
                deadline = now;
            }
        }

        hub.clients.clear();
        for handle in acceptors {
            let _ = handle.join();
        }
        if let Some(rec) = recorder {
            rec.finish(&hub.world)?;
        }
        Ok(ServeSummary {
            ticks: hub.world.tick_index(),
            final_state: hub.world.state(),
            final_hash: hub.world.state_hash(),
            sessions: next_id.load(Ordering::SeqCst) - 1,
        })
    }
}

/// State owned by the tick thread.
struct Hub {
    world: World,
    autopilot: Option<Autopilot>,
    autopilot_seq: u16,
    last_events: Vec<Event>,
    clients: BTreeMap<u32, Client>,
    lock: Option<u32>,
    queue: VecDeque<Envelope>,
}

impl Hub {
    fn new(scenario: &Scenario, plan: Option<MissionPlan>) -> Self {
        Hub {
            world: World::new(scenario),
            autopilot: plan.map(Autopilot::new),
            autopilot_seq: 0,
            last_events: Vec::new(),
            clients: BTreeMap::new(),
            lock: None,
            queue: VecDeque::new(),
        }
    }

    fn reply(&mut self, id: u32, seq: u16, status: u8) {
        self.send_to(id, &Message::Ack { seq, status });
    }

    fn send_to(&mut self, id: u32, msg: &Message) {
        if let Some(c) = self.clients.get_mut(&id) {
            if !c.send(msg) {
                self.clients.remove(&id);
                self.on_closed(id);
            }
        }
    }

    fn broadcast(&mut self, mask: u8, msg: &Message) {
        let mut dead = Vec::new();
        for (&id, c) in self.clients.iter_mut() {
            if c.subscriptions & mask != 0 && !c.send(msg) {
                dead.push(id);
            }
        }
        for id in dead {
            self.clients.remove(&id);
            self.on_closed(id);
        }
    }

    fn lock_event(&mut self) {
        let detail = match self.lock {
            Some(id) => format!("held by session {id}"),
            None => "released".to_string(),
        };
        self.broadcast(topic::EVENT, &Message::Event(EventTelemetry { code: EventCode::LockChanged, detail }));
    }

    fn on_closed(&mut self, id: u32) {
        if self.lock == Some(id) {
            self.lock = None;
            // dead-man: the operator is gone
            self.queue.push_back(Envelope { source: Source::Local, seq: 0, command: Command::Halt });
            self.lock_event();
        }
    }

    fn drain(&mut self, rx: &Receiver<Inbound>) {
        while let Ok(msg) = rx.try_recv() {
            self.handle(msg);
        }
    }

    fn handle(&mut self, inbound: Inbound) {
        match inbound {
            Inbound::Open { id, outbound, .. } => {
                self.clients.insert(id, Client { outbound, subscriptions: topic::ALL, seq: 0 });
                for j in 0..self.world.pipe.joints.len() {
                    if let Some(map) = joint_map(&self.world, j) {
                        self.send_to(id, &Message::JointMap(map));
                    }
                }
            }
            Inbound::Closed { id } => {
                self.clients.remove(&id);
                self.on_closed(id);
            }
            Inbound::CrcError { id } => {
                let ev = EventTelemetry { code: EventCode::CrcError, detail: "frame dropped: CRC mismatch".into() };
                self.send_to(id, &Message::Event(ev));
            }
            Inbound::Frame { id, frame } => {
                let seq = frame.seq;
                let msg = match Message::from_frame(&frame) {
                    Ok(m) if m.is_command() => m,
                    Ok(_) => return self.reply(id, seq, NackCode::UnknownType.code()),
                    Err(e) => return self.reply(id, seq, nack_for(&e).code()),
                };
                match msg {
                    Message::Lock { acquire: true } => {
                        if self.lock.is_some_and(|holder| holder != id) {
                            return self.reply(id, seq, NackCode::Locked.code());
                        }
                        let changed = self.lock != Some(id);
                        self.lock = Some(id);
                        if self.autopilot.take().is_some() {
                            self.queue.push_back(Envelope { source: Source::Local, seq: 0, command: Command::Halt });
                        }
                        self.reply(id, seq, STATUS_OK);
                        if changed {
                            self.lock_event();
                        }
                    }
                    Message::Lock { acquire: false } => {
                        if self.lock.is_some_and(|holder| holder != id) {
                            return self.reply(id, seq, NackCode::Locked.code());
                        }
                        let changed = self.lock.take().is_some();
                        self.reply(id, seq, STATUS_OK);
                        if changed {
                            self.lock_event();
                        }
                    }
                    Message::Subscribe { mask } => {
                        if let Some(c) = self.clients.get_mut(&id) {
                            c.subscriptions = mask;
                        }
                        self.reply(id, seq, STATUS_OK);
                    }
                    Message::Heartbeat | Message::Estop => self.enqueue(id, seq, &msg),
                    _ if self.lock != Some(id) => self.reply(id, seq, NackCode::Locked.code()),
                    _ => self.enqueue(id, seq, &msg),
                }
            }
        }
    }

    fn enqueue(&mut self, id: u32, seq: u16, msg: &Message) {
        let command = msg.to_command().expect("command message");
        self.queue.push_back(Envelope { source: Source::Session(id), seq, command });
    }

    /// One tick: autopilot, world, then replies and telemetry. Returns the
    /// commands the world consumed.
    fn step(&mut self) -> Vec<Envelope> {
        if let Some(pilot) = self.autopilot.as_mut() {
            for command in pilot.step(&self.world, &self.last_events) {
                self.autopilot_seq = self.autopilot_seq.wrapping_add(1);
                self.queue.push_back(Envelope { source: Source::Autopilot, seq: self.autopilot_seq, command });
            }
        }
        let applied: Vec<Envelope> = self.queue.iter().cloned().collect();
        let mut queue = std::mem::take(&mut self.queue);
        let events = self.world.tick(&mut queue);

        let mut touched = BTreeSet::new();
        for ev in &events {
            match ev {
                Event::Ack { source: Source::Session(id), seq } => self.reply(*id, *seq, STATUS_OK),
                Event::Nack { source: Source::Session(id), seq, code, .. } => self.reply(*id, *seq, code.code()),
                Event::JointUpdated { joint } => {
                    touched.insert(*joint);
                }
                _ => {}
            }
            if let Some(t) = event_telemetry(&self.world, ev) {
                self.broadcast(topic::EVENT, &Message::Event(t));
            }
        }
        for j in touched {
            if let Some(map) = joint_map(&self.world, j) {
                self.broadcast(topic::JOINT_MAP, &Message::JointMap(map));
            }
        }
        let state = Message::State(state_telemetry(&self.world));
        self.broadcast(topic::STATE, &state);
        self.last_events = events;
        applied
    }
}
