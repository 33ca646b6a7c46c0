use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, SyncSender, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use pipebot_core::protocol::{Frame, FrameDecoder};
use tungstenite::{Message as WsMessage, WebSocket};

/// Outbound frames buffered per session before it is dropped as too slow.
pub const OUTBOUND_CAPACITY: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Tcp,
    WebSocket,
}

/// What session threads tell the tick loop.
#[derive(Debug)]
pub enum Inbound {
    Open { id: u32, transport: Transport, outbound: SyncSender<Vec<u8>> },
    Frame { id: u32, frame: Frame },
    CrcError { id: u32 },
    Closed { id: u32 },
}

fn forward(decoder: &mut FrameDecoder, id: u32, crc_seen: &mut u64, tx: &SyncSender<Inbound>) -> bool {
    while let Some(frame) = decoder.next_frame() {
        if tx.send(Inbound::Frame { id, frame }).is_err() {
            return false;
        }
    }
    while *crc_seen < decoder.crc_errors {
        *crc_seen += 1;
        if tx.send(Inbound::CrcError { id }).is_err() {
            return false;
        }
    }
    true
}

/// Serve one raw TCP connection: a reader on this thread, a writer on another.
pub fn run_tcp(stream: TcpStream, id: u32, outbound: Receiver<Vec<u8>>, tx: SyncSender<Inbound>) {
    let _ = stream.set_nodelay(true);
    if let Ok(mut writer) = stream.try_clone() {
        thread::spawn(move || {
            for bytes in outbound {
                if writer.write_all(&bytes).is_err() {
                    break;
                }
            }
            let _ = writer.shutdown(Shutdown::Both);
        });
    }
    let mut reader = stream;
    let mut decoder = FrameDecoder::new();
    let mut crc_seen = 0;
    let mut buf = [0u8; 4096];
    loop {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                decoder.push(&buf[..n]);
                if !forward(&mut decoder, id, &mut crc_seen, &tx) {
                    break;
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    let _ = reader.shutdown(Shutdown::Both);
    let _ = tx.send(Inbound::Closed { id });
}

/// Serve one WebSocket bridge connection; every binary message carries one frame.
pub fn run_websocket(
    mut ws: WebSocket<TcpStream>,
    id: u32,
    outbound: Receiver<Vec<u8>>,
    tx: SyncSender<Inbound>,
    stop: Arc<AtomicBool>,
) {
    let _ = ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)));
    let mut decoder = FrameDecoder::new();
    let mut crc_seen = 0;
    'session: loop {
        match ws.read() {
            Ok(WsMessage::Binary(bytes)) => {
                decoder.push(&bytes);
                if !forward(&mut decoder, id, &mut crc_seen, &tx) {
                    break;
                }
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match outbound.try_recv() {
                Ok(bytes) => {
                    if ws.send(WsMessage::Binary(bytes.into())).is_err() {
                        break 'session;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    break 'session;
                }
            }
        }
        if stop.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
    }
    let _ = ws.get_mut().shutdown(Shutdown::Both);
    let _ = tx.send(Inbound::Closed { id });
}
