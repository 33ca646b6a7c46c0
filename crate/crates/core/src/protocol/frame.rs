use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x44, 0x57];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 8;
pub const CRC_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1024;
pub const MAX_FRAME: usize = HEADER_LEN + MAX_PAYLOAD + CRC_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub seq: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    TooLong(usize),
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

impl Frame {
    pub fn new(msg_type: u8, seq: u16, payload: Vec<u8>) -> Self {
        Frame { msg_type, seq, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let len = self.payload.len();
        if len > MAX_PAYLOAD {
            return Err(FrameError::TooLong(len));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + len + CRC_LEN);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(len as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        Ok(out)
    }
}

/// Incremental frame reader for a byte stream.
///
/// Garbage before a magic is skipped. A frame whose CRC fails is dropped and
/// scanning resumes just past its magic, so a corrupted frame costs at most
/// the bytes up to the next good magic.
#[derive(Debug, Default, Clone)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    pub crc_errors: u64,
    pub skipped_bytes: u64,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> &[u8] {
        &self.buf
    }

    fn discard(&mut self, n: usize) {
        self.buf.drain(..n);
        self.skipped_bytes += n as u64;
    }

    pub fn next_frame(&mut self) -> Option<Frame> {
        loop {
            match self.buf.windows(2).position(|w| w == MAGIC) {
                Some(0) => {}
                Some(i) => self.discard(i),
                None => {
                    // keep a trailing 0x44 that may start the next magic
                    let keep = usize::from(self.buf.last() == Some(&MAGIC[0]));
                    let n = self.buf.len() - keep;
                    self.discard(n);
                    return None;
                }
            }
            if self.buf.len() < HEADER_LEN {
                return None;
            }
            let len = u16::from_be_bytes([self.buf[6], self.buf[7]]) as usize;
            if self.buf[2] != VERSION || len > MAX_PAYLOAD {
                self.discard(2);
                continue;
            }
            let total = HEADER_LEN + len + CRC_LEN;
            if self.buf.len() < total {
                return None;
            }
            let body = &self.buf[..HEADER_LEN + len];
            let crc = u32::from_be_bytes(self.buf[HEADER_LEN + len..total].try_into().expect("4 bytes"));
            if crc32(body) != crc {
                self.crc_errors += 1;
                self.discard(2);
                continue;
            }
            let frame = Frame {
                msg_type: self.buf[3],
                seq: u16::from_be_bytes([self.buf[4], self.buf[5]]),
                payload: self.buf[HEADER_LEN..HEADER_LEN + len].to_vec(),
            };
            self.buf.drain(..total);
            return Some(frame);
        }
    }
}

/// Decode every complete frame in `bytes`; returns the frames and the
/// unconsumed tail (a partial frame).
pub fn decode_all(bytes: &[u8]) -> (Vec<Frame>, Vec<u8>) {
    let mut dec = FrameDecoder::new();
    dec.push(bytes);
    let frames = std::iter::from_fn(|| dec.next_frame()).collect();
    (frames, dec.buf)
}

impl Iterator for FrameDecoder {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        self.next_frame()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_bytes() {
        let bytes = Frame::new(0x0F, 0, vec![]).encode().unwrap();
        assert_eq!(hex::encode(bytes), "4457010f00000000678b8033");
    }

    #[test]
    fn too_long_payload() {
        assert_eq!(Frame::new(1, 0, vec![0; 1025]).encode(), Err(FrameError::TooLong(1025)));
        assert!(Frame::new(1, 0, vec![0; 1024]).encode().is_ok());
    }

    #[test]
    fn partial_frame_retained() {
        let bytes = Frame::new(0x0F, 3, vec![]).encode().unwrap();
        let (frames, rest) = decode_all(&bytes[..7]);
        assert!(frames.is_empty());
        assert_eq!(rest, &bytes[..7]);
    }

    #[test]
    fn prefix_skipped_and_both_decoded() {
        let a = Frame::new(0x0F, 1, vec![]);
        let b = Frame::new(0x01, 2, vec![0, 100, 0xFF, 0x9C]);
        let mut stream = vec![0x00, 0x44, 0x13];
        stream.extend(a.encode().unwrap());
        stream.extend(b.encode().unwrap());
        let (frames, rest) = decode_all(&stream);
        assert_eq!(frames, vec![a, b]);
        assert!(rest.is_empty());
    }

    #[test]
    fn corrupt_frame_dropped_then_recovers() {
        let a = Frame::new(0x01, 1, vec![0, 100, 0, 100]);
        let b = Frame::new(0x0F, 2, vec![]);
        let mut stream = a.encode().unwrap();
        stream[9] ^= 0x10;
        stream.extend(b.encode().unwrap());
        let mut dec = FrameDecoder::new();
        dec.push(&stream);
        assert_eq!(dec.next_frame(), Some(b));
        assert_eq!(dec.crc_errors, 1);
    }

    #[test]
    fn bad_version_resyncs() {
        let mut stream = Frame::new(0x0F, 1, vec![]).encode().unwrap();
        stream[2] = 2;
        let good = Frame::new(0x0F, 2, vec![]);
        stream.extend(good.encode().unwrap());
        assert_eq!(decode_all(&stream).0, vec![good]);
    }
}
