use std::io::{self, Read, Write};

use super::WireError;

pub const MAGIC: [u8; 4] = *b"SPLT";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    JobRequest = 0x01,
    JobAccept = 0x02,
    Intermediate = 0x03,
    Complete = 0x04,
    Error = 0x05,
    ProbeEcho = 0x06,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x01 => MsgType::JobRequest,
            0x02 => MsgType::JobAccept,
            0x03 => MsgType::Intermediate,
            0x04 => MsgType::Complete,
            0x05 => MsgType::Error,
            0x06 => MsgType::ProbeEcho,
            other => return Err(WireError::UnknownMessageType(other)),
        })
    }
}

/// One protocol message: a 12-byte header followed by `payload`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&encode_header(self.msg_type, self.payload.len() as u32));
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one frame from the front of `buf`, returning it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), WireError> {
        let header: &[u8; HEADER_LEN] = buf
            .get(..HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or(WireError::Truncated {
                needed: HEADER_LEN,
                available: buf.len(),
            })?;
        let (msg_type, len) = parse_header(header)?;
        let end = HEADER_LEN + len as usize;
        let payload = buf.get(HEADER_LEN..end).ok_or(WireError::Truncated {
            needed: end,
            available: buf.len(),
        })?;
        Ok((Frame::new(msg_type, payload.to_vec()), end))
    }
}

pub fn encode_header(msg_type: MsgType, payload_len: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4] = VERSION;
    h[5] = msg_type as u8;
    // h[6..8]: reserved flags, zero
    h[8..12].copy_from_slice(&payload_len.to_le_bytes());
    h
}

/// Validates a header and returns the message type and payload length.
pub fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, u32), WireError> {
    let magic: [u8; 4] = h[..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::UnsupportedVersion(h[4]));
    }
    let msg_type = MsgType::try_from(h[5])?;
    let flags = u16::from_le_bytes([h[6], h[7]]);
    if flags != 0 {
        return Err(WireError::ReservedFlags(flags));
    }
    let len = u32::from_le_bytes(h[8..12].try_into().expect("4-byte slice"));
    if len > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(u64::from(len)));
    }
    Ok((msg_type, len))
}

/// Writes header and payload without concatenating them first.
pub fn write_frame<W: Write>(
    w: &mut W,
    msg_type: MsgType,
    payload: &[u8],
) -> Result<(), WireError> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_PAYLOAD)
        .ok_or(WireError::PayloadTooLarge(payload.len() as u64))?;
    w.write_all(&encode_header(msg_type, len))?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<(MsgType, u32), WireError> {
    let mut h = [0u8; HEADER_LEN];
    read_exact(r, &mut h)?;
    parse_header(&h)
}

/// Reads exactly `len` payload bytes, growing the buffer as data arrives so a
/// lying length field cannot force a large up-front allocation.
pub fn read_payload<R: Read>(r: &mut R, len: u32) -> Result<Vec<u8>, WireError> {
    let mut payload = Vec::with_capacity((len as usize).min(1 << 20));
    let got = r.take(u64::from(len)).read_to_end(&mut payload)?;
    if got < len as usize {
        return Err(WireError::Truncated {
            needed: len as usize,
            available: got,
        });
    }
    Ok(payload)
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, WireError> {
    let (msg_type, len) = read_header(r)?;
    let payload = read_payload(r, len)?;
    Ok(Frame::new(msg_type, payload))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), WireError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(WireError::Truncated {
                    needed: buf.len(),
                    available: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
