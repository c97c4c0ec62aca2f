//! Payload layouts for each message type. All integers and floats are
//! little-endian; job ids are 16 raw bytes.

use super::tensor::{decode_tensor_prefix, encode_tensor_into, TensorPayload};
use super::WireError;
use crate::scheduler::JobId;

/// Numeric codes carried in ERROR frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    BadMagic = 0x0001,
    UnsupportedVersion = 0x0002,
    UnknownMessageType = 0x0003,
    MalformedPayload = 0x0004,
    UnexpectedMessage = 0x0005,
    DuplicateJob = 0x0006,
    PayloadTooLarge = 0x0007,
    Internal = 0x00FF,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            0x0001 => ErrorCode::BadMagic,
            0x0002 => ErrorCode::UnsupportedVersion,
            0x0003 => ErrorCode::UnknownMessageType,
            0x0004 => ErrorCode::MalformedPayload,
            0x0005 => ErrorCode::UnexpectedMessage,
            0x0006 => ErrorCode::DuplicateJob,
            0x0007 => ErrorCode::PayloadTooLarge,
            0x00FF => ErrorCode::Internal,
            _ => return None,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(WireError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn job_id(&mut self) -> Result<JobId, WireError> {
        Ok(JobId(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::LengthMismatch {
                expected: self.pos,
                actual: self.buf.len(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRequestMsg {
    pub job_id: JobId,
    pub r_dev: f64,
    pub k_decode: f64,
    pub t_lim: f64,
    pub prompt: Vec<u8>,
}

impl JobRequestMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + self.prompt.len());
        out.extend_from_slice(&self.job_id.0);
        out.extend_from_slice(&self.r_dev.to_le_bytes());
        out.extend_from_slice(&self.k_decode.to_le_bytes());
        out.extend_from_slice(&self.t_lim.to_le_bytes());
        out.extend_from_slice(&(self.prompt.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.prompt);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(buf);
        let job_id = r.job_id()?;
        let r_dev = r.f64()?;
        let k_decode = r.f64()?;
        let t_lim = r.f64()?;
        let len = r.u32()? as usize;
        let prompt = r.take(len)?.to_vec();
        r.finish()?;
        Ok(Self {
            job_id,
            r_dev,
            k_decode,
            t_lim,
            prompt,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobAcceptMsg {
    pub job_id: JobId,
    pub n_final: u32,
    pub predicted_total_s: f64,
}

impl JobAcceptMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28);
        out.extend_from_slice(&self.job_id.0);
        out.extend_from_slice(&self.n_final.to_le_bytes());
        out.extend_from_slice(&self.predicted_total_s.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(buf);
        let msg = Self {
            job_id: r.job_id()?,
            n_final: r.u32()?,
            predicted_total_s: r.f64()?,
        };
        r.finish()?;
        Ok(msg)
    }
}

/// Tensors handed from cloud to device at the split point.
///
/// ```text
/// job_id: 16 | cloud_compute_s: f64 | n_tensors: u8 | tensors... | checksum: u64
/// ```
///
/// The checksum is FNV-1a 64 over every byte that precedes it.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateMsg {
    pub job_id: JobId,
    pub cloud_compute_s: f64,
    pub tensors: Vec<TensorPayload>,
}

impl IntermediateMsg {
    pub fn encode(&self) -> Vec<u8> {
        let body: usize = self.tensors.iter().map(TensorPayload::encoded_len).sum();
        let mut out = Vec::with_capacity(33 + body + 8);
        out.extend_from_slice(&self.job_id.0);
        out.extend_from_slice(&self.cloud_compute_s.to_le_bytes());
        out.push(self.tensors.len() as u8);
        for t in &self.tensors {
            encode_tensor_into(t, &mut out);
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < 8 {
            return Err(WireError::Truncated {
                needed: 8,
                available: buf.len(),
            });
        }
        let (body, tail) = buf.split_at(buf.len() - 8);
        let expected = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a64(body) != expected {
            return Err(WireError::ChecksumMismatch);
        }
        let mut r = Reader::new(body);
        let job_id = r.job_id()?;
        let cloud_compute_s = r.f64()?;
        let count = r.u8()?;
        let mut rest = r.rest();
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let (t, used) = decode_tensor_prefix(rest)?;
            tensors.push(t);
            rest = &rest[used..];
        }
        if !rest.is_empty() {
            return Err(WireError::LengthMismatch {
                expected: body.len() - rest.len(),
                actual: body.len(),
            });
        }
        Ok(Self {
            job_id,
            cloud_compute_s,
            tensors,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompleteMsg {
    pub job_id: JobId,
    pub client_seconds: f64,
}

impl CompleteMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24);
        out.extend_from_slice(&self.job_id.0);
        out.extend_from_slice(&self.client_seconds.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(buf);
        let msg = Self {
            job_id: r.job_id()?,
            client_seconds: r.f64()?,
        };
        r.finish()?;
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMsg {
    pub code: u16,
    pub message: String,
}

impl ErrorMsg {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code: code as u16,
            message: message.into(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.message.len());
        out.extend_from_slice(&self.code.to_le_bytes());
        out.extend_from_slice(self.message.as_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(buf);
        let code = r.u16()?;
        let message = String::from_utf8_lossy(r.rest()).into_owned();
        Ok(Self { code, message })
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
