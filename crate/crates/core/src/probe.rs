//! Codec and transfer cost measurement over square `side x side` f32 tensors.
//!
//! Every size is measured `reps` times; the first repetition is a warm-up and
//! is discarded, and the median of the rest is reported. Measurements run
//! strictly one after another so they do not disturb each other.

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::wire::client::connect;
use crate::wire::{
    decode_tensor, encode_tensor, read_frame, write_frame, ErrorMsg, MsgType, TensorPayload,
    WireError,
};

pub const MIN_REPS: usize = 3;
pub const PROBE_CSV_HEADER: &str = "side,payload_bytes,serialize_s,deserialize_s,roundtrip_s";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSample {
    pub side: u32,
    /// Encoded tensor size: 4 bytes per element plus the 10-byte tensor header.
    pub payload_bytes: usize,
    pub serialize_s: f64,
    pub deserialize_s: f64,
    /// `None` for codec-only measurements.
    pub roundtrip_s: Option<f64>,
    pub reps: usize,
}

/// Encoded size of a `side x side` f32 tensor.
pub fn payload_bytes(side: u32) -> usize {
    2 + 2 * 4 + 4 * side as usize * side as usize
}

/// Median of `samples` after dropping the first (warm-up) entry.
pub fn warm_median(samples: &[f64]) -> f64 {
    let mut rest: Vec<f64> = samples.iter().skip(1).copied().collect();
    assert!(!rest.is_empty(), "need at least two samples");
    rest.sort_by(f64::total_cmp);
    let mid = rest.len() / 2;
    if rest.len() % 2 == 1 {
        rest[mid]
    } else {
        (rest[mid - 1] + rest[mid]) / 2.0
    }
}

fn check_args(sides: &[u32], reps: usize) -> Result<(), ProbeError> {
    if reps < MIN_REPS {
        return Err(ProbeError::InvalidArgument(format!(
            "reps must be at least {MIN_REPS}, got {reps}"
        )));
    }
    if let Some(&side) = sides
        .iter()
        .find(|&&s| s == 0 || payload_bytes(s) > crate::wire::MAX_PAYLOAD as usize)
    {
        return Err(ProbeError::InvalidArgument(format!(
            "unsupported side {side}"
        )));
    }
    Ok(())
}

fn random_values(side: u32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(side));
    (0..side as usize * side as usize)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Times one encode (values to wire bytes) and one decode (wire bytes back to
/// values), checking that the round trip reproduces the source.
fn time_codec(side: u32, values: &[f32]) -> Result<(f64, f64, Vec<u8>), ProbeError> {
    let t0 = Instant::now();
    let tensor = TensorPayload::from_f32(vec![side, side], values)?;
    let bytes = encode_tensor(&tensor);
    let ser = secs(t0.elapsed());

    let t1 = Instant::now();
    let decoded = decode_tensor(&bytes)?.to_f32();
    let de = secs(t1.elapsed());

    if decoded.as_deref() != Some(values) {
        return Err(WireError::Protocol(format!("codec round trip differs at side {side}")).into());
    }
    Ok((ser, de, bytes))
}

fn codec_sample(side: u32, reps: usize) -> Result<(ProbeSample, Vec<u8>), ProbeError> {
    let values = random_values(side);
    let mut ser = Vec::with_capacity(reps);
    let mut de = Vec::with_capacity(reps);
    let mut encoded = Vec::new();
    for _ in 0..reps {
        let (s, d, bytes) = time_codec(side, &values)?;
        ser.push(s);
        de.push(d);
        encoded = bytes;
    }
    let sample = ProbeSample {
        side,
        payload_bytes: encoded.len(),
        serialize_s: warm_median(&ser),
        deserialize_s: warm_median(&de),
        roundtrip_s: None,
        reps,
    };
    Ok((sample, encoded))
}

/// Measures encode and decode cost for each side length.
pub fn probe_codec(sides: &[u32], reps: usize) -> Result<Vec<ProbeSample>, ProbeError> {
    check_args(sides, reps)?;
    sides
        .iter()
        .map(|&side| codec_sample(side, reps).map(|(s, _)| s))
        .collect()
}

/// Measures codec cost and echo round-trip time against a server, over a
/// single connection. Round trip covers writing the frame until the echoed
/// frame is fully read; the echo is checked byte for byte.
pub fn probe_transfer(
    endpoint: &str,
    sides: &[u32],
    reps: usize,
    timeout: Duration,
) -> Result<Vec<ProbeSample>, ProbeError> {
    check_args(sides, reps)?;
    let mut conn = connect(endpoint, timeout)?;
    let mut out = Vec::with_capacity(sides.len());
    for &side in sides {
        let (mut sample, payload) = codec_sample(side, reps)?;
        let mut rtts = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            write_frame(&mut conn, MsgType::ProbeEcho, &payload).map_err(WireError::normalize)?;
            let frame = read_frame(&mut conn).map_err(WireError::normalize)?;
            rtts.push(secs(t0.elapsed()));
            match frame.msg_type {
                MsgType::ProbeEcho if frame.payload == payload => {}
                MsgType::Error => {
                    let e = ErrorMsg::decode(&frame.payload)?;
                    return Err(WireError::Remote {
                        code: e.code,
                        message: e.message,
                    }
                    .into());
                }
                MsgType::ProbeEcho => {
                    return Err(WireError::Protocol(format!("echo differs at side {side}")).into())
                }
                got => {
                    return Err(WireError::UnexpectedMessage {
                        expected: MsgType::ProbeEcho,
                        got,
                    }
                    .into())
                }
            }
        }
        sample.roundtrip_s = Some(warm_median(&rtts));
        out.push(sample);
    }
    let _ = conn.shutdown(std::net::Shutdown::Both);
    Ok(out)
}

/// Writes samples as CSV with 9-decimal floats; a missing round trip is an
/// empty field.
pub fn write_probe_csv(path: &Path, samples: &[ProbeSample]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(probe_csv(samples).as_bytes())?;
    f.flush()
}

pub fn probe_csv(samples: &[ProbeSample]) -> String {
    let mut s = String::from(PROBE_CSV_HEADER);
    s.push('\n');
    for p in samples {
        let rtt = p.roundtrip_s.map(|v| format!("{v:.9}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{:.9},{:.9},{}\n",
            p.side, p.payload_bytes, p.serialize_s, p.deserialize_s, rtt
        ));
    }
    s
}
