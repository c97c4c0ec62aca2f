//! Binary protocol for executing a split job over a stream transport.
//!
//! One job per connection:
//!
//! ```text
//! client                              server
//!   JOB_REQUEST  ------------------->   admit, n_final
//!                <-------------------  JOB_ACCEPT
//!                                      n_final cloud iterations
//!                <-------------------  INTERMEDIATE   (skipped when n_final = 0)
//!   remaining iterations + decode
//!   COMPLETE     ------------------->   close
//! ```
//!
//! A connection that opens with PROBE_ECHO instead is an echo session: every
//! frame is sent back unchanged until the client closes. Protocol violations
//! are answered with an ERROR frame before the server closes the connection.
//! The byte layouts are documented in `docs/protocol.md`.

mod catalog;
pub(crate) mod client;
mod frame;
mod messages;
mod server;
mod tensor;

use std::io;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use catalog::{SplitPoint, SplitPointCatalog, TensorSpec};
pub use client::{client_run, ClientOptions, ClientReport};
pub use frame::{
    encode_header, parse_header, read_frame, read_header, read_payload, write_frame, Frame,
    MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION,
};
pub use messages::{
    fnv1a64, CompleteMsg, ErrorCode, ErrorMsg, IntermediateMsg, JobAcceptMsg, JobRequestMsg,
};
pub use server::{
    cloud_preset, intermediate_tensors, serve_job, Server, ServerConfig, ServerHandle,
    SplitSelection, CLOUD_PRESETS,
};
pub use tensor::{
    data_len, decode_tensor, decode_tensor_prefix, encode_tensor, encode_tensor_into, Dtype,
    TensorPayload,
};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("timed out")]
    Timeout,
    #[error("truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownMessageType(u8),
    #[error("reserved flags must be zero, got 0x{0:04x}")]
    ReservedFlags(u16),
    #[error("payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(u64),
    #[error("unknown dtype code 0x{0:02x}")]
    BadDtype(u8),
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("expected {expected:?}, received {got:?}")]
    UnexpectedMessage { expected: MsgType, got: MsgType },
    #[error("peer reported error 0x{code:04x}: {message}")]
    Remote { code: u16, message: String },
    #[error("intermediate checksum mismatch")]
    ChecksumMismatch,
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl WireError {
    /// Maps socket-level failures onto the timeout / connection variants.
    pub(crate) fn from_io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => WireError::Timeout,
            io::ErrorKind::ConnectionRefused
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::NotConnected => WireError::ConnectionFailed(e.to_string()),
            io::ErrorKind::UnexpectedEof => WireError::Truncated {
                needed: 1,
                available: 0,
            },
            _ => WireError::Io(e),
        }
    }

    /// Normalises I/O variants produced deep in the codec.
    pub(crate) fn normalize(self) -> Self {
        match self {
            WireError::Io(e) => WireError::from_io(e),
            other => other,
        }
    }

    /// Code to report to the peer for this error.
    pub fn code(&self) -> ErrorCode {
        match self {
            WireError::BadMagic(_) => ErrorCode::BadMagic,
            WireError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
            WireError::UnknownMessageType(_) => ErrorCode::UnknownMessageType,
            WireError::PayloadTooLarge(_) => ErrorCode::PayloadTooLarge,
            WireError::UnexpectedMessage { .. } => ErrorCode::UnexpectedMessage,
            WireError::ReservedFlags(_)
            | WireError::Truncated { .. }
            | WireError::BadDtype(_)
            | WireError::LengthMismatch { .. }
            | WireError::Malformed(_)
            | WireError::ChecksumMismatch => ErrorCode::MalformedPayload,
            _ => ErrorCode::Internal,
        }
    }
}

/// How synthetic compute phases are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComputeMode {
    /// Phases take no time; for tests.
    Disabled,
    /// Sleep for the modelled duration.
    #[default]
    Sleep,
    /// Busy-wait for the modelled duration.
    Spin,
}

impl std::str::FromStr for ComputeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "disabled" | "off" | "none" => Ok(ComputeMode::Disabled),
            "sleep" => Ok(ComputeMode::Sleep),
            "spin" | "busy" => Ok(ComputeMode::Spin),
            other => Err(format!("unknown compute mode '{other}'")),
        }
    }
}

/// Stands in for `seconds` of model execution and returns the time it took.
pub fn synthetic_compute(seconds: f64, mode: ComputeMode) -> Duration {
    let start = Instant::now();
    if seconds > 0.0 && seconds.is_finite() {
        let target = Duration::from_secs_f64(seconds);
        match mode {
            ComputeMode::Disabled => {}
            ComputeMode::Sleep => std::thread::sleep(target),
            ComputeMode::Spin => {
                while start.elapsed() < target {
                    std::hint::spin_loop();
                }
            }
        }
    }
    start.elapsed()
}
