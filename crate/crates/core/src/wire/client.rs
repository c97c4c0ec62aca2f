use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame, Frame, MsgType};
use super::messages::{CompleteMsg, ErrorMsg, IntermediateMsg, JobAcceptMsg, JobRequestMsg};
use super::server::SplitSelection;
use super::{synthetic_compute, ComputeMode, WireError};
use crate::cost_model::{DeviceProfile, LatencyBreakdown, SlaSpec};
use crate::scheduler::JobId;

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub job_id: JobId,
    pub prompt: Vec<u8>,
    pub compute: ComputeMode,
    pub timeout: Duration,
    /// When set, received tensor shapes are checked against this selection.
    pub expected_split: Option<SplitSelection>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            job_id: JobId::from_u128(0),
            prompt: Vec::new(),
            compute: ComputeMode::Sleep,
            timeout: Duration::from_secs(30),
            expected_split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub job_id: JobId,
    pub n_final: u32,
    pub predicted_total_s: f64,
    /// Cloud time as reported by the server; everything else measured locally.
    pub measured: LatencyBreakdown,
    pub intermediate_bytes: usize,
    /// Wall clock from connect to COMPLETE sent.
    pub wall_s: f64,
}

fn expect(frame: Frame, expected: MsgType) -> Result<Vec<u8>, WireError> {
    if frame.msg_type == MsgType::Error {
        let e = ErrorMsg::decode(&frame.payload)?;
        return Err(WireError::Remote {
            code: e.code,
            message: e.message,
        });
    }
    if frame.msg_type != expected {
        return Err(WireError::UnexpectedMessage {
            expected,
            got: frame.msg_type,
        });
    }
    Ok(frame.payload)
}

pub(crate) fn connect(endpoint: &str, timeout: Duration) -> Result<TcpStream, WireError> {
    let addrs: Vec<_> = endpoint
        .to_socket_addrs()
        .map_err(|e| WireError::ConnectionFailed(format!("{endpoint}: {e}")))?
        .collect();
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(match last {
        Some(e) if e.kind() == std::io::ErrorKind::TimedOut => WireError::Timeout,
        Some(e) => WireError::ConnectionFailed(format!("{endpoint}: {e}")),
        None => WireError::ConnectionFailed(format!("{endpoint}: no addresses")),
    })
}

/// Runs one split job against `endpoint` and measures where the time went.
///
/// The device's `t_network` is ignored; the network share is measured as the
/// time spent waiting on the server minus the cloud compute it reports.
pub fn client_run(
    endpoint: &str,
    device: &DeviceProfile,
    sla: &SlaSpec,
    opts: &ClientOptions,
) -> Result<ClientReport, WireError> {
    device
        .validate()
        .map_err(|e| WireError::Malformed(e.to_string()))?;
    let start = Instant::now();
    let mut conn = connect(endpoint, opts.timeout)?;
    run_exchange(&mut conn, device, sla, opts, start).map_err(WireError::normalize)
}

fn run_exchange(
    conn: &mut TcpStream,
    device: &DeviceProfile,
    sla: &SlaSpec,
    opts: &ClientOptions,
    start: Instant,
) -> Result<ClientReport, WireError> {
    let request = JobRequestMsg {
        job_id: opts.job_id,
        r_dev: device.r_dev,
        k_decode: device.k_decode,
        t_lim: sla.t_lim,
        prompt: opts.prompt.clone(),
    };
    let sent = Instant::now();
    write_frame(conn, MsgType::JobRequest, &request.encode())?;

    let accept = JobAcceptMsg::decode(&expect(read_frame(conn)?, MsgType::JobAccept)?)?;
    if accept.job_id != opts.job_id {
        return Err(WireError::Protocol(format!(
            "accept for {} but requested {}",
            accept.job_id, opts.job_id
        )));
    }
    if accept.n_final > sla.n_total {
        return Err(WireError::Protocol(format!(
            "server assigned {} iterations of {}",
            accept.n_final, sla.n_total
        )));
    }

    let mut cloud_s = 0.0;
    let mut intermediate_bytes = 0;
    let received = if accept.n_final > 0 {
        let payload = expect(read_frame(conn)?, MsgType::Intermediate)?;
        let at = Instant::now();
        intermediate_bytes = payload.len();
        let msg = IntermediateMsg::decode(&payload)?;
        if msg.job_id != opts.job_id {
            return Err(WireError::Protocol("intermediate for another job".into()));
        }
        if let Some(sel) = &opts.expected_split {
            let split = sel.resolve(accept.n_final, sla.n_total);
            let shapes_match = split.tensors.len() == msg.tensors.len()
                && split
                    .tensors
                    .iter()
                    .zip(&msg.tensors)
                    .all(|(s, t)| s.dims == t.dims && s.dtype == t.dtype);
            if !shapes_match {
                return Err(WireError::Protocol(format!(
                    "tensors do not match split point {}",
                    split.name
                )));
            }
        }
        cloud_s = msg.cloud_compute_s.max(0.0);
        at
    } else {
        Instant::now()
    };
    let network_s = ((received - sent).as_secs_f64() - cloud_s).max(0.0);

    let remaining = sla.n_total - accept.n_final;
    let device_s =
        synthetic_compute(f64::from(remaining) / device.r_dev, opts.compute).as_secs_f64();
    let decode_s = synthetic_compute(device.decode_seconds(), opts.compute).as_secs_f64();
    let measured = LatencyBreakdown::from_parts(cloud_s, device_s, network_s, decode_s);

    let complete = CompleteMsg {
        job_id: opts.job_id,
        client_seconds: measured.total_s,
    };
    write_frame(conn, MsgType::Complete, &complete.encode())?;
    let _ = conn.shutdown(std::net::Shutdown::Write);

    Ok(ClientReport {
        job_id: opts.job_id,
        n_final: accept.n_final,
        predicted_total_s: accept.predicted_total_s,
        measured,
        intermediate_bytes,
        wall_s: start.elapsed().as_secs_f64(),
    })
}
