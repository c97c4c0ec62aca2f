use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::catalog::{SplitPoint, SplitPointCatalog};
use super::frame::{read_header, read_payload, write_frame, MsgType};
use super::messages::{
    CompleteMsg, ErrorCode, ErrorMsg, IntermediateMsg, JobAcceptMsg, JobRequestMsg,
};
use super::tensor::TensorPayload;
use super::{synthetic_compute, ComputeMode, WireError};
use crate::cost_model::{CloudProfile, DeviceProfile, SlaSpec};
use crate::scheduler::{JobId, JobRequest, Scheduler, SchedulerError};

/// Cloud throughput presets in iterations per second.
pub const CLOUD_PRESETS: &[(&str, f64)] = &[
    ("a40", 4.930),
    ("a40-preloaded", 5.695),
    ("rtx2080ti", 3.520),
    ("rtx2080ti-preloaded", 4.240),
    ("datacenter", 62.5),
];

pub fn cloud_preset(name: &str) -> Option<f64> {
    CLOUD_PRESETS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, r)| r)
}

/// Which tensors the server ships after its share of the iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSelection {
    /// The diffusion split point reached after `n_final` iterations.
    Auto,
    /// Always the given split point.
    Named(SplitPoint),
}

impl SplitSelection {
    pub fn resolve(&self, n_final: u32, n_total: u32) -> SplitPoint {
        match self {
            SplitSelection::Named(p) => p.clone(),
            SplitSelection::Auto => {
                let sd = SplitPointCatalog::stable_diffusion();
                if let Some(p) = sd.after_iterations(n_final) {
                    return p.clone();
                }
                let name = if n_final >= n_total {
                    "denoising50"
                } else {
                    "denoising25"
                };
                let mut p = sd.get(name).expect("built-in split point").clone();
                p.name = format!("denoising{n_final}");
                p.reported_kb = None;
                p
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub cloud: CloudProfile,
    pub n_total: u32,
    pub n_step: u32,
    /// Network time the scheduler assumes when planning a request.
    pub assumed_t_network: f64,
    pub split: SplitSelection,
    pub compute: ComputeMode,
    pub io_timeout: Option<Duration>,
}

impl ServerConfig {
    pub fn new(cloud: CloudProfile) -> Self {
        Self {
            cloud,
            n_total: 50,
            n_step: 5,
            assumed_t_network: 0.3,
            split: SplitSelection::Auto,
            compute: ComputeMode::Sleep,
            io_timeout: Some(Duration::from_secs(30)),
        }
    }
}

/// Deterministic tensor contents for a job, so clients can verify them.
pub fn intermediate_tensors(job_id: &JobId, split: &SplitPoint) -> Vec<TensorPayload> {
    let mut seed = [0u8; 32];
    seed[..16].copy_from_slice(&job_id.0);
    seed[16..].copy_from_slice(&job_id.0);
    let mut rng = ChaCha8Rng::from_seed(seed);
    split
        .tensors
        .iter()
        .map(|spec| {
            let mut data = vec![0u8; spec.data_bytes()];
            rng.fill_bytes(&mut data);
            TensorPayload {
                dtype: spec.dtype,
                dims: spec.dims.clone(),
                data,
            }
        })
        .collect()
}

fn reject<S: Write>(conn: &mut S, err: WireError) -> Result<(), WireError> {
    reject_with(conn, err.code(), err)
}

fn reject_with<S: Write>(conn: &mut S, code: ErrorCode, err: WireError) -> Result<(), WireError> {
    let msg = ErrorMsg::new(code, err.to_string());
    // The peer may already be gone; the original error is what matters.
    let _ = write_frame(conn, MsgType::Error, &msg.encode());
    Err(err)
}

fn is_clean_eof(e: &WireError) -> bool {
    matches!(e, WireError::Truncated { available: 0, .. })
}

/// Runs the server side of one connection to completion.
pub fn serve_job<S: Read + Write>(
    conn: &mut S,
    scheduler: &Scheduler,
    config: &ServerConfig,
) -> Result<(), WireError> {
    let (msg_type, len) = match read_header(conn) {
        Ok(h) => h,
        Err(e) if is_clean_eof(&e) => return Ok(()),
        Err(e) => return reject(conn, e.normalize()),
    };
    let payload = match read_payload(conn, len) {
        Ok(p) => p,
        Err(e) => return reject(conn, e.normalize()),
    };
    match msg_type {
        MsgType::ProbeEcho => echo_session(conn, payload),
        MsgType::JobRequest => run_job(conn, scheduler, config, &payload),
        got => reject(
            conn,
            WireError::UnexpectedMessage {
                expected: MsgType::JobRequest,
                got,
            },
        ),
    }
}

fn echo_session<S: Read + Write>(conn: &mut S, first: Vec<u8>) -> Result<(), WireError> {
    write_frame(conn, MsgType::ProbeEcho, &first)?;
    loop {
        let (msg_type, len) = match read_header(conn) {
            Ok(h) => h,
            Err(e) if is_clean_eof(&e) => return Ok(()),
            Err(e) => return reject(conn, e.normalize()),
        };
        if msg_type != MsgType::ProbeEcho {
            return reject(
                conn,
                WireError::UnexpectedMessage {
                    expected: MsgType::ProbeEcho,
                    got: msg_type,
                },
            );
        }
        let payload = read_payload(conn, len)?;
        write_frame(conn, MsgType::ProbeEcho, &payload)?;
    }
}

fn run_job<S: Read + Write>(
    conn: &mut S,
    scheduler: &Scheduler,
    config: &ServerConfig,
    payload: &[u8],
) -> Result<(), WireError> {
    let req = match JobRequestMsg::decode(payload) {
        Ok(r) => r,
        Err(e) => return reject(conn, e),
    };
    let device = match DeviceProfile::new(req.r_dev, req.k_decode, config.assumed_t_network) {
        Ok(d) => d,
        Err(e) => return reject(conn, WireError::Malformed(e.to_string())),
    };
    let sla = match SlaSpec::new(req.t_lim, config.n_total, config.n_step) {
        Ok(s) => s,
        Err(e) => return reject(conn, WireError::Malformed(e.to_string())),
    };
    let request = JobRequest {
        job_id: req.job_id,
        device,
        prompt_bytes: req.prompt.len() as u64,
    };
    let plan = match scheduler.admit(&request, &sla) {
        Ok(p) => p,
        Err(e @ SchedulerError::DuplicateJob(_)) => {
            return reject_with(
                conn,
                ErrorCode::DuplicateJob,
                WireError::Protocol(e.to_string()),
            )
        }
        Err(e) => return reject(conn, WireError::Malformed(e.to_string())),
    };

    let accept = JobAcceptMsg {
        job_id: req.job_id,
        n_final: plan.n_final,
        predicted_total_s: plan.predicted.total_s,
    };
    write_frame(conn, MsgType::JobAccept, &accept.encode())?;

    if plan.n_final > 0 {
        let seconds = f64::from(plan.n_final) / config.cloud.r_cloud;
        let spent = synthetic_compute(seconds, config.compute);
        let split = config.split.resolve(plan.n_final, config.n_total);
        let msg = IntermediateMsg {
            job_id: req.job_id,
            cloud_compute_s: spent.as_secs_f64(),
            tensors: intermediate_tensors(&req.job_id, &split),
        };
        write_frame(conn, MsgType::Intermediate, &msg.encode())?;
    }

    let (msg_type, len) = read_header(conn).map_err(WireError::normalize)?;
    if msg_type != MsgType::Complete {
        return reject(
            conn,
            WireError::UnexpectedMessage {
                expected: MsgType::Complete,
                got: msg_type,
            },
        );
    }
    let complete = match read_payload(conn, len).and_then(|p| CompleteMsg::decode(&p)) {
        Ok(c) => c,
        Err(e) => return reject(conn, e.normalize()),
    };
    if complete.job_id != req.job_id {
        return reject(
            conn,
            WireError::Malformed(format!(
                "COMPLETE for {} on connection of {}",
                complete.job_id, req.job_id
            )),
        );
    }
    Ok(())
}

/// Blocking TCP server, one thread per connection.
pub struct Server {
    listener: TcpListener,
    scheduler: Arc<Scheduler>,
    config: Arc<ServerConfig>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, config: ServerConfig) -> Result<Self, WireError> {
        let listener = TcpListener::bind(addr)?;
        Ok(Self {
            listener,
            scheduler: Arc::new(Scheduler::new(config.cloud.clone())),
            config: Arc::new(config),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, WireError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn scheduler(&self) -> Arc<Scheduler> {
        Arc::clone(&self.scheduler)
    }

    /// Accepts connections until the process exits.
    pub fn run(self) -> Result<(), WireError> {
        let stop = AtomicBool::new(false);
        self.accept_loop(&stop)
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, WireError> {
        let addr = self.local_addr()?;
        let scheduler = self.scheduler();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            let _ = self.accept_loop(&flag);
        });
        Ok(ServerHandle {
            addr,
            scheduler,
            stop,
            thread: Some(thread),
        })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> Result<(), WireError> {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(mut stream) = stream else { continue };
            let scheduler = Arc::clone(&self.scheduler);
            let config = Arc::clone(&self.config);
            std::thread::spawn(move || {
                let _ = stream.set_nodelay(true);
                let _ = stream.set_read_timeout(config.io_timeout);
                let _ = stream.set_write_timeout(config.io_timeout);
                let _ = serve_job(&mut stream, &scheduler, &config);
                let _ = stream.shutdown(std::net::Shutdown::Both);
            });
        }
        Ok(())
    }
}

/// Background server; stops accepting when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    scheduler: Arc<Scheduler>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
