use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde_json::json;

use cloudsplit_core::cost_model::{CloudProfile, DeviceProfile, SlaSpec};
use cloudsplit_core::probe::{probe_codec, probe_csv, probe_transfer, ProbeError};
use cloudsplit_core::scheduler::JobId;
use cloudsplit_core::simulator::{
    batch_cost_sweep, compare_policies, load_migrations, projection_suite,
    reference_constant_iterations, run_policy, summarize, write_jobs_csv, write_projection_csv,
    write_summary_csv, write_sweep_csv, Policy, ScenarioConfig, SimError, DEFAULT_BIN_WIDTH_S,
};
use cloudsplit_core::wire::{
    client_run, cloud_preset, ClientOptions, ComputeMode, Server, ServerConfig, SplitPointCatalog,
    SplitSelection, WireError, CLOUD_PRESETS,
};

use crate::output::OutDir;
use crate::{Cli, ClientArgs, Command, ProbeArgs, ProjectArgs, ServeArgs, SimulateArgs, SweepArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Runtime,
}

impl ErrorKind {
    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Runtime => 2,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub source: anyhow::Error,
}

type Result<T> = std::result::Result<T, CliError>;

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        kind: ErrorKind::Config,
        source: e.into(),
    }
}

fn runtime_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        kind: ErrorKind::Runtime,
        source: e.into(),
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) => runtime_err(e),
            _ => config_err(e),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::InvalidArgument(_) => config_err(e),
            _ => runtime_err(e),
        }
    }
}

impl From<WireError> for CliError {
    fn from(e: WireError) -> Self {
        runtime_err(e)
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Project(a) => project(cli, a),
        Command::Serve(a) => serve(cli, a),
        Command::Client(a) => client(cli, a),
        Command::Probe(a) => probe(cli, a),
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::load(path).map_err(config_err)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<OutDir> {
    OutDir::create(&cli.out).map_err(runtime_err)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let mut config = load_scenario(&args.scenario, cli.seed)?;
    if let Some(p) = &args.policy {
        config.policy = p.parse()?;
    }
    let policies = if args.all_policies {
        let n = reference_constant_iterations(&config)?;
        vec![
            Policy::AllCloud,
            Policy::ConstantIteration(n),
            Policy::VariableIteration,
            Policy::VariableIterationBatched,
        ]
    } else {
        vec![config.policy]
    };

    let mut out = out_dir(cli)?;
    let mut stdout = std::io::stdout().lock();
    for policy in &policies {
        let result = run_policy(&config.with_policy(*policy))?;
        let summary = summarize(&result, DEFAULT_BIN_WIDTH_S, config.t_lim);
        let label = policy.label();
        out.write(&format!("jobs_{label}.csv"), |w| write_jobs_csv(&result, w))
            .map_err(runtime_err)?;
        out.write(&format!("summary_{label}.csv"), |w| {
            write_summary_csv(&result, &summary, w)
        })
        .map_err(runtime_err)?;
        let _ = writeln!(
            stdout,
            "{label}: cloud_gpu_seconds={:.6} sla_violations={} batchable_fraction={:.6}",
            result.cloud_gpu_seconds, result.sla_violations, result.batchable_fraction
        );
    }
    if args.all_policies {
        let n = match policies[1] {
            Policy::ConstantIteration(n) => n,
            _ => unreachable!("second policy is constant"),
        };
        let label = args
            .scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let report = compare_policies(&[(label, config.clone())], n)?;
        out.write("policies.csv", |w| write_projection_csv(&report, w))
            .map_err(runtime_err)?;
    }
    out.finish("simulate", Some(config.seed), &config)
        .map_err(runtime_err)
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let config = load_scenario(&args.scenario, cli.seed)?;
    if !(args.c_step > 0.0 && args.c_to >= args.c_from) {
        return Err(config_err(anyhow!(
            "sweep range is empty: from {} to {} by {}",
            args.c_from,
            args.c_to,
            args.c_step
        )));
    }
    let steps = ((args.c_to - args.c_from) / args.c_step + 1e-9).floor() as usize;
    let values: Vec<f64> = (0..=steps)
        .map(|i| ((args.c_from + i as f64 * args.c_step) * 1e9).round() / 1e9)
        .collect();
    let points = batch_cost_sweep(&config, &values)?;
    let mut out = out_dir(cli)?;
    out.write("sweep.csv", |w| write_sweep_csv(&points, w))
        .map_err(runtime_err)?;
    for p in &points {
        println!(
            "c={:.3} batchable_fraction={:.6}",
            p.c_batch, p.batchable_fraction
        );
    }
    let resolved = json!({
        "scenario": config,
        "c_values": values,
    });
    out.finish("sweep", Some(config.seed), &resolved)
        .map_err(runtime_err)
}

fn project(cli: &Cli, args: &ProjectArgs) -> Result<()> {
    let config = load_scenario(&args.scenario, cli.seed)?;
    let upgrades = load_migrations(&args.upgrades)?;
    let report = projection_suite(&config, &upgrades)?;
    let mut out = out_dir(cli)?;
    out.write("projection.csv", |w| write_projection_csv(&report, w))
        .map_err(runtime_err)?;
    for r in &report.rows {
        println!(
            "{} {}: {:.3} s ({:.1}% of all-cloud, {:.1}% of constant)",
            r.scenario, r.policy, r.cloud_gpu_seconds, r.pct_of_all_cloud, r.pct_of_constant
        );
    }
    let resolved = json!({
        "base": config,
        "upgrades": upgrades,
        "constant_iterations": report.constant_iterations,
    });
    out.finish("project", Some(config.seed), &resolved)
        .map_err(runtime_err)
}

fn parse_compute(s: &str) -> Result<ComputeMode> {
    s.parse().map_err(|e: String| config_err(anyhow!(e)))
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let r_cloud = match args.r_cloud {
        Some(r) => r,
        None => cloud_preset(&args.preset).ok_or_else(|| {
            let known: Vec<_> = CLOUD_PRESETS.iter().map(|(n, _)| *n).collect();
            config_err(anyhow!(
                "unknown preset '{}' (known: {})",
                args.preset,
                known.join(", ")
            ))
        })?,
    };
    let split = if args.split.eq_ignore_ascii_case("auto") {
        SplitSelection::Auto
    } else {
        SplitSelection::Named(
            SplitPointCatalog::find_builtin(&args.split)
                .ok_or_else(|| config_err(anyhow!("unknown split point '{}'", args.split)))?,
        )
    };
    let cloud = CloudProfile::unbatched(r_cloud).map_err(config_err)?;
    SlaSpec::new(1.0, args.n_total, args.n_step).map_err(config_err)?;
    if !(args.t_network.is_finite() && args.t_network >= 0.0) {
        return Err(config_err(anyhow!("t-network must be >= 0")));
    }
    let mut config = ServerConfig::new(cloud);
    config.n_total = args.n_total;
    config.n_step = args.n_step;
    config.assumed_t_network = args.t_network;
    config.split = split;
    config.compute = parse_compute(&args.compute)?;

    let server = Server::bind(args.listen.as_str(), config).map_err(runtime_err)?;
    let addr = server.local_addr()?;
    let resolved = json!({
        "listen": addr.to_string(),
        "r_cloud": r_cloud,
        "preset": args.preset,
        "split": args.split,
        "compute": args.compute,
        "n_total": args.n_total,
        "n_step": args.n_step,
        "t_network": args.t_network,
    });
    out_dir(cli)?
        .finish("serve", None, &resolved)
        .map_err(runtime_err)?;
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    server.run().map_err(runtime_err)
}

fn job_id_from_seed(seed: Option<u64>) -> JobId {
    let seed = seed.unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        nanos ^ u64::from(std::process::id()).rotate_left(32)
    });
    JobId::from_u128((u128::from(seed) << 64) | u128::from(seed.rotate_left(17)))
}

fn timeout(seconds: f64) -> Result<Duration> {
    if seconds.is_finite() && seconds > 0.0 {
        Ok(Duration::from_secs_f64(seconds))
    } else {
        Err(config_err(anyhow!("timeout must be > 0, got {seconds}")))
    }
}

fn client(cli: &Cli, args: &ClientArgs) -> Result<()> {
    // The network term is measured, so the profile's assumption is unused.
    let device = DeviceProfile::new(args.rate, args.k_decode, 0.0).map_err(config_err)?;
    let sla = SlaSpec::new(args.tlim, args.n_total, args.n_step).map_err(config_err)?;
    let opts = ClientOptions {
        job_id: job_id_from_seed(cli.seed),
        prompt: args.prompt.clone().into_bytes(),
        compute: parse_compute(&args.compute)?,
        timeout: timeout(args.timeout)?,
        expected_split: None,
    };
    let report = client_run(&args.connect, &device, &sla, &opts)?;
    let m = &report.measured;
    let mut out = out_dir(cli)?;
    out.write("client.csv", |w| {
        writeln!(
            w,
            "job_id,n_final,predicted_total_s,cloud_s,device_s,network_s,decode_s,total_s,intermediate_bytes,wall_s"
        )?;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            report.job_id,
            report.n_final,
            report.predicted_total_s,
            m.cloud_s,
            m.device_s,
            m.network_s,
            m.decode_s,
            m.total_s,
            report.intermediate_bytes,
            report.wall_s
        )
    })
    .map_err(runtime_err)?;
    println!(
        "job {}: n_final={} predicted={:.3}s measured={:.3}s (cloud {:.3}, network {:.3}, device {:.3}, decode {:.3})",
        report.job_id,
        report.n_final,
        report.predicted_total_s,
        m.total_s,
        m.cloud_s,
        m.network_s,
        m.device_s,
        m.decode_s
    );
    let resolved = json!({
        "connect": args.connect,
        "job_id": report.job_id.to_string(),
        "r_dev": args.rate,
        "k_decode": args.k_decode,
        "t_lim": args.tlim,
        "n_total": args.n_total,
        "n_step": args.n_step,
        "compute": args.compute,
        "timeout_s": args.timeout,
    });
    out.finish("client", cli.seed, &resolved)
        .map_err(runtime_err)
}

fn probe(cli: &Cli, args: &ProbeArgs) -> Result<()> {
    let samples = match &args.connect {
        Some(endpoint) => probe_transfer(endpoint, &args.sides, args.reps, timeout(args.timeout)?)?,
        None => probe_codec(&args.sides, args.reps)?,
    };
    let mut out = out_dir(cli)?;
    let csv = probe_csv(&samples);
    out.write("probe.csv", |w| w.write_all(csv.as_bytes()))
        .map_err(runtime_err)?;
    print!("{csv}");
    let resolved = json!({
        "connect": args.connect,
        "sides": args.sides,
        "reps": args.reps,
        "timeout_s": args.timeout,
    });
    out.finish("probe", None, &resolved)
        .context("writing manifest")
        .map_err(runtime_err)
}
