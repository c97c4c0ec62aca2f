mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Cloud/edge split inference: simulate schedules, serve and run split jobs,
/// and measure transfer costs.
#[derive(Debug, Parser)]
#[command(name = "cloudsplit", version, about)]
pub struct Cli {
    /// Directory that receives every output file and the run manifest.
    #[arg(long, global = true, default_value = "cloudsplit-out")]
    pub out: PathBuf,

    /// Overrides the seed of the scenario (or seeds the job id for `client`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output format for tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write per-job and summary CSVs.
    Simulate(SimulateArgs),
    /// Sweep the pair batch cost and record the batchable fraction.
    Sweep(SweepArgs),
    /// Compare all policies on a base scenario and its device upgrades.
    Project(ProjectArgs),
    /// Serve split jobs over TCP until interrupted.
    Serve(ServeArgs),
    /// Run one split job against a server and record measured latency.
    Client(ClientArgs),
    /// Measure codec cost and, with --connect, echo round-trip time.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Policy override: all-cloud, constant:<n>, variable or variable-batched.
    #[arg(long, conflicts_with = "all_policies")]
    pub policy: Option<String>,
    /// Run all four policies and also write a comparison table.
    #[arg(long)]
    pub all_policies: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub c_from: f64,
    #[arg(long, default_value_t = 3.0)]
    pub c_to: f64,
    #[arg(long, default_value_t = 0.25)]
    pub c_step: f64,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Base scenario JSON file.
    pub scenario: PathBuf,
    /// JSON list of cumulative device migrations.
    #[arg(long)]
    pub upgrades: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Cloud throughput preset (a40, a40-preloaded, rtx2080ti, rtx2080ti-preloaded, datacenter).
    #[arg(long, default_value = "datacenter")]
    pub preset: String,
    /// Cloud rate in iterations per second; overrides the preset.
    #[arg(long)]
    pub r_cloud: Option<f64>,
    /// Split point name to always ship, or `auto`.
    #[arg(long, default_value = "auto")]
    pub split: String,
    /// How cloud compute is emulated: sleep, spin or disabled.
    #[arg(long, default_value = "sleep")]
    pub compute: String,
    #[arg(long, default_value_t = 50)]
    pub n_total: u32,
    #[arg(long, default_value_t = 5)]
    pub n_step: u32,
    /// Network time the scheduler assumes when planning.
    #[arg(long, default_value_t = 0.3)]
    pub t_network: f64,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[arg(long)]
    pub connect: String,
    /// Device diffusion rate in iterations per second.
    #[arg(long)]
    pub rate: f64,
    /// End-to-end latency limit in seconds.
    #[arg(long)]
    pub tlim: f64,
    #[arg(long, default_value_t = 2.0)]
    pub k_decode: f64,
    #[arg(long, default_value_t = 50)]
    pub n_total: u32,
    #[arg(long, default_value_t = 5)]
    pub n_step: u32,
    /// How device compute is emulated: sleep, spin or disabled.
    #[arg(long, default_value = "sleep")]
    pub compute: String,
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long, default_value = "")]
    pub prompt: String,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Echo server; without it only the codec is measured.
    #[arg(long)]
    pub connect: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "10,100,500,1000,5000")]
    pub sides: Vec<u32>,
    #[arg(long, default_value_t = 9)]
    pub reps: usize,
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.kind.code())
        }
    }
}
