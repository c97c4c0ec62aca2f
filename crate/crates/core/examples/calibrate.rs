//! Finds the latency limit whose variable-iteration GPU time is closest to a target.
//!
//! Usage: `cargo run --example calibrate -- <scenario.json> <target-seconds> [lo hi step]`

use std::path::PathBuf;

use cloudsplit_core::simulator::{
    batch_cost_sweep, calibrate_t_lim, run_policy, Policy, ScenarioConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: calibrate <scenario.json> <target> [lo hi step]");
        std::process::exit(1);
    }
    let mut config = ScenarioConfig::load(&PathBuf::from(&args[0]))?;
    let target: f64 = args[1].parse()?;
    let lo: f64 = args.get(2).map_or(Ok(1.0), |s| s.parse())?;
    let hi: f64 = args.get(3).map_or(Ok(30.0), |s| s.parse())?;
    let step: f64 = args.get(4).map_or(Ok(0.1), |s| s.parse())?;

    let cal = calibrate_t_lim(&config, target, lo, hi, step)?;
    println!(
        "t_lim = {:.6}  variable_iteration = {:.6}",
        cal.t_lim, cal.cloud_gpu_seconds
    );

    config.t_lim = cal.t_lim;
    for policy in [
        Policy::AllCloud,
        Policy::VariableIteration,
        Policy::VariableIterationBatched,
    ] {
        let r = run_policy(&config.with_policy(policy))?;
        println!(
            "{policy:<28} gpu = {:>10.6}  mean_n = {:.3}  max_n = {}  batchable = {:.4}  violations = {}",
            r.cloud_gpu_seconds,
            r.mean_n_final(),
            r.max_n_final(),
            r.batchable_fraction,
            r.sla_violations
        );
    }
    for p in batch_cost_sweep(&config, &[1.0, 1.25, 1.5, 1.6, 1.75, 2.0, 2.5, 3.0])? {
        println!(
            "c = {:.2}  batchable = {:.4}",
            p.c_batch, p.batchable_fraction
        );
    }
    Ok(())
}
