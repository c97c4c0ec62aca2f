//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.
//!
//! Scenario files are read from the repository's `scenarios/` directory.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cloudsplit_core::cost_model::{e2e_latency, CloudProfile, DeviceProfile, SlaSpec, LATENCY_EPS};
use cloudsplit_core::probe::probe_transfer;
use cloudsplit_core::scheduler::{plan_iterations, JobId};
use cloudsplit_core::simulator::{
    batch_cost_sweep, compare_policies, load_migrations, projection_suite, run_policy, Policy,
    ScenarioConfig,
};
use cloudsplit_core::wire::{
    client_run, cloud_preset, decode_tensor, encode_tensor, ClientOptions, ComputeMode, Dtype,
    Server, ServerConfig, SplitPointCatalog, TensorPayload,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn within_pct(value: f64, target: f64, pct: f64) -> bool {
    (value - target).abs() <= target * pct / 100.0
}

/// Reference-scenario baselines are exact: 800 and 720 GPU-seconds.
fn criterion_1() -> Outcome {
    let config = scenario("reference.json");
    let all = run_policy(&config.with_policy(Policy::AllCloud)).unwrap();
    let constant = run_policy(&config.with_policy(Policy::ConstantIteration(45))).unwrap();
    let a = format!("{:.6}", all.cloud_gpu_seconds);
    let c = format!("{:.6}", constant.cloud_gpu_seconds);
    Outcome {
        pass: a == "800.000000" && c == "720.000000",
        detail: format!("all_cloud={a} (want 800.000000), constant_45={c} (want 720.000000)"),
    }
}

/// Calibrated reference-scenario values within 5% and the policy ordering.
fn criterion_2() -> Outcome {
    let config = scenario("reference.json");
    let variable = run_policy(&config.with_policy(Policy::VariableIteration)).unwrap();
    let batched = run_policy(&config.with_policy(Policy::VariableIterationBatched)).unwrap();
    let n = variable.max_n_final();
    let constant = run_policy(&config.with_policy(Policy::ConstantIteration(n))).unwrap();
    let all = run_policy(&config.with_policy(Policy::AllCloud)).unwrap();
    let ordered = batched.cloud_gpu_seconds <= variable.cloud_gpu_seconds
        && variable.cloud_gpu_seconds <= constant.cloud_gpu_seconds
        && constant.cloud_gpu_seconds <= all.cloud_gpu_seconds;
    let v_ok = within_pct(variable.cloud_gpu_seconds, 600.96, 5.0);
    let b_ok = within_pct(batched.cloud_gpu_seconds, 487.06, 5.0);
    Outcome {
        pass: v_ok && b_ok && ordered,
        detail: format!(
            "variable={:.3} (600.96 +-5%: {}), batched={:.3} (487.06 +-5%: {}), ordering {:.3}<={:.3}<={:.3}<={:.3}: {}",
            variable.cloud_gpu_seconds,
            v_ok,
            batched.cloud_gpu_seconds,
            b_ok,
            batched.cloud_gpu_seconds,
            variable.cloud_gpu_seconds,
            constant.cloud_gpu_seconds,
            all.cloud_gpu_seconds,
            ordered
        ),
    }
}

/// Batchable fraction flat (< 5 points) over c in [1, 2] and >= 0.60 at c = 3.
fn criterion_3() -> Outcome {
    let config = scenario("reference.json");
    let cs = [1.0, 1.25, 1.5, 1.75, 2.0, 3.0];
    let points = batch_cost_sweep(&config, &cs).unwrap();
    let in_range: Vec<f64> = points
        .iter()
        .filter(|p| p.c_batch <= 2.0)
        .map(|p| p.batchable_fraction)
        .collect();
    let max = in_range.iter().copied().fold(f64::MIN, f64::max);
    let min = in_range.iter().copied().fold(f64::MAX, f64::min);
    let spread_pts = 100.0 * (max - min);
    let at_3 = points.last().unwrap().batchable_fraction;
    let curve: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2}:{:.3}", p.c_batch, p.batchable_fraction))
        .collect();
    Outcome {
        pass: spread_pts < 5.0 && at_3 >= 0.60,
        detail: format!(
            "spread over [1,2]={spread_pts:.1} pts (want < 5), fraction@3.0={at_3:.3} (want >= 0.60); curve {}",
            curve.join(" ")
        ),
    }
}

/// Projection ratios within 5 points against either baseline; baselines equal
/// across scenarios.
fn criterion_4() -> Outcome {
    let files = [
        ("base", "projection_base.json", (80.0, 61.0)),
        ("up50", "projection_up50.json", (70.0, 54.0)),
        ("up80_20", "projection_up80_20.json", (52.0, 41.0)),
    ];
    let base = scenario("projection_base.json");
    let n = match base.policy {
        Policy::ConstantIteration(n) => n,
        _ => panic!("projection base must name its constant iteration count"),
    };
    let scenarios: Vec<(String, ScenarioConfig)> = files
        .iter()
        .map(|(label, file, _)| (label.to_string(), scenario(file)))
        .collect();
    let report = compare_policies(&scenarios, n).unwrap();

    // The committed files must be what the migration list produces.
    let upgrades = load_migrations(
        &PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/upgrades.json"),
    )
    .unwrap();
    let derived = projection_suite(&base, &upgrades).unwrap();
    let consistent = derived
        .scenarios
        .iter()
        .zip(&scenarios)
        .all(|((_, a), (_, b))| a.cohorts == b.cohorts);

    let mut pass = consistent;
    let mut parts = Vec::new();
    for (label, _, (want_v, want_b)) in files {
        let v = report.row(label, Policy::VariableIteration).unwrap();
        let b = report.row(label, Policy::VariableIterationBatched).unwrap();
        let vs_const =
            (v.pct_of_constant - want_v).abs() <= 5.0 && (b.pct_of_constant - want_b).abs() <= 5.0;
        let vs_all = (v.pct_of_all_cloud - want_v).abs() <= 5.0
            && (b.pct_of_all_cloud - want_b).abs() <= 5.0;
        pass &= vs_const || vs_all;
        parts.push(format!(
            "{label}: {:.1}/{:.1} of constant, {:.1}/{:.1} of all-cloud (want {want_v}/{want_b})",
            v.pct_of_constant, b.pct_of_constant, v.pct_of_all_cloud, b.pct_of_all_cloud
        ));
    }
    let baselines: Vec<(f64, f64)> = files
        .iter()
        .map(|(label, _, _)| {
            (
                report
                    .row(label, Policy::AllCloud)
                    .unwrap()
                    .cloud_gpu_seconds,
                report
                    .row(label, Policy::ConstantIteration(n))
                    .unwrap()
                    .cloud_gpu_seconds,
            )
        })
        .collect();
    let identical = baselines.windows(2).all(|w| w[0] == w[1]);
    pass &= identical;
    Outcome {
        pass,
        detail: format!(
            "{}; baselines all_cloud={:.3} constant_{n}={:.3} identical={identical}; files match upgrades={consistent}",
            parts.join("; "),
            baselines[0].0,
            baselines[0].1
        ),
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (DeviceProfile, CloudProfile, SlaSpec) {
    let r_cloud = rng.random_range(5.0..100.0);
    let dev = DeviceProfile::new(
        r_cloud * rng.random_range(0.01..0.99),
        rng.random_range(0.0..5.0),
        rng.random_range(0.0..2.0),
    )
    .unwrap();
    let n_total = rng.random_range(1..=100);
    let n_step = rng.random_range(1..=12).min(n_total);
    let sla = SlaSpec::new(rng.random_range(0.5..60.0), n_total, n_step).unwrap();
    (dev, CloudProfile::unbatched(r_cloud).unwrap(), sla)
}

fn brute_force(dev: &DeviceProfile, cloud: &CloudProfile, sla: &SlaSpec) -> u32 {
    (0..sla.n_total)
        .step_by(sla.n_step as usize)
        .chain(std::iter::once(sla.n_total))
        .find(|&n| e2e_latency(n, dev, cloud, sla).total_s <= sla.t_lim + LATENCY_EPS)
        .unwrap_or(sla.n_total)
}

/// Closed form plus quantization equals the brute-force oracle; monotonicity.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let (dev, cloud, sla) = random_instance(&mut rng);
        if plan_iterations(&dev, &cloud, &sla).n_final != brute_force(&dev, &cloud, &sla) {
            mismatches += 1;
        }
    }
    let mut violations = 0;
    for _ in 0..1_000 {
        let (dev, cloud, sla) = random_instance(&mut rng);
        let base = plan_iterations(&dev, &cloud, &sla).n_final;
        let t = rng.random_range(0.0..1.0);

        let mut faster = dev;
        faster.r_dev += t * (cloud.r_cloud - dev.r_dev) * 0.99;
        let mut slower_net = dev;
        slower_net.t_network += 3.0 * t;
        let mut looser = sla;
        looser.t_lim += 20.0 * t;

        if plan_iterations(&faster, &cloud, &sla).n_final > base
            || plan_iterations(&slower_net, &cloud, &sla).n_final < base
            || plan_iterations(&dev, &cloud, &looser).n_final > base
        {
            violations += 1;
        }
    }
    Outcome {
        pass: mismatches == 0 && violations == 0,
        detail: format!(
            "oracle mismatches {mismatches}/10000, monotonicity violations {violations}/1000"
        ),
    }
}

/// Codec fuzz, the 64 KiB latent payload and wire/cost-model agreement.
fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let dtype = if rng.random_bool(0.5) {
            Dtype::F32
        } else {
            Dtype::F16
        };
        let ndims = rng.random_range(0..=4);
        let mut dims: Vec<u32> = (0..ndims).map(|_| rng.random_range(0..=128)).collect();
        while dims.iter().map(|&d| d as usize).product::<usize>() > 1 << 16 {
            let i = (0..dims.len()).max_by_key(|&i| dims[i]).unwrap();
            dims[i] /= 2;
        }
        let len: usize = dims.iter().map(|&d| d as usize).product::<usize>() * dtype.width();
        let mut data = vec![0u8; len];
        rng.fill_bytes(&mut data);
        let t = TensorPayload::new(dtype, dims, data).unwrap();
        if decode_tensor(&encode_tensor(&t)).ok().as_ref() != Some(&t) {
            mismatches += 1;
        }
    }

    let latents = SplitPointCatalog::stable_diffusion()
        .get("denoising50")
        .unwrap()
        .payload_bytes();
    let tensor = TensorPayload::from_f32(vec![4, 64, 64], &vec![0.0; 4 * 64 * 64]).unwrap();

    let mut config = ServerConfig::new(CloudProfile::unbatched(62.5).unwrap());
    config.compute = ComputeMode::Disabled;
    let handle = Server::bind("127.0.0.1:0", config)
        .unwrap()
        .spawn()
        .unwrap();
    let addr = handle.addr().to_string();
    let cloud = CloudProfile::unbatched(62.5).unwrap();
    let mut disagreements = 0;
    let mut failures = 0;
    for i in 0..100u128 {
        let dev = DeviceProfile::new(rng.random_range(0.5..80.0), rng.random_range(0.0..4.0), 0.3)
            .unwrap();
        let sla = SlaSpec::new(rng.random_range(2.0..30.0), 50, 5).unwrap();
        let opts = ClientOptions {
            job_id: JobId::from_u128(i + 1),
            compute: ComputeMode::Disabled,
            ..ClientOptions::default()
        };
        match client_run(&addr, &dev, &sla, &opts) {
            Ok(r) if r.n_final == plan_iterations(&dev, &cloud, &sla).n_final => {}
            Ok(_) => disagreements += 1,
            Err(_) => failures += 1,
        }
    }
    handle.shutdown();

    Outcome {
        pass: mismatches == 0
            && latents == 65_536
            && tensor.data.len() == 65_536
            && disagreements == 0
            && failures == 0,
        detail: format!(
            "codec mismatches {mismatches}/10000, denoising50 data {latents} B (want 65536), \
             wire n_final disagreements {disagreements}/100, failed jobs {failures}"
        ),
    }
}

/// Loopback probe: positive timings, larger payloads slower, flat serialize cost.
fn criterion_7() -> Outcome {
    let mut config = ServerConfig::new(CloudProfile::unbatched(62.5).unwrap());
    config.compute = ComputeMode::Disabled;
    let handle = Server::bind("127.0.0.1:0", config)
        .unwrap()
        .spawn()
        .unwrap();
    let sides = [10, 100, 500, 1000, 5000];
    let samples = probe_transfer(
        &handle.addr().to_string(),
        &sides,
        9,
        Duration::from_secs(30),
    )
    .unwrap();
    handle.shutdown();
    let get = |side: u32| samples.iter().find(|s| s.side == side).unwrap();
    let positive = samples.iter().all(|s| {
        s.serialize_s > 0.0 && s.deserialize_s > 0.0 && s.roundtrip_s.is_some_and(|r| r > 0.0)
    });
    let rt_10 = get(10).roundtrip_s.unwrap();
    let rt_5000 = get(5000).roundtrip_s.unwrap();
    let ratio = get(500).serialize_s / get(10).serialize_s;
    Outcome {
        pass: positive && rt_5000 > rt_10 && ratio < 10.0,
        detail: format!(
            "positive={positive}, roundtrip 10={:.6}s 5000={:.6}s, serialize 10={:.3e}s 500={:.3e}s ratio={ratio:.1} (want < 10)",
            rt_10,
            rt_5000,
            get(10).serialize_s,
            get(500).serialize_s
        ),
    }
}

/// Published hardware rates enter only as configuration constants.
fn criterion_8() -> Outcome {
    let presets = [
        ("a40", 4.930),
        ("a40-preloaded", 5.695),
        ("rtx2080ti", 3.520),
        ("rtx2080ti-preloaded", 4.240),
        ("datacenter", 62.5),
    ];
    let ok = presets
        .iter()
        .all(|&(name, r)| cloud_preset(name) == Some(r));
    Outcome {
        pass: ok,
        detail: "hardware figures excluded; preset rates present as configuration constants".into(),
    }
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 8] = [
        (
            1,
            "reference exact baselines",
            criterion_1,
            Duration::from_secs(5),
        ),
        (
            2,
            "reference calibrated targets",
            criterion_2,
            Duration::from_secs(10),
        ),
        (3, "batch-cost sweep", criterion_3, Duration::from_secs(20)),
        (4, "projections", criterion_4, Duration::from_secs(30)),
        (
            5,
            "cost-model oracle suite",
            criterion_5,
            Duration::from_secs(30),
        ),
        (6, "wire conformance", criterion_6, Duration::from_secs(60)),
        (7, "probe sanity", criterion_7, Duration::from_secs(60)),
        (
            8,
            "hardware results as constants",
            criterion_8,
            Duration::from_secs(5),
        ),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} [{}] {name}: {} ({:.2}s of {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { "OVER TIME BUDGET" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
