//! CSV writers. Floats are printed with six decimal places.

use std::io::{self, Write};

use super::{ProjectionReport, SimulationResult, Summary, SweepPoint};

pub const JOBS_CSV_HEADER: &str = "job_id,r_dev,n_final,batch_size,latency_s,feasible";

pub fn write_jobs_csv<W: Write>(result: &SimulationResult, mut w: W) -> io::Result<()> {
    writeln!(w, "{JOBS_CSV_HEADER}")?;
    for j in &result.per_job {
        writeln!(
            w,
            "{},{:.6},{},{},{:.6},{}",
            j.job_id, j.r_dev, j.n_final, j.batch_size, j.latency_s, j.feasible
        )?;
    }
    Ok(())
}

/// `metric,value` rows for a result and its latency summary.
pub fn write_summary_csv<W: Write>(
    result: &SimulationResult,
    summary: &Summary,
    mut w: W,
) -> io::Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "policy,{}", result.policy)?;
    writeln!(w, "jobs,{}", summary.jobs)?;
    writeln!(w, "cloud_gpu_seconds,{:.6}", result.cloud_gpu_seconds)?;
    writeln!(w, "sla_violations,{}", result.sla_violations)?;
    writeln!(w, "batchable_fraction,{:.6}", result.batchable_fraction)?;
    writeln!(w, "mean_n_final,{:.6}", result.mean_n_final())?;
    writeln!(w, "max_n_final,{}", result.max_n_final())?;
    writeln!(w, "latency_mean_s,{:.6}", summary.mean_s)?;
    writeln!(w, "latency_p50_s,{:.6}", summary.p50_s)?;
    writeln!(w, "latency_p95_s,{:.6}", summary.p95_s)?;
    writeln!(w, "latency_max_s,{:.6}", summary.max_s)?;
    writeln!(
        w,
        "histogram_bin_width_s,{:.6}",
        summary.histogram.bin_width_s
    )?;
    for (i, count) in summary.histogram.counts.iter().enumerate() {
        let (lo, _) = summary.histogram.bin_bounds(i);
        writeln!(w, "histogram_bin_{lo:.6},{count}")?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut w: W) -> io::Result<()> {
    writeln!(w, "c_batch,batchable_fraction")?;
    for p in points {
        writeln!(w, "{:.6},{:.6}", p.c_batch, p.batchable_fraction)?;
    }
    Ok(())
}

pub fn write_projection_csv<W: Write>(report: &ProjectionReport, mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "scenario,policy,cloud_gpu_seconds,pct_of_all_cloud,pct_of_constant"
    )?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6}",
            r.scenario, r.policy, r.cloud_gpu_seconds, r.pct_of_all_cloud, r.pct_of_constant
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{Histogram, JobRecord, Policy};

    #[test]
    fn jobs_csv_layout() {
        let result = SimulationResult {
            policy: Policy::VariableIteration,
            per_job: vec![JobRecord {
                job_id: 3,
                r_dev: 2.25,
                n_final: 40,
                batch_size: 2,
                latency_s: 6.273333333,
                feasible: true,
            }],
            cloud_gpu_seconds: 0.64,
            latency_histogram: Histogram::build([6.27], 0.5),
            sla_violations: 0,
            batchable_fraction: 1.0,
        };
        let mut out = Vec::new();
        write_jobs_csv(&result, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "job_id,r_dev,n_final,batch_size,latency_s,feasible\n3,2.250000,40,2,6.273333,true\n"
        );
    }

    #[test]
    fn sweep_csv_layout() {
        let mut out = Vec::new();
        write_sweep_csv(
            &[SweepPoint {
                c_batch: 1.5,
                batchable_fraction: 0.75,
            }],
            &mut out,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "c_batch,batchable_fraction\n1.500000,0.750000\n"
        );
    }
}
