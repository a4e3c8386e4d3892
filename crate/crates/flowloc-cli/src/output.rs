//! Result persistence: comma-separated tables plus a TOML manifest that
//! reproduces the run when fed back as the config file.
//!
//! `rmse.csv` pools every completed run; `rmse_converged.csv` keeps only
//! runs without a single degenerate weight update. Bound columns average
//! the squared per-realization floors over the same run subset as the
//! errors they sit next to.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use flowloc::metrics::{cumulative_frequency, rmse_series};

use crate::config::{Algo, Config};
use crate::runner::{ExperimentResult, RunRecord};

/// Thresholds of the cumulative-frequency table: log-spaced from millimeter
/// to volume scale.
const CF_TAU_MIN: f64 = 1e-3;
const CF_TAU_MAX: f64 = 30.0;
const CF_TAU_COUNT: usize = 60;

/// Writes rmse.csv, rmse_converged.csv, cf.csv, runtime.csv, and
/// manifest.toml into `out_dir`, creating it if needed.
pub fn write_outputs(result: &ExperimentResult, cfg: &Config, out_dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let all: Vec<&RunRecord> = result.records.iter().collect();
    let converged: Vec<&RunRecord> =
        result.records.iter().filter(|r| r.degenerate_events == 0).collect();
    std::fs::write(out_dir.join("rmse.csv"), rmse_csv(&all, cfg.steps))?;
    std::fs::write(out_dir.join("rmse_converged.csv"), rmse_csv(&converged, cfg.steps))?;
    std::fs::write(out_dir.join("cf.csv"), cf_csv(&all, cfg.steps))?;
    std::fs::write(out_dir.join("runtime.csv"), runtime_csv(&all, cfg.algo))?;
    std::fs::write(out_dir.join("manifest.toml"), cfg.to_toml())?;
    Ok(())
}

/// Per-step RMSE pooled over the given runs and all agents, next to the
/// matching bound floors. Header only when no run qualifies.
fn rmse_csv(records: &[&RunRecord], steps: usize) -> String {
    let mut out = String::from("k,rmse_p,rmse_v,rmse_a,pcrlb_p,pcrlb_v,pcrlb_a\n");
    if records.is_empty() {
        return out;
    }
    let estimates: Vec<_> = records.iter().map(|r| r.estimates.clone()).collect();
    let truths: Vec<_> = records.iter().map(|r| r.truth[1..].to_vec()).collect();
    let series = rmse_series(&estimates, &truths).expect("records share one shape");
    for k in 1..=steps {
        let point = &series[k - 1];
        let [bp, bv, ba] = floor_means(records, k);
        let _ =
            writeln!(out, "{k},{},{},{},{bp},{bv},{ba}", point.rmse_p, point.rmse_v, point.rmse_a);
    }
    out
}

/// Square root of the mean squared floor over runs, per component; NaN at a
/// time index where no run has a bound.
fn floor_means(records: &[&RunRecord], k: usize) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for record in records {
        if let Some(floors) = &record.floors[k] {
            sums[0] += floors.rmse_p * floors.rmse_p;
            sums[1] += floors.rmse_v * floors.rmse_v;
            sums[2] += floors.rmse_a * floors.rmse_a;
            count += 1;
        }
    }
    if count == 0 {
        return [f64::NAN; 3];
    }
    sums.map(|s| (s / count as f64).sqrt())
}

/// Cumulative frequency and outage of the position error at the first,
/// middle, and last step, pooled over runs and agents.
fn cf_csv(records: &[&RunRecord], steps: usize) -> String {
    let mut out = String::from("k,tau,cf,outage\n");
    if records.is_empty() {
        return out;
    }
    let ks: BTreeSet<usize> = [1, (steps / 2).max(1), steps].into();
    let taus: Vec<f64> = (0..CF_TAU_COUNT)
        .map(|i| {
            let t = i as f64 / (CF_TAU_COUNT - 1) as f64;
            CF_TAU_MIN * (CF_TAU_MAX / CF_TAU_MIN).powf(t)
        })
        .collect();
    for &k in &ks {
        let mut errors = Vec::new();
        for record in records {
            for (est, truth) in record.estimates[k - 1].iter().zip(&record.truth[k]) {
                let dx = est[0] - truth.position[0];
                let dy = est[1] - truth.position[1];
                let dz = est[2] - truth.position[2];
                errors.push((dx * dx + dy * dy + dz * dz).sqrt());
            }
        }
        let cf = cumulative_frequency(&errors, &taus).expect("sorted thresholds");
        for (tau, c) in taus.iter().zip(&cf) {
            let _ = writeln!(out, "{k},{tau},{c},{}", 1.0 - c);
        }
    }
    out
}

/// Mean wall-clock per step: the whole-network cost, and for per-agent
/// algorithms also the slowest agent's cost, which is the step latency of a
/// distributed deployment.
fn runtime_csv(records: &[&RunRecord], algo: Algo) -> String {
    let mut out = String::from("algo,mode,mean_ms_per_step\n");
    if records.is_empty() {
        return out;
    }
    let joint = mean_ms(records.iter().flat_map(|r| r.joint_seconds.iter().copied()));
    let _ = writeln!(out, "{},joint,{joint}", algo.name());
    if records.iter().any(|r| !r.agent_seconds.is_empty()) {
        let agent = mean_ms(records.iter().flat_map(|r| r.agent_seconds.iter().copied()));
        let _ = writeln!(out, "{},distributed,{agent}", algo.name());
    }
    out
}

fn mean_ms(seconds: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in seconds {
        sum += s;
        count += 1;
    }
    1e3 * sum / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use flowloc::bounds::BoundFloors;
    use flowloc::model::AgentState;
    use nalgebra::{DVector, Vector3};

    /// Two agents, `steps` steps, estimates offset from the truth by a
    /// fixed vector so every pooled error is known exactly.
    fn record(steps: usize, offset: f64) -> RunRecord {
        let truth: Vec<Vec<AgentState>> = (0..=steps)
            .map(|k| {
                (0..2)
                    .map(|i| {
                        AgentState::new(
                            Vector3::new(k as f64, i as f64, 0.0),
                            Vector3::zeros(),
                            Vector3::zeros(),
                        )
                    })
                    .collect()
            })
            .collect();
        let estimates: Vec<Vec<DVector<f64>>> = (1..=steps)
            .map(|k| {
                (0..2)
                    .map(|i| {
                        let mut v = DVector::zeros(9);
                        v[0] = k as f64 + offset;
                        v[1] = i as f64;
                        v
                    })
                    .collect()
            })
            .collect();
        let floors = (0..=steps)
            .map(|_| Some(BoundFloors { rmse_p: 0.3, rmse_v: 0.1, rmse_a: 0.2 }))
            .collect();
        RunRecord {
            estimates,
            truth,
            floors,
            degenerate_events: 0,
            joint_seconds: vec![0.004; steps],
            agent_seconds: vec![0.001; steps],
        }
    }

    #[test]
    fn headers_are_exact() {
        let rec = record(3, 0.5);
        let refs = [&rec];
        assert!(rmse_csv(&refs, 3).starts_with("k,rmse_p,rmse_v,rmse_a,pcrlb_p,pcrlb_v,pcrlb_a\n"));
        assert!(cf_csv(&refs, 3).starts_with("k,tau,cf,outage\n"));
        assert!(runtime_csv(&refs, Algo::Pfbp).starts_with("algo,mode,mean_ms_per_step\n"));
    }

    #[test]
    fn rmse_rows_carry_known_errors_and_floors() {
        let rec = record(2, 0.5);
        let csv = rmse_csv(&[&rec], 2);
        let mut lines = csv.lines().skip(1);
        for k in 1..=2 {
            let row = lines.next().unwrap();
            let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
            assert_eq!(fields[0] as usize, k);
            assert!((fields[1] - 0.5).abs() < 1e-12);
            assert!((fields[4] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn cf_values_parse_back_nondecreasing_and_consistent() {
        let rec = record(4, 0.7);
        let csv = cf_csv(&[&rec], 4);
        let mut per_k: std::collections::BTreeMap<usize, Vec<(f64, f64)>> = Default::default();
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let k: usize = fields[0].parse().unwrap();
            let cf: f64 = fields[2].parse().unwrap();
            let outage: f64 = fields[3].parse().unwrap();
            assert!((cf + outage - 1.0).abs() < 1e-15);
            per_k.entry(k).or_default().push((fields[1].parse().unwrap(), cf));
        }
        assert_eq!(per_k.keys().copied().collect::<Vec<_>>(), vec![1, 2, 4]);
        for curve in per_k.values() {
            assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 < w[1].0));
            assert_eq!(curve.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn runtime_reports_joint_and_distributed_rows() {
        let rec = record(3, 0.1);
        let csv = runtime_csv(&[&rec], Algo::Pfbp);
        let lines: Vec<&str> = csv.lines().collect();
        let joint: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(&joint[..2], &["pfbp", "joint"]);
        assert!((joint[2].parse::<f64>().unwrap() - 4.0).abs() < 1e-9);
        let agent: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(&agent[..2], &["pfbp", "distributed"]);
        assert!((agent[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
        let mut joint_only = rec.clone();
        joint_only.agent_seconds.clear();
        assert_eq!(runtime_csv(&[&joint_only], Algo::Edh).lines().count(), 2);
    }

    #[test]
    fn written_manifest_reproduces_the_config() {
        let mut cfg = parse_config("").unwrap();
        cfg.runs = 3;
        cfg.seed = 42;
        cfg.steps = 2;
        let result = ExperimentResult { records: vec![record(2, 0.4)], attempted: 3, diverged: 0 };
        let dir = std::env::temp_dir().join(format!("flowloc-out-{}", std::process::id()));
        write_outputs(&result, &cfg, &dir).unwrap();
        for name in ["rmse.csv", "rmse_converged.csv", "cf.csv", "runtime.csv", "manifest.toml"] {
            assert!(dir.join(name).exists(), "{name} missing");
        }
        let manifest = std::fs::read_to_string(dir.join("manifest.toml")).unwrap();
        assert_eq!(parse_config(&manifest).unwrap(), cfg);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
