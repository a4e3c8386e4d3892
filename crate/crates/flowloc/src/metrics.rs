//! Error statistics over Monte-Carlo experiments: RMSE time series pooled
//! across runs and agents, cumulative frequency of position errors, and
//! outage probability.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::Error;
use crate::model::{AgentState, STATE_DIM};
use crate::num;

/// RMSE at one time index, per state component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsePoint {
    pub rmse_p: f64,
    pub rmse_v: f64,
    pub rmse_a: f64,
}

/// Pools squared errors over runs and agents at each time index.
/// `estimates[run][k][agent]` is a 9-dimensional state estimate aligned
/// with `truths[run][k][agent]`; every run must cover the same number of
/// time indices and agents.
pub fn rmse_series(
    estimates: &[Vec<Vec<DVector<f64>>>],
    truths: &[Vec<Vec<AgentState>>],
) -> Result<Vec<RmsePoint>, Error> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), found: estimates.len() });
    }
    let steps = estimates[0].len();
    let mut sums = alloc::vec![[0.0f64; 3]; steps];
    let mut count = 0usize;
    for (run_est, run_truth) in estimates.iter().zip(truths) {
        if run_est.len() != steps || run_truth.len() != steps {
            return Err(Error::DimensionMismatch { expected: steps, found: run_est.len() });
        }
        for (k, (step_est, step_truth)) in run_est.iter().zip(run_truth).enumerate() {
            if step_est.len() != step_truth.len() {
                return Err(Error::DimensionMismatch {
                    expected: step_truth.len(),
                    found: step_est.len(),
                });
            }
            for (est, truth) in step_est.iter().zip(step_truth) {
                if est.len() != STATE_DIM {
                    return Err(Error::DimensionMismatch { expected: STATE_DIM, found: est.len() });
                }
                let t = truth.to_vector();
                for block in 0..3 {
                    let mut sq = 0.0;
                    for r in 3 * block..3 * block + 3 {
                        let d = est[r] - t[r];
                        sq += d * d;
                    }
                    sums[k][block] += sq;
                }
            }
        }
    }
    for run_est in estimates {
        count += run_est.first().map_or(0, Vec::len);
    }
    if count == 0 {
        return Err(Error::InvalidParameter("no estimates"));
    }
    let scale = 1.0 / count as f64;
    Ok(sums
        .iter()
        .map(|s| RmsePoint {
            rmse_p: num::sqrt(s[0] * scale),
            rmse_v: num::sqrt(s[1] * scale),
            rmse_a: num::sqrt(s[2] * scale),
        })
        .collect())
}

/// Fraction of errors at or below each threshold. Thresholds must be
/// sorted ascending; the result is nondecreasing and reaches 1 at any
/// threshold at or above the maximum error.
pub fn cumulative_frequency(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, Error> {
    if errors.is_empty() {
        return Err(Error::InvalidParameter("errors"));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("thresholds"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable errors"));
    let n = sorted.len() as f64;
    Ok(thresholds.iter().map(|&tau| sorted.partition_point(|&e| e <= tau) as f64 / n).collect())
}

/// Fraction of errors strictly above `tau`.
pub fn outage_probability(errors: &[f64], tau: f64) -> Result<f64, Error> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter("tau"));
    }
    let cf = cumulative_frequency(errors, &[tau])?;
    Ok(1.0 - cf[0])
}
