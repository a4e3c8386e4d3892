//! Particle-flow machinery shared by the estimators: pseudo-time schedules,
//! linear-Gaussian drift coefficients, Euler integration of the flow,
//! flow-based importance reweighting, sigma-point covariance updates,
//! systematic resampling and particle regularization.
//!
//! The flow moves samples of a Gaussian prior `N(mean0, P)` toward the
//! posterior under a linearized observation `z = H x + bias + noise` as a
//! pseudo-time `lambda` runs from 0 to 1. At each `lambda` the drift is
//! affine, `dx/dlambda = A(lambda) x + c(lambda)`, with
//!
//! ```text
//! A = -1/2 P H^T (lambda H P H^T + R)^-1 H
//! c = (I + 2 lambda A) [ (I + lambda A) P H^T R^-1 (z - bias) + A mean0 ]
//! ```
//!
//! `R` is diagonal throughout; observation rows are independent ranges.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::num;

/// ln(2 pi), the normalization constant of Gaussian log densities.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Pseudo-time discretization of the flow: strictly increasing `lambdas`
/// ending at exactly 1, with `deltas[l] = lambdas[l] - lambdas[l-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSchedule {
    lambdas: Vec<f64>,
    deltas: Vec<f64>,
}

impl FlowSchedule {
    /// Grid whose step sizes grow geometrically by `ratio`, so early steps
    /// are fine where the drift changes fastest. `ratio = 1` is uniform.
    pub fn exponential(steps: usize, ratio: f64) -> Result<Self, Error> {
        if steps == 0 {
            return Err(Error::InvalidParameter("schedule steps"));
        }
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::InvalidParameter("schedule ratio"));
        }
        let deltas = if num::abs(ratio - 1.0) < 1e-12 {
            vec![1.0 / steps as f64; steps]
        } else {
            let mut ratio_pow = 1.0;
            for _ in 0..steps {
                ratio_pow *= ratio;
            }
            let first = (ratio - 1.0) / (ratio_pow - 1.0);
            let mut d = Vec::with_capacity(steps);
            let mut cur = first;
            for _ in 0..steps {
                d.push(cur);
                cur *= ratio;
            }
            d
        };
        Self::from_deltas(&deltas)
    }

    /// Grid built from explicit step sizes, normalized to total pseudo-time
    /// 1. Each step must be positive.
    pub fn from_deltas(deltas: &[f64]) -> Result<Self, Error> {
        if deltas.is_empty() {
            return Err(Error::InvalidParameter("schedule steps"));
        }
        let mut sum = 0.0;
        for &d in deltas {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidParameter("schedule deltas"));
            }
            sum += d;
        }
        let mut lambdas = Vec::with_capacity(deltas.len());
        let mut acc = 0.0;
        for &d in deltas {
            acc += d / sum;
            lambdas.push(acc);
        }
        // Rounding can land the last point a few ulps off 1; pin it so the
        // flow always terminates exactly at the posterior.
        *lambdas.last_mut().expect("nonempty") = 1.0;
        let mut out_deltas = Vec::with_capacity(deltas.len());
        let mut prev = 0.0;
        for &l in &lambdas {
            out_deltas.push(l - prev);
            prev = l;
        }
        if out_deltas.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidParameter("schedule deltas"));
        }
        Ok(FlowSchedule { lambdas, deltas: out_deltas })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }
}

/// Observation model linearized at some reference point: `z ~ N(H x + bias,
/// diag(noise_var))`. `bias` absorbs the nonlinearity, `h(x_ref) - H x_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedObservation {
    pub h: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub z: DVector<f64>,
    pub noise_var: DVector<f64>,
}

impl LinearizedObservation {
    fn validate(&self, state_dim: usize) -> Result<(), Error> {
        let m = self.h.nrows();
        if self.h.ncols() != state_dim {
            return Err(Error::DimensionMismatch { expected: state_dim, found: self.h.ncols() });
        }
        for (len, _name) in
            [(self.bias.len(), "bias"), (self.z.len(), "z"), (self.noise_var.len(), "noise_var")]
        {
            if len != m {
                return Err(Error::DimensionMismatch { expected: m, found: len });
            }
        }
        if self.noise_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("noise_var"));
        }
        Ok(())
    }
}

/// Drift coefficients of the flow at one pseudo-time.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCoefficients {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Cholesky factorization with one jitter retry. Covariances passed around
/// the filters are positive definite in exact arithmetic but can lose that
/// to rounding; a single small diagonal bump recovers those cases.
pub(crate) fn cholesky_with_jitter(
    matrix: &DMatrix<f64>,
    context: &'static str,
) -> Result<Cholesky<f64, Dyn>, Error> {
    if let Some(chol) = matrix.clone().cholesky() {
        return Ok(chol);
    }
    let mut bumped = matrix.clone();
    for i in 0..bumped.nrows() {
        bumped[(i, i)] += 1e-9;
    }
    bumped.cholesky().ok_or(Error::NotPositiveDefinite(context))
}

/// Computes the drift coefficients at pseudo-time `lambda` for the prior
/// `N(prior_mean, prior_cov)` and the given linearized observation.
///
/// With no observation rows the drift is zero and the flow leaves the
/// prior untouched.
pub fn flow_coefficients(
    prior_cov: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    obs: &LinearizedObservation,
    lambda: f64,
) -> Result<FlowCoefficients, Error> {
    let n = prior_mean.len();
    if prior_cov.nrows() != n || prior_cov.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: prior_cov.nrows() });
    }
    obs.validate(n)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter("lambda"));
    }
    let m = obs.h.nrows();
    if m == 0 {
        return Ok(FlowCoefficients { a: DMatrix::zeros(n, n), c: DVector::zeros(n) });
    }
    // Solving in measurement space costs O(m^3); past m = n the state-space
    // form below is both cheaper and better conditioned.
    let a = if m <= n {
        flow_gain_measurement_space(prior_cov, obs, lambda)?
    } else {
        flow_gain_state_space(prior_cov, obs, lambda)?
    };

    // c = (I + 2 lambda A) [ (I + lambda A) P H^T R^-1 (z - bias) + A mean0 ]
    let mut residual = &obs.z - &obs.bias;
    for r in 0..m {
        residual[r] /= obs.noise_var[r];
    }
    let phr = prior_cov * (obs.h.transpose() * residual);
    let mut inner = &a * &phr;
    inner *= lambda;
    inner += &phr;
    inner += &a * prior_mean;
    let mut c = &a * &inner;
    c *= 2.0 * lambda;
    c += &inner;
    Ok(FlowCoefficients { a, c })
}

/// `A` via the m-by-m innovation system: `A = -1/2 P H^T S^-1 H` with
/// `S = lambda H P H^T + R`.
fn flow_gain_measurement_space(
    prior_cov: &DMatrix<f64>,
    obs: &LinearizedObservation,
    lambda: f64,
) -> Result<DMatrix<f64>, Error> {
    let m = obs.h.nrows();
    let pht = prior_cov * obs.h.transpose();
    let mut s = &obs.h * &pht;
    s *= lambda;
    for r in 0..m {
        s[(r, r)] += obs.noise_var[r];
    }
    let chol = cholesky_with_jitter(&s, "flow innovation")?;
    let s_inv_h = chol.solve(&obs.h);
    let mut a = &pht * &s_inv_h;
    a *= -0.5;
    Ok(a)
}

/// `A` via the n-by-n information system, avoiding the m-by-m solve:
/// `H^T S^-1 H = T - lambda T M^-1 T` with `T = H^T R^-1 H` and
/// `M = P^-1 + lambda T`.
fn flow_gain_state_space(
    prior_cov: &DMatrix<f64>,
    obs: &LinearizedObservation,
    lambda: f64,
) -> Result<DMatrix<f64>, Error> {
    let m = obs.h.nrows();
    let mut rinv_h = obs.h.clone();
    for r in 0..m {
        let inv = 1.0 / obs.noise_var[r];
        for c in 0..rinv_h.ncols() {
            rinv_h[(r, c)] *= inv;
        }
    }
    let t = obs.h.transpose() * &rinv_h;
    let p_chol = cholesky_with_jitter(prior_cov, "flow prior covariance")?;
    let p_inv = p_chol.inverse();
    let mut m_mat = t.clone();
    m_mat *= lambda;
    m_mat += &p_inv;
    let m_chol = cholesky_with_jitter(&m_mat, "flow information system")?;
    let m_inv_t = m_chol.solve(&t);
    let mut hsh = &t * &m_inv_t;
    hsh *= -lambda;
    hsh += &t;
    let mut a = prior_cov * &hsh;
    a *= -0.5;
    Ok(a)
}

/// Drift coefficients as a function of the current mean and the step's
/// pseudo-time, reevaluated at every integration step.
pub type DriftProvider<'a> =
    dyn FnMut(&DVector<f64>, f64) -> Result<FlowCoefficients, Error> + 'a;

/// Integrates the flow over `schedule`, migrating the first `active_rows`
/// rows of `particles` and `mean` while treating the remaining rows as
/// fixed parameters of the drift.
///
/// `provider` is called once per step with the current mean and the step's
/// pseudo-time, so the observation can be relinearized as the mean
/// migrates. The drift coefficients apply to the state from the previous
/// step (explicit Euler).
pub fn flow_integrate(
    particles: &mut DMatrix<f64>,
    mean: &mut DVector<f64>,
    schedule: &FlowSchedule,
    active_rows: usize,
    provider: &mut DriftProvider,
) -> Result<(), Error> {
    let n = mean.len();
    if particles.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: particles.nrows() });
    }
    if active_rows > n {
        return Err(Error::DimensionMismatch { expected: n, found: active_rows });
    }
    let count = particles.ncols();
    for l in 0..schedule.len() {
        let lambda = schedule.lambdas[l];
        let delta = schedule.deltas[l];
        let coeff = provider(mean, lambda)?;
        if coeff.a.nrows() != n || coeff.a.ncols() != n || coeff.c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: coeff.a.nrows() });
        }
        let a_active = coeff.a.rows(0, active_rows);
        let mut drift = a_active * &*particles;
        for col in 0..count {
            for r in 0..active_rows {
                drift[(r, col)] += coeff.c[r];
            }
        }
        let mut mean_drift = a_active * &*mean;
        for r in 0..active_rows {
            mean_drift[r] += coeff.c[r];
        }
        drift *= delta;
        let mut active = particles.rows_mut(0, active_rows);
        active += &drift;
        mean_drift *= delta;
        let mut active_mean = mean.rows_mut(0, active_rows);
        active_mean += &mean_drift;
    }
    Ok(())
}

/// Importance weights for particles carried through an invertible flow.
///
/// For each particle index the three callbacks evaluate the log prior and
/// log likelihood at the flowed particle and the log proposal density at
/// the starting particle; the weight is their log ratio, exponentiated
/// stably and normalized. Fails if every weight underflows to zero.
pub fn invertible_flow_reweight(
    start: &DMatrix<f64>,
    end: &DMatrix<f64>,
    log_prior: &mut dyn FnMut(usize, &DVector<f64>) -> f64,
    log_likelihood: &mut dyn FnMut(usize, &DVector<f64>) -> f64,
    log_proposal: &mut dyn FnMut(usize, &DVector<f64>) -> f64,
) -> Result<DVector<f64>, Error> {
    if start.ncols() != end.ncols() || start.nrows() != end.nrows() {
        return Err(Error::DimensionMismatch { expected: start.ncols(), found: end.ncols() });
    }
    let count = start.ncols();
    if count == 0 {
        return Err(Error::InvalidParameter("particle count"));
    }
    let mut log_w = DVector::zeros(count);
    for m in 0..count {
        let s = start.column(m).into_owned();
        let e = end.column(m).into_owned();
        log_w[m] = log_prior(m, &e) + log_likelihood(m, &e) - log_proposal(m, &s);
    }
    weights_from_log(log_w)
}

/// Normalizes unnormalized log-weights into a probability vector, guarding
/// against overflow by subtracting the maximum before exponentiating.
pub fn weights_from_log(log_w: DVector<f64>) -> Result<DVector<f64>, Error> {
    let count = log_w.len();
    if count == 0 {
        return Err(Error::InvalidParameter("particle count"));
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut weights = DVector::zeros(count);
    let mut sum = 0.0;
    for m in 0..count {
        let w = num::exp(log_w[m] - max);
        weights[m] = w;
        sum += w;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    weights /= sum;
    Ok(weights)
}

/// Result of a sigma-point covariance update.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPointUpdate {
    /// Posterior covariance.
    pub cov: DMatrix<f64>,
    /// Kalman gain used for the covariance reduction.
    pub gain: DMatrix<f64>,
    /// Innovation covariance including measurement noise.
    pub innovation_cov: DMatrix<f64>,
}

/// Kalman covariance update through the unscented transform.
///
/// Sigma points are placed at `mean` and `mean +- sqrt(n) L e_i` with
/// `L L^T = pred_cov`; the center point carries zero mean weight and
/// covariance weight 2, the rest `1/(2n)` each. For a linear observation
/// this reproduces the exact Kalman update. The mean itself is not
/// updated; the flow owns the mean.
pub fn sigma_point_cov_update(
    pred_cov: &DMatrix<f64>,
    mean: &DVector<f64>,
    observe: &mut dyn FnMut(&DVector<f64>) -> DVector<f64>,
    noise_var: &DVector<f64>,
) -> Result<SigmaPointUpdate, Error> {
    let n = mean.len();
    if pred_cov.nrows() != n || pred_cov.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: pred_cov.nrows() });
    }
    let m = noise_var.len();
    if m == 0 {
        return Ok(SigmaPointUpdate {
            cov: pred_cov.clone(),
            gain: DMatrix::zeros(n, 0),
            innovation_cov: DMatrix::zeros(0, 0),
        });
    }
    if noise_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("noise_var"));
    }
    let chol = cholesky_with_jitter(pred_cov, "sigma point covariance")?;
    let l = chol.l();
    let scale = num::sqrt(n as f64);

    let n_points = 2 * n + 1;
    let mut points = Vec::with_capacity(n_points);
    points.push(mean.clone());
    for i in 0..n {
        let offset = l.column(i) * scale;
        points.push(mean + &offset);
        points.push(mean - &offset);
    }
    let mut observed = Vec::with_capacity(n_points);
    for p in &points {
        let z = observe(p);
        if z.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: z.len() });
        }
        observed.push(z);
    }

    let w_side = 1.0 / (2.0 * n as f64);
    let mut z_mean = DVector::zeros(m);
    for z in observed.iter().skip(1) {
        z_mean += z * w_side;
    }

    let w_center_cov = 2.0;
    let mut innovation = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(n, m);
    for (j, z) in observed.iter().enumerate() {
        let dz = z - &z_mean;
        let w = if j == 0 { w_center_cov } else { w_side };
        innovation += (&dz * dz.transpose()) * w;
        if j > 0 {
            let dx = &points[j] - mean;
            cross += (&dx * dz.transpose()) * w;
        }
    }
    for r in 0..m {
        innovation[(r, r)] += noise_var[r];
    }

    let s_chol = cholesky_with_jitter(&innovation, "innovation covariance")?;
    let gain = s_chol.solve(&cross.transpose()).transpose();
    let mut cov = pred_cov - &gain * &innovation * gain.transpose();
    // The subtraction can leave tiny asymmetry; keep the invariant exact.
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            cov[(r, c)] = avg;
            cov[(c, r)] = avg;
        }
    }
    Ok(SigmaPointUpdate { cov, gain, innovation_cov: innovation })
}

/// One covariance prediction step, `F P F^T + W`. Both filters route
/// through this so joint and marginal paths do identical arithmetic.
pub fn predict_covariance(
    transition: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    process_noise: &DMatrix<f64>,
) -> DMatrix<f64> {
    transition * cov * transition.transpose() + process_noise
}

/// Systematic resampling: one uniform draw positions an evenly spaced comb
/// over the weight CDF. Returns the selected particle indices, ascending.
/// Every index appears either `floor(M w)` or `ceil(M w)` times.
pub fn systematic_resample<R: Rng + ?Sized>(
    weights: &DVector<f64>,
    rng: &mut R,
) -> Result<Vec<usize>, Error> {
    systematic_resample_n(weights, weights.len(), rng)
}

/// Systematic resampling with an explicit number of draws, for consumers
/// that grow or shrink the particle count. Same comb construction and
/// count guarantee as [`systematic_resample`], with `draws` teeth.
pub fn systematic_resample_n<R: Rng + ?Sized>(
    weights: &DVector<f64>,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<usize>, Error> {
    let count = weights.len();
    if count == 0 || draws == 0 {
        return Err(Error::InvalidParameter("particle count"));
    }
    let mut sum = 0.0;
    for &w in weights.iter() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::DegenerateWeights);
        }
        sum += w;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let offset: f64 = rng.gen::<f64>();
    let mut indices = Vec::with_capacity(draws);
    let mut cumulative = weights[0] / sum;
    let mut j = 0usize;
    for m in 0..draws {
        let position = (m as f64 + offset) / draws as f64;
        while position > cumulative && j + 1 < count {
            j += 1;
            cumulative += weights[j] / sum;
        }
        indices.push(j);
    }
    Ok(indices)
}

/// Post-resampling jitter scales for the unobservable state blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    pub sigma_vel: f64,
    pub sigma_acc: f64,
}

/// Adds independent Gaussian jitter to the velocity and acceleration rows
/// of each 9-row state block, leaving positions untouched. A zero scale
/// draws nothing, so disabling a block keeps the random stream unchanged.
pub fn regularize<R: Rng + ?Sized>(
    particles: &mut DMatrix<f64>,
    reg: &Regularization,
    rng: &mut R,
) {
    debug_assert_eq!(particles.nrows() % 9, 0);
    let blocks = particles.nrows() / 9;
    for b in 0..blocks {
        let base = 9 * b;
        for m in 0..particles.ncols() {
            if reg.sigma_vel > 0.0 {
                for r in 3..6 {
                    let noise: f64 = rng.sample(StandardNormal);
                    particles[(base + r, m)] += reg.sigma_vel * noise;
                }
            }
            if reg.sigma_acc > 0.0 {
                for r in 6..9 {
                    let noise: f64 = rng.sample(StandardNormal);
                    particles[(base + r, m)] += reg.sigma_acc * noise;
                }
            }
        }
    }
}

/// Adds the regularization variances to the matching diagonal entries of a
/// stacked covariance, keeping tracked covariances consistent with
/// jittered particles.
pub fn regularize_cov(cov: &mut DMatrix<f64>, reg: &Regularization) {
    debug_assert_eq!(cov.nrows() % 9, 0);
    debug_assert_eq!(cov.nrows(), cov.ncols());
    let blocks = cov.nrows() / 9;
    for b in 0..blocks {
        let base = 9 * b;
        for r in 3..6 {
            cov[(base + r, base + r)] += reg.sigma_vel * reg.sigma_vel;
        }
        for r in 6..9 {
            cov[(base + r, base + r)] += reg.sigma_acc * reg.sigma_acc;
        }
    }
}

/// Multivariate Gaussian with a cached factorization for repeated log
/// density evaluations.
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self, Error> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: cov.nrows() });
        }
        let chol = cholesky_with_jitter(cov, "density covariance")?;
        let mut log_det = 0.0;
        let l = chol.l();
        for i in 0..n {
            log_det += num::ln(l[(i, i)]);
        }
        log_det *= 2.0;
        let log_norm = -0.5 * (n as f64 * LN_2PI + log_det);
        Ok(GaussianDensity { mean, chol, log_norm })
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let solved = self.chol.solve(&d);
        self.log_norm - 0.5 * d.dot(&solved)
    }
}

/// Log density of `N(mean, sigma^2)` at `x`.
pub fn log_gauss_scalar(x: f64, mean: f64, sigma: f64) -> f64 {
    let standardized = (x - mean) / sigma;
    -0.5 * LN_2PI - num::ln(sigma) - 0.5 * standardized * standardized
}

/// Effective sample size `(sum w)^2 / sum w^2` of a weight vector.
pub fn effective_sample_size(weights: &DVector<f64>) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq > 0.0 {
        sum * sum / sum_sq
    } else {
        0.0
    }
}

/// Stacks square or rectangular blocks along the diagonal.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    let mut c = 0;
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Partner-covariance inflation for message-passing iteration `u` of
/// `total`, halving from `alpha_max` and reaching exactly zero on the final
/// iteration so the last pass runs on the partners' reported covariances.
pub fn anneal_alpha(u: usize, total: usize, alpha_max: f64) -> f64 {
    debug_assert!(u >= 1 && u <= total);
    if u >= total || alpha_max == 0.0 {
        return 0.0;
    }
    let mut alpha = alpha_max;
    for _ in 1..u {
        alpha *= 0.5;
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn scalar_obs(z: f64, noise_var: f64) -> LinearizedObservation {
        LinearizedObservation {
            h: DMatrix::from_element(1, 1, 1.0),
            bias: DVector::zeros(1),
            z: DVector::from_element(1, z),
            noise_var: DVector::from_element(1, noise_var),
        }
    }

    #[test]
    fn exponential_schedule_ends_at_one_with_constant_ratio() {
        let s = FlowSchedule::exponential(20, 1.2).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(*s.lambdas().last().unwrap(), 1.0);
        assert!(s.lambdas().windows(2).all(|w| w[0] < w[1]));
        for w in s.deltas().windows(2) {
            assert!((w[1] / w[0] - 1.2).abs() < 1e-9, "ratio {}", w[1] / w[0]);
        }
    }

    #[test]
    fn unit_ratio_gives_uniform_schedule() {
        let s = FlowSchedule::exponential(10, 1.0).unwrap();
        for &d in s.deltas() {
            assert!((d - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(FlowSchedule::exponential(0, 1.2).is_err());
        assert!(FlowSchedule::exponential(10, 0.0).is_err());
        assert!(FlowSchedule::from_deltas(&[0.5, -0.1]).is_err());
        assert!(FlowSchedule::from_deltas(&[]).is_err());
    }

    #[test]
    fn from_deltas_normalizes_total_pseudo_time() {
        let s = FlowSchedule::from_deltas(&[2.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.lambdas(), &[0.25, 0.5, 1.0]);
    }

    #[test]
    fn scalar_flow_coefficients_match_hand_computation() {
        // Unit prior, unit noise, z = 1: A(l) = -1/(2(1+l)) and
        // c(l) = (1 + 2 l A)(1 + l A).
        let p = DMatrix::from_element(1, 1, 1.0);
        let mean = DVector::zeros(1);
        let obs = scalar_obs(1.0, 1.0);
        let at0 = flow_coefficients(&p, &mean, &obs, 0.0).unwrap();
        assert!((at0.a[(0, 0)] + 0.5).abs() < 1e-15);
        assert!((at0.c[0] - 1.0).abs() < 1e-15);
        let at1 = flow_coefficients(&p, &mean, &obs, 1.0).unwrap();
        assert!((at1.a[(0, 0)] + 0.25).abs() < 1e-15);
        assert!((at1.c[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn scalar_flow_converges_to_kalman_posterior_mean() {
        // Prior N(0,1), observation z = 1 with unit noise: posterior mean
        // is 1/2. The dense schedule keeps Euler error below a percent.
        let p = DMatrix::from_element(1, 1, 1.0);
        let mut mean = DVector::zeros(1);
        let mut particles = DMatrix::zeros(1, 1);
        let obs = scalar_obs(1.0, 1.0);
        let schedule = FlowSchedule::exponential(200, 1.0).unwrap();
        flow_integrate(&mut particles, &mut mean, &schedule, 1, &mut |_, lambda| {
            flow_coefficients(&p, &DVector::zeros(1), &obs, lambda)
        })
        .unwrap();
        assert!((mean[0] - 0.5).abs() < 0.005, "mean {}", mean[0]);
        assert!((particles[(0, 0)] - 0.5).abs() < 0.005);
    }

    #[test]
    fn inactive_rows_stay_fixed_during_integration() {
        let p = DMatrix::identity(2, 2);
        let obs = LinearizedObservation {
            h: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            bias: DVector::zeros(1),
            z: DVector::from_element(1, 2.0),
            noise_var: DVector::from_element(1, 1.0),
        };
        let mut mean = DVector::from_column_slice(&[0.0, 0.7]);
        let mut particles = DMatrix::from_column_slice(2, 1, &[0.0, 0.7]);
        let schedule = FlowSchedule::exponential(50, 1.0).unwrap();
        let prior_mean = mean.clone();
        flow_integrate(&mut particles, &mut mean, &schedule, 1, &mut |_, lambda| {
            flow_coefficients(&p, &prior_mean, &obs, lambda)
        })
        .unwrap();
        assert_eq!(mean[1], 0.7);
        assert_eq!(particles[(1, 0)], 0.7);
        assert!(mean[0] != 0.0);
    }

    #[test]
    fn empty_observation_leaves_prior_untouched() {
        let p = DMatrix::identity(3, 3);
        let obs = LinearizedObservation {
            h: DMatrix::zeros(0, 3),
            bias: DVector::zeros(0),
            z: DVector::zeros(0),
            noise_var: DVector::zeros(0),
        };
        let mut mean = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let before = mean.clone();
        let mut particles = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let schedule = FlowSchedule::exponential(5, 1.0).unwrap();
        flow_integrate(&mut particles, &mut mean, &schedule, 3, &mut |_, lambda| {
            flow_coefficients(&p, &before, &obs, lambda)
        })
        .unwrap();
        assert_eq!(mean, before);
    }

    #[test]
    fn sigma_point_update_matches_kalman_for_linear_observation() {
        // Closed-form oracle: K = P H^T (H P H^T + R)^-1, P' = P - K S K^T,
        // written out entrywise for a 2-state, 1-row model.
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mean = DVector::from_column_slice(&[1.0, -1.0]);
        let h = [1.5, -0.5];
        let r = 0.25;
        let update = sigma_point_cov_update(
            &p,
            &mean,
            &mut |x| DVector::from_element(1, h[0] * x[0] + h[1] * x[1]),
            &DVector::from_element(1, r),
        )
        .unwrap();
        let php = h[0] * (h[0] * p[(0, 0)] + h[1] * p[(1, 0)])
            + h[1] * (h[0] * p[(0, 1)] + h[1] * p[(1, 1)]);
        let s = php + r;
        let k =
            [(p[(0, 0)] * h[0] + p[(0, 1)] * h[1]) / s, (p[(1, 0)] * h[0] + p[(1, 1)] * h[1]) / s];
        assert!((update.innovation_cov[(0, 0)] - s).abs() < 1e-10);
        for r_i in 0..2 {
            assert!((update.gain[(r_i, 0)] - k[r_i]).abs() < 1e-10);
            for c_i in 0..2 {
                let expected = p[(r_i, c_i)] - k[r_i] * s * k[c_i];
                assert!((update.cov[(r_i, c_i)] - expected).abs() < 1e-10);
            }
        }
        // A linear update never inflates the covariance.
        let shrink = &p - &update.cov;
        for ev in shrink.symmetric_eigenvalues().iter() {
            assert!(*ev > -1e-10);
        }
    }

    #[test]
    fn sigma_point_update_without_rows_returns_prior() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mean = DVector::from_column_slice(&[1.0, -1.0]);
        let update =
            sigma_point_cov_update(&p, &mean, &mut |_| DVector::zeros(0), &DVector::zeros(0))
                .unwrap();
        assert_eq!(update.cov, p);
    }

    #[test]
    fn systematic_resample_is_identity_for_uniform_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let weights = DVector::from_element(16, 1.0 / 16.0);
        let idx = systematic_resample(&weights, &mut rng).unwrap();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn systematic_resample_rejects_degenerate_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert_eq!(
            systematic_resample(&DVector::from_column_slice(&[0.0, 0.0]), &mut rng).unwrap_err(),
            Error::DegenerateWeights
        );
        assert_eq!(
            systematic_resample(&DVector::from_column_slice(&[1.0, f64::INFINITY]), &mut rng)
                .unwrap_err(),
            Error::DegenerateWeights
        );
    }

    #[test]
    fn single_step_schedule_is_one_full_step() {
        let s = FlowSchedule::exponential(1, 1.2).unwrap();
        assert_eq!(s.lambdas(), &[1.0]);
        assert_eq!(s.deltas(), &[1.0]);
    }

    #[test]
    fn two_step_schedule_splits_by_the_ratio() {
        let s = FlowSchedule::exponential(2, 1.2).unwrap();
        assert!((s.deltas()[0] - 1.0 / 2.2).abs() < 1e-15);
        assert!((s.deltas()[1] - 1.2 / 2.2).abs() < 1e-15);
        assert!((s.lambdas()[0] - 1.0 / 2.2).abs() < 1e-15);
        assert_eq!(s.lambdas()[1], 1.0);
    }

    #[test]
    fn point_mass_weights_repeat_one_index() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let w = DVector::from_vec(alloc::vec![1.0, 0.0, 0.0, 0.0]);
        let indices = systematic_resample(&w, &mut rng).unwrap();
        assert_eq!(indices, alloc::vec![0, 0, 0, 0]);
    }

    #[test]
    fn oversampling_hits_exact_expected_counts() {
        // Four draws over [0.5, 0.25, 0.25]: every expected count is an
        // integer, so the comb realizes it exactly for any offset.
        for seed in 0..16 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let w = DVector::from_vec(alloc::vec![0.5, 0.25, 0.25]);
            let indices = systematic_resample_n(&w, 4, &mut rng).unwrap();
            assert_eq!(indices.iter().filter(|&&i| i == 0).count(), 2);
            assert_eq!(indices.iter().filter(|&&i| i == 1).count(), 1);
            assert_eq!(indices.iter().filter(|&&i| i == 2).count(), 1);
        }
    }

    #[test]
    fn covariance_prediction_degenerate_cases() {
        let f = DMatrix::<f64>::identity(3, 3);
        let w = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![0.1, 0.2, 0.3]));
        let zero = DMatrix::zeros(3, 3);
        // Zero prior covariance forwards only the process noise.
        assert_eq!(predict_covariance(&f, &zero, &w), w);
        // Identity transition with zero noise keeps the prior.
        let p = DMatrix::from_fn(3, 3, |r, c| if r == c { 2.0 } else { 0.5 });
        assert_eq!(predict_covariance(&f, &p, &zero), p);
    }

    #[test]
    fn scalar_sigma_point_update_halves_unit_variance() {
        let p = DMatrix::from_element(1, 1, 1.0);
        let mean = DVector::from_element(1, 0.0);
        let update =
            sigma_point_cov_update(&p, &mean, &mut |x| x.clone(), &DVector::from_element(1, 1.0))
                .unwrap();
        assert!((update.cov[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_particle_reweight_normalizes_to_one() {
        let particles = DMatrix::from_element(1, 1, 3.0);
        let w = invertible_flow_reweight(
            &particles.clone(),
            &particles,
            &mut |_, _| -7.0,
            &mut |_, _| -1.3,
            &mut |_, _| -2.0,
        )
        .unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn matched_numerator_and_denominator_give_uniform_weights() {
        let particles = DMatrix::from_fn(2, 5, |r, c| (r + c) as f64);
        let w = invertible_flow_reweight(
            &particles.clone(),
            &particles,
            &mut |m, _| m as f64,
            &mut |_, _| 0.0,
            &mut |m, _| m as f64,
        )
        .unwrap();
        for i in 0..5 {
            assert!((w[i] - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn reweight_reduces_to_likelihood_for_identity_flow() {
        let particles = DMatrix::from_column_slice(1, 3, &[0.0, 1.0, 2.0]);
        let weights = invertible_flow_reweight(
            &particles.clone(),
            &particles,
            &mut |_, x| -x[0],
            &mut |_, x| log_gauss_scalar(1.0, x[0], 1.0),
            &mut |_, x| -x[0],
        )
        .unwrap();
        // Prior and proposal cancel; weights follow the Gaussian likelihood
        // centered on the middle particle.
        assert!(weights[1] > weights[0]);
        assert!(weights[1] > weights[2]);
        assert!((weights[0] - weights[2]).abs() < 1e-12);
        assert!((weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reweight_survives_extreme_log_magnitudes() {
        let particles = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        let weights = invertible_flow_reweight(
            &particles.clone(),
            &particles,
            &mut |_, _| 0.0,
            &mut |m, _| if m == 0 { -4000.0 } else { -4010.0 },
            &mut |_, _| 0.0,
        )
        .unwrap();
        assert!(weights[0] > weights[1]);
        assert!((weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reweight_fails_when_all_weights_vanish() {
        let particles = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        let result = invertible_flow_reweight(
            &particles.clone(),
            &particles,
            &mut |_, _| f64::NEG_INFINITY,
            &mut |_, _| 0.0,
            &mut |_, _| 0.0,
        );
        assert_eq!(result.unwrap_err(), Error::DegenerateWeights);
    }

    #[test]
    fn regularization_leaves_positions_bit_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut particles = DMatrix::from_fn(18, 5, |r, c| (r * 5 + c) as f64 * 0.1);
        let before = particles.clone();
        regularize(&mut particles, &Regularization { sigma_vel: 0.2, sigma_acc: 0.3 }, &mut rng);
        for b in 0..2 {
            for m in 0..5 {
                for r in 0..3 {
                    assert_eq!(particles[(9 * b + r, m)], before[(9 * b + r, m)]);
                }
                for r in 3..9 {
                    assert_ne!(particles[(9 * b + r, m)], before[(9 * b + r, m)]);
                }
            }
        }
    }

    #[test]
    fn zero_scale_regularization_is_a_no_op() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut particles = DMatrix::from_fn(9, 4, |r, c| (r + c) as f64);
        let before = particles.clone();
        regularize(&mut particles, &Regularization { sigma_vel: 0.0, sigma_acc: 0.0 }, &mut rng);
        assert_eq!(particles, before);
    }

    #[test]
    fn regularize_cov_bumps_only_velocity_and_acceleration() {
        let mut cov = DMatrix::identity(9, 9);
        regularize_cov(&mut cov, &Regularization { sigma_vel: 0.5, sigma_acc: 2.0 });
        for r in 0..3 {
            assert_eq!(cov[(r, r)], 1.0);
        }
        for r in 3..6 {
            assert_eq!(cov[(r, r)], 1.25);
        }
        for r in 6..9 {
            assert_eq!(cov[(r, r)], 5.0);
        }
    }

    #[test]
    fn gaussian_density_matches_scalar_formula() {
        let d =
            GaussianDensity::new(DVector::from_element(1, 2.0), &DMatrix::from_element(1, 1, 4.0))
                .unwrap();
        assert!(
            (d.logpdf(&DVector::from_element(1, 3.0)) - log_gauss_scalar(3.0, 2.0, 2.0)).abs()
                < 1e-12
        );
    }

    #[test]
    fn gaussian_density_factorizes_over_independent_coordinates() {
        let mut cov = DMatrix::zeros(3, 3);
        cov[(0, 0)] = 1.0;
        cov[(1, 1)] = 4.0;
        cov[(2, 2)] = 0.25;
        let mean = DVector::from_column_slice(&[0.0, 1.0, -1.0]);
        let d = GaussianDensity::new(mean, &cov).unwrap();
        let x = DVector::from_column_slice(&[0.5, 2.0, -0.5]);
        let expected = log_gauss_scalar(0.5, 0.0, 1.0)
            + log_gauss_scalar(2.0, 1.0, 2.0)
            + log_gauss_scalar(-0.5, -1.0, 0.5);
        assert!((d.logpdf(&x) - expected).abs() < 1e-12);
    }

    #[test]
    fn effective_sample_size_bounds() {
        let uniform = DVector::from_element(50, 1.0 / 50.0);
        assert!((effective_sample_size(&uniform) - 50.0).abs() < 1e-9);
        let mut one_hot = DVector::zeros(50);
        one_hot[3] = 1.0;
        assert!((effective_sample_size(&one_hot) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let d = block_diag(&[&a, &b]);
        assert_eq!(d.nrows(), 3);
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(1, 1)], 1.0);
        assert_eq!(d[(2, 1)], 3.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(1, 0)], 0.0);
    }

    #[test]
    fn annealing_halves_and_ends_at_zero() {
        assert_eq!(anneal_alpha(1, 3, 8.0), 8.0);
        assert_eq!(anneal_alpha(2, 3, 8.0), 4.0);
        assert_eq!(anneal_alpha(3, 3, 8.0), 0.0);
        assert_eq!(anneal_alpha(1, 1, 8.0), 0.0);
        assert_eq!(anneal_alpha(2, 4, 0.0), 0.0);
    }

    fn random_spd(n: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn flow_gain_branches_agree(seed in 0u64..1_000_000, m in 1usize..8, n in 1usize..6) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let p = random_spd(n, &mut rng);
            let obs = LinearizedObservation {
                h: DMatrix::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0),
                bias: DVector::zeros(m),
                z: DVector::from_fn(m, |_, _| rng.gen::<f64>()),
                noise_var: DVector::from_fn(m, |_, _| 0.1 + rng.gen::<f64>()),
            };
            let lambda = rng.gen::<f64>();
            let direct = flow_gain_measurement_space(&p, &obs, lambda).unwrap();
            let wood = flow_gain_state_space(&p, &obs, lambda).unwrap();
            let scale = direct.amax().max(1.0);
            prop_assert!((direct - wood).amax() / scale < 1e-8);
        }

        #[test]
        fn resample_counts_stay_within_unit_of_expectation(seed in 0u64..1_000_000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let count = 64;
            let raw = DVector::from_fn(count, |_, _| rng.gen::<f64>() + 1e-6);
            let weights = &raw / raw.sum();
            let idx = systematic_resample(&weights, &mut rng).unwrap();
            prop_assert_eq!(idx.len(), count);
            let mut occurrences = vec![0usize; count];
            for &i in &idx {
                occurrences[i] += 1;
            }
            for i in 0..count {
                let expected = weights[i] * count as f64;
                let lo = expected.floor() as usize;
                let hi = expected.ceil() as usize;
                prop_assert!(occurrences[i] >= lo && occurrences[i] <= hi,
                    "index {} occurred {} times, expected in [{}, {}]", i, occurrences[i], lo, hi);
            }
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn sigma_point_cov_stays_symmetric_psd(seed in 0u64..1_000_000, n in 2usize..6) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let p = random_spd(n, &mut rng);
            let mean = DVector::from_fn(n, |_, _| rng.gen::<f64>());
            let h = DMatrix::from_fn(2, n, |_, _| rng.gen::<f64>() - 0.5);
            let update = sigma_point_cov_update(
                &p,
                &mean,
                &mut |x| &h * x,
                &DVector::from_element(2, 0.5),
            ).unwrap();
            prop_assert_eq!(&update.cov, &update.cov.transpose());
            let eig = update.cov.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&e| e > -1e-9));
        }
    }
}
