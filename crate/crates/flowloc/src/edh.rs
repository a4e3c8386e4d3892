//! Centralized joint-state flow filter: all agents share one stacked state
//! and every measurement of a time step enters a single flow.
//!
//! Per step: propagate particles and covariance, migrate the particles
//! through the Gaussian flow (relinearized at the moving stacked mean),
//! reweight against the moment-matched predicted Gaussian, resample, and
//! refresh the covariance with a sigma-point update. The joint covariance
//! solve grows cubically with the agent count, which is what the per-agent
//! message-passing filter avoids.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::flow::{
    block_diag, flow_coefficients, flow_integrate, invertible_flow_reweight, predict_covariance,
    regularize, regularize_cov, sigma_point_cov_update, systematic_resample, FlowSchedule,
    GaussianDensity, LinearizedObservation, Regularization,
};
use crate::model::{
    block_position, range, range_jacobian_block, Anchor, MeasurementTarget, MotionModel,
    NetworkSnapshot, ParticleSet, STATE_DIM,
};
use crate::rng::{RunStreams, StreamKind};

/// Joint belief over all agents: stacked particles (agent blocks in
/// ascending index) plus the tracked joint covariance.
#[derive(Clone, Debug)]
pub struct JointBelief {
    pub particles: ParticleSet,
    pub cov: DMatrix<f64>,
}

impl JointBelief {
    /// Stacks per-agent priors into one joint belief. Particle `m` of the
    /// joint state is the concatenation of each agent's particle `m`.
    pub fn from_agents(agents: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<Self, Error> {
        if agents.is_empty() {
            return Err(Error::InvalidParameter("agent count"));
        }
        let count = agents[0].0.ncols();
        let mut samples = DMatrix::zeros(STATE_DIM * agents.len(), count);
        let mut cov_refs = Vec::with_capacity(agents.len());
        for (i, (particles, cov)) in agents.iter().enumerate() {
            if particles.nrows() != STATE_DIM || particles.ncols() != count {
                return Err(Error::DimensionMismatch {
                    expected: STATE_DIM,
                    found: particles.nrows(),
                });
            }
            samples.rows_mut(STATE_DIM * i, STATE_DIM).copy_from(particles);
            cov_refs.push(cov);
        }
        let refs: Vec<&DMatrix<f64>> = cov_refs.to_vec();
        Ok(JointBelief { particles: ParticleSet::new_uniform(samples)?, cov: block_diag(&refs) })
    }

    pub fn n_agents(&self) -> usize {
        self.particles.dim() / STATE_DIM
    }
}

/// Output of one joint filter step.
#[derive(Clone, Debug)]
pub struct EdhStep {
    /// Resampled (and optionally regularized) joint particles.
    pub belief: JointBelief,
    /// Joint posterior mean, the sample mean after resampling.
    pub mean: DVector<f64>,
}

/// Linearizes every measurement of the snapshot at the joint state `mean`.
///
/// One row per stored measurement, in snapshot iteration order (agents
/// ascending, anchor rows before cooperative rows). Anchor rows touch only
/// the measuring agent's block; cooperative rows touch both endpoint
/// blocks with opposite-signed direction vectors.
pub fn build_joint_observation(
    snapshot: &NetworkSnapshot,
    mean: &DVector<f64>,
    anchors: &[Anchor],
    sigma: f64,
) -> Result<LinearizedObservation, Error> {
    let n = mean.len();
    if n != STATE_DIM * snapshot.n_agents() {
        return Err(Error::DimensionMismatch {
            expected: STATE_DIM * snapshot.n_agents(),
            found: n,
        });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter("sigma"));
    }
    let m = snapshot.len();
    let mut h = DMatrix::zeros(m, n);
    let mut predicted = DVector::zeros(m);
    let mut z = DVector::zeros(m);
    for (r, meas) in snapshot.measurements().enumerate() {
        let own = block_position(mean, meas.agent);
        match meas.target {
            MeasurementTarget::Anchor(a) => {
                let row = range_jacobian_block(&own, &anchors[a].position)?;
                h.view_mut((r, STATE_DIM * meas.agent), (1, STATE_DIM)).copy_from(&row);
                predicted[r] = range(&own, &anchors[a].position);
            }
            MeasurementTarget::Agent(j) => {
                let other = block_position(mean, j);
                let row_own = range_jacobian_block(&own, &other)?;
                let row_other = range_jacobian_block(&other, &own)?;
                h.view_mut((r, STATE_DIM * meas.agent), (1, STATE_DIM)).copy_from(&row_own);
                h.view_mut((r, STATE_DIM * j), (1, STATE_DIM)).copy_from(&row_other);
                predicted[r] = range(&own, &other);
            }
        }
        z[r] = meas.range;
    }
    let bias = predicted - &h * mean;
    Ok(LinearizedObservation { h, bias, z, noise_var: DVector::from_element(m, sigma * sigma) })
}

/// Log likelihood of all snapshot measurements at the joint state `x`.
fn joint_log_likelihood(
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    sigma: f64,
    x: &DVector<f64>,
) -> f64 {
    let mut total = 0.0;
    for meas in snapshot.measurements() {
        let own = block_position(x, meas.agent);
        let predicted = match meas.target {
            MeasurementTarget::Anchor(a) => range(&own, &anchors[a].position),
            MeasurementTarget::Agent(j) => range(&own, &block_position(x, j)),
        };
        total += crate::flow::log_gauss_scalar(meas.range, predicted, sigma);
    }
    total
}

/// Predicted ranges of all snapshot measurements at the joint state `x`.
fn joint_observe(snapshot: &NetworkSnapshot, anchors: &[Anchor], x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(snapshot.len());
    for (r, meas) in snapshot.measurements().enumerate() {
        let own = block_position(x, meas.agent);
        out[r] = match meas.target {
            MeasurementTarget::Anchor(a) => range(&own, &anchors[a].position),
            MeasurementTarget::Agent(j) => range(&own, &block_position(x, j)),
        };
    }
    out
}

/// Advances the joint belief by one time step against the measurements in
/// `snapshot`.
///
/// A degenerate weight vector is an error here: the joint filter has no
/// per-agent fallback, so the caller decides whether the run is lost.
pub fn edh_time_step(
    belief: &JointBelief,
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    model: &MotionModel,
    sigma: f64,
    schedule: &FlowSchedule,
    regularization: Option<&Regularization>,
    streams: &RunStreams,
) -> Result<EdhStep, Error> {
    let n_agents = snapshot.n_agents();
    let n = STATE_DIM * n_agents;
    if belief.particles.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: belief.particles.dim() });
    }
    if belief.particles.len() < 2 {
        return Err(Error::InvalidParameter("particle count"));
    }
    let k = snapshot.time_index;

    let mut predicted = belief.particles.samples().clone();
    for i in 0..n_agents {
        let mut rng = streams.stream(StreamKind::Propagation, k, i, 0);
        crate::model::propagate_particle_block(model, &mut predicted, STATE_DIM * i, &mut rng);
    }
    let f_single = model.f_dyn();
    let q_single = model.q_dyn();
    let f_refs: Vec<&DMatrix<f64>> = (0..n_agents).map(|_| &f_single).collect();
    let q_refs: Vec<&DMatrix<f64>> = (0..n_agents).map(|_| &q_single).collect();
    let f_stack = block_diag(&f_refs);
    let w_stack = block_diag(&q_refs);
    let pred_cov = predict_covariance(&f_stack, &belief.cov, &w_stack);

    let predicted_set = ParticleSet::new_uniform(predicted)?;
    let pred_mean = predicted_set.mean();

    let mut flowed = predicted_set.samples().clone();
    let mut mean = pred_mean.clone();
    flow_integrate(&mut flowed, &mut mean, schedule, n, &mut |mean_cur, lambda| {
        let obs = build_joint_observation(snapshot, mean_cur, anchors, sigma)?;
        flow_coefficients(&pred_cov, &pred_mean, &obs, lambda)
    })?;

    // The transition kernel is degenerate (rank-3 process noise in 9-D
    // blocks), so per-particle transition densities do not exist; the
    // moment-matched predicted Gaussian stands in for both the transition
    // term and the proposal, and their common factor cancels exactly when
    // the flow is the identity.
    let density = GaussianDensity::new(pred_mean.clone(), &pred_cov)?;
    let weights = invertible_flow_reweight(
        predicted_set.samples(),
        &flowed,
        &mut |_, end| density.logpdf(end),
        &mut |_, end| joint_log_likelihood(snapshot, anchors, sigma, end),
        &mut |_, start| density.logpdf(start),
    )?;

    let mut resample_rng = streams.stream(StreamKind::Resampling, k, 0, 1);
    let indices = systematic_resample(&weights, &mut resample_rng)?;
    let flowed_set = ParticleSet::with_weights(flowed, weights)?;
    let mut resampled = flowed_set.gather(&indices);
    let mean_post = resampled.mean();

    let noise_var = DVector::from_element(snapshot.len(), sigma * sigma);
    let update = sigma_point_cov_update(
        &pred_cov,
        &mean_post,
        &mut |x| joint_observe(snapshot, anchors, x),
        &noise_var,
    )?;
    let mut cov_post = update.cov;

    if let Some(reg) = regularization {
        let mut reg_rng = streams.stream(StreamKind::Regularization, k, 0, 1);
        regularize(resampled.samples_mut(), reg, &mut reg_rng);
        regularize_cov(&mut cov_post, reg);
    }

    Ok(EdhStep { belief: JointBelief { particles: resampled, cov: cov_post }, mean: mean_post })
}
