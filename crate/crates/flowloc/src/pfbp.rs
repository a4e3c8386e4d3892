//! Distributed particle-flow belief propagation: each agent runs the flow
//! on a stacked state of itself and its cooperative partners, using only
//! locally available measurements and the partners' broadcast beliefs.
//!
//! A time step executes `U` message-passing iterations. In every iteration
//! each agent restarts the flow from its predicted particles, stacks them
//! with the partners' iteration-(u-1) particles, migrates only its own
//! 9-row block, reweights, resamples, and refreshes its summary covariance
//! through a stacked sigma-point update. Agents within one iteration read
//! only iteration-(u-1) state, so any processing order yields identical
//! results.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::Error;
use crate::flow::{
    anneal_alpha, block_diag, flow_coefficients, flow_integrate, invertible_flow_reweight,
    log_gauss_scalar, predict_covariance, regularize, regularize_cov, sigma_point_cov_update,
    systematic_resample, FlowSchedule, GaussianDensity, LinearizedObservation, Regularization,
};
use crate::model::{
    block_position, range, range_jacobian_block, Anchor, MotionModel, NetworkSnapshot, ParticleSet,
    ProcessingMode, STATE_DIM,
};
use crate::rng::{RunStreams, StreamKind};
use crate::Stopwatch;

/// One agent's belief state: its particle cloud plus the Gaussian summary
/// that gets broadcast to partners.
#[derive(Clone, Debug)]
pub struct AgentBelief {
    /// Particle cloud, uniform weights after resampling.
    pub particles: ParticleSet,
    /// Summary covariance broadcast to partners.
    pub cov: DMatrix<f64>,
    /// Posterior mean estimate (sample mean after resampling).
    pub mean: DVector<f64>,
    /// Set when this belief fell back to the prediction because the weight
    /// update degenerated.
    pub degenerate: bool,
}

impl AgentBelief {
    pub fn new(particles: ParticleSet, cov: DMatrix<f64>) -> Self {
        let mean = particles.mean();
        AgentBelief { particles, cov, mean, degenerate: false }
    }
}

/// Knobs of one message-passing time step.
#[derive(Clone, Debug)]
pub struct PfbpOptions {
    /// Message-passing iterations per time step, at least 1.
    pub mp_iterations: usize,
    /// Initial partner-covariance inflation; halves per iteration and is
    /// forced to zero on the final one. Zero disables annealing.
    pub alpha_max: f64,
    /// Post-resampling jitter, applied every iteration when present.
    pub regularization: Option<Regularization>,
}

impl Default for PfbpOptions {
    fn default() -> Self {
        PfbpOptions { mp_iterations: 2, alpha_max: 0.0, regularization: None }
    }
}

/// Result of one time step across all agents.
#[derive(Clone, Debug)]
pub struct PfbpStep {
    /// Final-iteration beliefs, one per agent in ascending index order.
    pub beliefs: Vec<AgentBelief>,
    /// Wall-clock seconds each agent spent across all iterations of this
    /// step; zero without the `std` feature.
    pub per_agent_seconds: Vec<f64>,
    /// Number of (agent, iteration) weight updates that degenerated and
    /// fell back to the prediction.
    pub degenerate_events: usize,
}

/// Result of one message-passing iteration across all agents.
#[derive(Clone, Debug)]
pub struct MpIteration {
    /// Updated beliefs, one per agent in ascending index order.
    pub beliefs: Vec<AgentBelief>,
    /// Wall-clock seconds per agent for this iteration.
    pub per_agent_seconds: Vec<f64>,
    /// Weight updates that degenerated in this iteration.
    pub degenerate_events: usize,
}

/// One measurement row of an agent's stacked observation. `slot` indexes
/// the partner's block in the stack (block `slot + 1`; block 0 is self).
#[derive(Clone, Copy, Debug)]
enum RowTarget {
    Anchor(usize),
    Partner { slot: usize },
}

#[derive(Clone, Copy, Debug)]
struct StackRow {
    target: RowTarget,
    z: f64,
}

/// The stacked neighborhood an agent runs its flow on: predicted self
/// particles joined with partner particles, the block-diagonal prior
/// covariance, and the local measurements linearized at the stacked mean.
#[derive(Clone, Debug)]
pub struct NeighborhoodStack {
    /// Stacked particles, self block first, partners ascending.
    pub particles: DMatrix<f64>,
    /// Stacked mean at pseudo-time zero.
    pub mean: DVector<f64>,
    /// Block-diagonal prior covariance (predicted self, partner summaries
    /// plus any annealing inflation).
    pub cov: DMatrix<f64>,
    /// Measurements linearized at `mean`.
    pub obs: LinearizedObservation,
    rows: Vec<StackRow>,
}

impl NeighborhoodStack {
    /// Relinearizes the observation at a migrated stacked mean.
    pub fn relinearize(
        &self,
        anchors: &[Anchor],
        sigma: f64,
        mean: &DVector<f64>,
    ) -> Result<LinearizedObservation, Error> {
        linearize_rows(&self.rows, anchors, sigma, mean)
    }

    /// Predicted ranges of every row at the stacked state `x`.
    pub fn observe(&self, anchors: &[Anchor], x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            let own = block_position(x, 0);
            out[r] = match row.target {
                RowTarget::Anchor(a) => range(&own, &anchors[a].position),
                RowTarget::Partner { slot } => range(&own, &block_position(x, slot + 1)),
            };
        }
        out
    }
}

fn linearize_rows(
    rows: &[StackRow],
    anchors: &[Anchor],
    sigma: f64,
    mean: &DVector<f64>,
) -> Result<LinearizedObservation, Error> {
    let m = rows.len();
    let n = mean.len();
    let mut h = DMatrix::zeros(m, n);
    let mut predicted = DVector::zeros(m);
    let mut z = DVector::zeros(m);
    let own = block_position(mean, 0);
    for (r, row) in rows.iter().enumerate() {
        match row.target {
            RowTarget::Anchor(a) => {
                let jac = range_jacobian_block(&own, &anchors[a].position)?;
                h.view_mut((r, 0), (1, STATE_DIM)).copy_from(&jac);
                predicted[r] = range(&own, &anchors[a].position);
            }
            RowTarget::Partner { slot } => {
                let other = block_position(mean, slot + 1);
                let jac_own = range_jacobian_block(&own, &other)?;
                let jac_other = range_jacobian_block(&other, &own)?;
                h.view_mut((r, 0), (1, STATE_DIM)).copy_from(&jac_own);
                h.view_mut((r, STATE_DIM * (slot + 1)), (1, STATE_DIM)).copy_from(&jac_other);
                predicted[r] = range(&own, &other);
            }
        }
        z[r] = row.z;
    }
    let bias = predicted - &h * mean;
    Ok(LinearizedObservation { h, bias, z, noise_var: DVector::from_element(m, sigma * sigma) })
}

/// Assembles agent `agent`'s stacked neighborhood for one message-passing
/// iteration: predicted self belief, partner beliefs from the previous
/// iteration, local measurement rows (own anchors and cooperative links;
/// in centralized mode also the partners' reverse measurements), and the
/// partner-covariance inflation `alpha`.
pub fn build_neighborhood(
    agent: usize,
    predicted: &AgentBelief,
    previous: &[AgentBelief],
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    sigma: f64,
    alpha: f64,
) -> Result<NeighborhoodStack, Error> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter("sigma"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter("alpha"));
    }
    let count = predicted.particles.len();
    let partners: Vec<usize> = snapshot.agent_links[agent].iter().map(|l| l.agent).collect();
    let blocks = 1 + partners.len();
    let dim = STATE_DIM * blocks;

    let mut particles = DMatrix::zeros(dim, count);
    particles.rows_mut(0, STATE_DIM).copy_from(predicted.particles.samples());
    let mut mean = DVector::zeros(dim);
    mean.rows_mut(0, STATE_DIM).copy_from(&predicted.mean);
    let mut cov_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(blocks);
    cov_blocks.push(predicted.cov.clone());
    for (slot, &j) in partners.iter().enumerate() {
        let partner = &previous[j];
        if partner.particles.len() != count {
            return Err(Error::DimensionMismatch {
                expected: count,
                found: partner.particles.len(),
            });
        }
        let base = STATE_DIM * (slot + 1);
        particles.rows_mut(base, STATE_DIM).copy_from(partner.particles.samples());
        mean.rows_mut(base, STATE_DIM).copy_from(&partner.particles.mean());
        let mut block = partner.cov.clone();
        if alpha > 0.0 {
            block.add_scalar_mut(alpha);
        }
        cov_blocks.push(block);
    }
    let refs: Vec<&DMatrix<f64>> = cov_blocks.iter().collect();
    let cov = block_diag(&refs);

    let mut rows = Vec::new();
    for link in &snapshot.anchor_links[agent] {
        rows.push(StackRow { target: RowTarget::Anchor(link.anchor), z: link.range });
    }
    for (slot, link) in snapshot.agent_links[agent].iter().enumerate() {
        rows.push(StackRow { target: RowTarget::Partner { slot }, z: link.range });
        if snapshot.mode == ProcessingMode::Centralized {
            let reverse = snapshot.agent_links[link.agent]
                .iter()
                .find(|back| back.agent == agent)
                .ok_or(Error::InvalidParameter("missing reverse measurement"))?;
            rows.push(StackRow { target: RowTarget::Partner { slot }, z: reverse.range });
        }
    }

    let obs = linearize_rows(&rows, anchors, sigma, &mean)?;
    Ok(NeighborhoodStack { particles, mean, cov, obs, rows })
}

/// One agent's update within one message-passing iteration. Returns the
/// new belief; a degenerate weight update falls back to the predicted
/// belief with the flag set.
fn agent_iteration(
    agent: usize,
    u: usize,
    predicted: &AgentBelief,
    previous: &[AgentBelief],
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    sigma: f64,
    schedule: &FlowSchedule,
    opts: &PfbpOptions,
    streams: &RunStreams,
) -> Result<AgentBelief, Error> {
    let k = snapshot.time_index;
    let alpha = anneal_alpha(u, opts.mp_iterations, opts.alpha_max);
    let stack = build_neighborhood(agent, predicted, previous, snapshot, anchors, sigma, alpha)?;

    let mut flowed = stack.particles.clone();
    let mut mean = stack.mean.clone();
    flow_integrate(&mut flowed, &mut mean, schedule, STATE_DIM, &mut |mean_cur, lambda| {
        let obs = stack.relinearize(anchors, sigma, mean_cur)?;
        flow_coefficients(&stack.cov, &stack.mean, &obs, lambda)
    })?;

    // Transition and proposal both use the moment-matched predicted
    // Gaussian of the self block; the rank-3 process noise rules out
    // per-particle transition densities (see the joint filter).
    let density = GaussianDensity::new(predicted.mean.clone(), &predicted.cov)?;
    let flowed_self = flowed.rows(0, STATE_DIM).into_owned();
    let weights = invertible_flow_reweight(
        predicted.particles.samples(),
        &flowed_self,
        &mut |_, end| density.logpdf(end),
        &mut |m, end| {
            let own = Vector3::new(end[0], end[1], end[2]);
            let mut total = 0.0;
            for row in &stack.rows {
                let predicted_range = match row.target {
                    RowTarget::Anchor(a) => range(&own, &anchors[a].position),
                    RowTarget::Partner { slot } => {
                        let base = STATE_DIM * (slot + 1);
                        let other = Vector3::new(
                            flowed[(base, m)],
                            flowed[(base + 1, m)],
                            flowed[(base + 2, m)],
                        );
                        range(&own, &other)
                    }
                };
                total += log_gauss_scalar(row.z, predicted_range, sigma);
            }
            total
        },
        &mut |_, start| density.logpdf(start),
    );
    let weights = match weights {
        Ok(w) => w,
        Err(Error::DegenerateWeights) => {
            let mut fallback = predicted.clone();
            fallback.degenerate = true;
            return Ok(fallback);
        }
        Err(e) => return Err(e),
    };

    let mut resample_rng = streams.stream(StreamKind::Resampling, k, agent, u);
    let indices = systematic_resample(&weights, &mut resample_rng)?;
    let flowed_set = ParticleSet::with_weights(flowed_self, weights)?;
    let mut resampled = flowed_set.gather(&indices);
    let mean_post = resampled.mean();

    let mut ukf_mean = stack.mean.clone();
    ukf_mean.rows_mut(0, STATE_DIM).copy_from(&mean_post);
    let noise_var = DVector::from_element(stack.rows.len(), sigma * sigma);
    let update = sigma_point_cov_update(
        &stack.cov,
        &ukf_mean,
        &mut |x| stack.observe(anchors, x),
        &noise_var,
    )?;
    let mut cov_post = update.cov.view((0, 0), (STATE_DIM, STATE_DIM)).into_owned();

    if let Some(reg) = &opts.regularization {
        let mut reg_rng = streams.stream(StreamKind::Regularization, k, agent, u);
        regularize(resampled.samples_mut(), reg, &mut reg_rng);
        regularize_cov(&mut cov_post, reg);
    }

    Ok(AgentBelief { particles: resampled, cov: cov_post, mean: mean_post, degenerate: false })
}

/// One message-passing iteration `u` across all agents: each agent
/// restarts its flow from the predicted belief and reads partner state
/// exclusively from `previous`, so any agent processing order yields
/// identical results.
pub fn pfbp_mp_iteration(
    u: usize,
    predicted: &[AgentBelief],
    previous: &[AgentBelief],
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    sigma: f64,
    schedule: &FlowSchedule,
    opts: &PfbpOptions,
    streams: &RunStreams,
) -> Result<MpIteration, Error> {
    let n_agents = snapshot.n_agents();
    if predicted.len() != n_agents || previous.len() != n_agents {
        return Err(Error::DimensionMismatch { expected: n_agents, found: predicted.len() });
    }
    let mut beliefs = Vec::with_capacity(n_agents);
    let mut per_agent_seconds = alloc::vec![0.0; n_agents];
    let mut degenerate_events = 0usize;
    for i in 0..n_agents {
        let watch = Stopwatch::start();
        let belief = agent_iteration(
            i,
            u,
            &predicted[i],
            previous,
            snapshot,
            anchors,
            sigma,
            schedule,
            opts,
            streams,
        )?;
        per_agent_seconds[i] = watch.seconds();
        if belief.degenerate {
            degenerate_events += 1;
        }
        beliefs.push(belief);
    }
    Ok(MpIteration { beliefs, per_agent_seconds, degenerate_events })
}

/// Advances all agents by one time step: per-agent prediction followed by
/// `U` message-passing iterations. Every iteration restarts the flow from
/// the predicted particles; partner state always comes from the previous
/// iteration, so the per-agent updates commute.
pub fn pfbp_time_step(
    beliefs: &[AgentBelief],
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    model: &MotionModel,
    sigma: f64,
    schedule: &FlowSchedule,
    opts: &PfbpOptions,
    streams: &RunStreams,
) -> Result<PfbpStep, Error> {
    let n_agents = snapshot.n_agents();
    if beliefs.len() != n_agents {
        return Err(Error::DimensionMismatch { expected: n_agents, found: beliefs.len() });
    }
    if opts.mp_iterations == 0 {
        return Err(Error::InvalidParameter("mp_iterations"));
    }
    let k = snapshot.time_index;
    let f = model.f_dyn();
    let q = model.q_dyn();

    let mut predicted = Vec::with_capacity(n_agents);
    for (i, belief) in beliefs.iter().enumerate() {
        if belief.particles.dim() != STATE_DIM {
            return Err(Error::DimensionMismatch {
                expected: STATE_DIM,
                found: belief.particles.dim(),
            });
        }
        let mut samples = belief.particles.samples().clone();
        let mut rng = streams.stream(StreamKind::Propagation, k, i, 0);
        crate::model::propagate_particle_block(model, &mut samples, 0, &mut rng);
        let cov = predict_covariance(&f, &belief.cov, &q);
        predicted.push(AgentBelief::new(ParticleSet::new_uniform(samples)?, cov));
    }

    let mut per_agent_seconds = alloc::vec![0.0; n_agents];
    let mut degenerate_events = 0usize;
    let mut previous = predicted.clone();
    for u in 1..=opts.mp_iterations {
        let iteration = pfbp_mp_iteration(
            u, &predicted, &previous, snapshot, anchors, sigma, schedule, opts, streams,
        )?;
        for (total, t) in per_agent_seconds.iter_mut().zip(&iteration.per_agent_seconds) {
            *total += t;
        }
        degenerate_events += iteration.degenerate_events;
        previous = iteration.beliefs;
    }

    Ok(PfbpStep { beliefs: previous, per_agent_seconds, degenerate_events })
}
