//! Bootstrap particle belief propagation: predicted particles are weighted
//! by the product of incoming range messages, then systematically
//! resampled. No flow, no covariance tracking; this is the sampling
//! baseline the flow-based filters are measured against.
//!
//! Cooperative messages marginalize over all partner particles, so the
//! weight update costs O(M^2) per cooperative link. The inner kernel skips
//! particle pairs whose range lies more than eight standard deviations from
//! the measurement; the skipped mass is below 1e-13 of any retained term.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::Error;
use crate::flow::{
    log_gauss_scalar, regularize, systematic_resample, weights_from_log, Regularization, LN_2PI,
};
use crate::model::{range, Anchor, NetworkSnapshot, ParticleSet, ProcessingMode, STATE_DIM};
use crate::num;
use crate::rng::{RunStreams, StreamKind};
use crate::Stopwatch;

/// Half-width of the message kernel support, in standard deviations.
const SHELL_SIGMAS: f64 = 8.0;

/// One agent's belief: a resampled, uniformly weighted particle cloud.
#[derive(Clone, Debug)]
pub struct SirbpBelief {
    /// Particle cloud after resampling (and jitter, when enabled).
    pub particles: ParticleSet,
    /// Posterior mean (sample mean after resampling, before jitter).
    pub mean: DVector<f64>,
    /// Set when this belief fell back to the prediction because the weight
    /// update degenerated.
    pub degenerate: bool,
}

impl SirbpBelief {
    pub fn new(particles: ParticleSet) -> Self {
        let mean = particles.mean();
        SirbpBelief { particles, mean, degenerate: false }
    }
}

/// Knobs of one time step.
#[derive(Clone, Debug)]
pub struct SirbpOptions {
    /// Message-passing iterations per time step, at least 1.
    pub mp_iterations: usize,
    /// Post-resampling jitter, applied every iteration when present.
    pub regularization: Option<Regularization>,
}

impl Default for SirbpOptions {
    fn default() -> Self {
        SirbpOptions { mp_iterations: 2, regularization: None }
    }
}

/// Result of one time step across all agents.
#[derive(Clone, Debug)]
pub struct SirbpStep {
    /// Final-iteration beliefs, one per agent in ascending index order.
    pub beliefs: Vec<SirbpBelief>,
    /// Wall-clock seconds each agent spent across all iterations of this
    /// step; zero without the `std` feature.
    pub per_agent_seconds: Vec<f64>,
    /// Number of (agent, iteration) weight updates that degenerated and
    /// fell back to the prediction.
    pub degenerate_events: usize,
}

fn positions_soa(samples: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let count = samples.ncols();
    let mut px = Vec::with_capacity(count);
    let mut py = Vec::with_capacity(count);
    let mut pz = Vec::with_capacity(count);
    for m in 0..count {
        px.push(samples[(0, m)]);
        py.push(samples[(1, m)]);
        pz.push(samples[(2, m)]);
    }
    (px, py, pz)
}

/// Adds the log cooperative message ln[(1/M) Σ_q N(z; ‖p^m − p_j^q‖, σ²)]
/// to every self particle's log weight. A self particle with no partner
/// particle inside the kernel shell receives −∞ and dies at resampling.
fn accumulate_log_message(
    log_w: &mut DVector<f64>,
    self_samples: &DMatrix<f64>,
    partner: (&[f64], &[f64], &[f64]),
    z: f64,
    sigma: f64,
) {
    let (px, py, pz) = partner;
    let count = px.len();
    let shell = SHELL_SIGMAS * sigma;
    let lo = if z > shell { z - shell } else { 0.0 };
    let lo2 = lo * lo;
    let hi = z + shell;
    let hi2 = if hi > 0.0 { hi * hi } else { -1.0 };
    let log_const = num::ln(count as f64) + num::ln(sigma) + 0.5 * LN_2PI;
    for m in 0..log_w.len() {
        let sx = self_samples[(0, m)];
        let sy = self_samples[(1, m)];
        let sz = self_samples[(2, m)];
        let mut acc = 0.0;
        for q in 0..count {
            let dx = sx - px[q];
            let dy = sy - py[q];
            let dz = sz - pz[q];
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 <= hi2 && d2 >= lo2 {
                let t = (z - num::sqrt(d2)) / sigma;
                acc += num::exp(-0.5 * t * t);
            }
        }
        log_w[m] += num::ln(acc) - log_const;
    }
}

/// Computes agent `agent`'s normalized weights over its predicted
/// particles: the product of anchor likelihoods and cooperative messages
/// marginalized over the partners' previous-iteration particles. In
/// centralized mode each cooperative link contributes both directions'
/// measurements. No incident links yields uniform weights.
pub fn sirbp_weight_update(
    agent: usize,
    predicted: &ParticleSet,
    previous: &[SirbpBelief],
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    sigma: f64,
) -> Result<DVector<f64>, Error> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter("sigma"));
    }
    let count = predicted.len();
    let samples = predicted.samples();
    let mut log_w = DVector::zeros(count);

    for link in &snapshot.anchor_links[agent] {
        let anchor = &anchors[link.anchor].position;
        for m in 0..count {
            let p = Vector3::new(samples[(0, m)], samples[(1, m)], samples[(2, m)]);
            log_w[m] += log_gauss_scalar(link.range, range(&p, anchor), sigma);
        }
    }

    for link in &snapshot.agent_links[agent] {
        let partner = &previous[link.agent];
        if partner.particles.len() != count {
            return Err(Error::DimensionMismatch {
                expected: count,
                found: partner.particles.len(),
            });
        }
        let (px, py, pz) = positions_soa(partner.particles.samples());
        accumulate_log_message(&mut log_w, samples, (&px, &py, &pz), link.range, sigma);
        if snapshot.mode == ProcessingMode::Centralized {
            let reverse = snapshot.agent_links[link.agent]
                .iter()
                .find(|back| back.agent == agent)
                .ok_or(Error::InvalidParameter("missing reverse measurement"))?;
            accumulate_log_message(&mut log_w, samples, (&px, &py, &pz), reverse.range, sigma);
        }
    }

    weights_from_log(log_w)
}

/// Advances all agents by one time step: bootstrap prediction followed by
/// `U` iterations of weight update and systematic resampling. Weights are
/// always computed on the predicted particles; only the partner clouds
/// change between iterations, so per-agent updates commute.
pub fn sirbp_time_step(
    beliefs: &[SirbpBelief],
    snapshot: &NetworkSnapshot,
    anchors: &[Anchor],
    model: &crate::model::MotionModel,
    sigma: f64,
    opts: &SirbpOptions,
    streams: &RunStreams,
) -> Result<SirbpStep, Error> {
    let n_agents = snapshot.n_agents();
    if beliefs.len() != n_agents {
        return Err(Error::DimensionMismatch { expected: n_agents, found: beliefs.len() });
    }
    if opts.mp_iterations == 0 {
        return Err(Error::InvalidParameter("mp_iterations"));
    }
    let k = snapshot.time_index;

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
        predicted.push(SirbpBelief::new(ParticleSet::new_uniform(samples)?));
    }

    let mut per_agent_seconds = alloc::vec![0.0; n_agents];
    let mut degenerate_events = 0usize;
    let mut previous = predicted.clone();
    for u in 1..=opts.mp_iterations {
        let mut next = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let watch = Stopwatch::start();
            let weights = match sirbp_weight_update(
                i,
                &predicted[i].particles,
                &previous,
                snapshot,
                anchors,
                sigma,
            ) {
                Ok(w) => Some(w),
                Err(Error::DegenerateWeights) => None,
                Err(e) => return Err(e),
            };
            let belief = match weights {
                Some(w) => {
                    let mut rng = streams.stream(StreamKind::Resampling, k, i, u);
                    let indices = systematic_resample(&w, &mut rng)?;
                    let weighted =
                        ParticleSet::with_weights(predicted[i].particles.samples().clone(), w)?;
                    let mut resampled = weighted.gather(&indices);
                    let mean = resampled.mean();
                    if let Some(reg) = &opts.regularization {
                        let mut reg_rng = streams.stream(StreamKind::Regularization, k, i, u);
                        regularize(resampled.samples_mut(), reg, &mut reg_rng);
                    }
                    SirbpBelief { particles: resampled, mean, degenerate: false }
                }
                None => {
                    degenerate_events += 1;
                    let mut fallback = predicted[i].clone();
                    fallback.degenerate = true;
                    fallback
                }
            };
            per_agent_seconds[i] += watch.seconds();
            next.push(belief);
        }
        previous = next;
    }

    Ok(SirbpStep { beliefs: previous, per_agent_seconds, degenerate_events })
}
