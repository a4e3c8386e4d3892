//! Agent and anchor types, the constant-acceleration motion model, scenario
//! generation, connectivity, range measurements and prior construction.
//!
//! State vectors are ordered `[position, velocity, acceleration]`, three
//! components each. Network-level vectors and matrices stack agents by
//! ascending index in blocks of nine.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::num;
use crate::rng::{RunStreams, StreamKind};

/// Dimension of a single agent state.
pub const STATE_DIM: usize = 9;

/// Two points closer than this have no defined range direction.
pub const COINCIDENT_EPS: f64 = 1e-9;

/// One agent's kinematic state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl AgentState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, acceleration: Vector3<f64>) -> Self {
        AgentState { position, velocity, acceleration }
    }

    /// Packs the state into a 9-vector ordered position, velocity,
    /// acceleration.
    pub fn to_vector(&self) -> SMatrix<f64, STATE_DIM, 1> {
        let mut v = SMatrix::<f64, STATE_DIM, 1>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.acceleration);
        v
    }

    /// Reads a state back from a 9-element slice ordered position,
    /// velocity, acceleration.
    pub fn from_slice(s: &[f64]) -> Result<Self, Error> {
        if s.len() != STATE_DIM {
            return Err(Error::DimensionMismatch { expected: STATE_DIM, found: s.len() });
        }
        Ok(AgentState {
            position: Vector3::new(s[0], s[1], s[2]),
            velocity: Vector3::new(s[3], s[4], s[5]),
            acceleration: Vector3::new(s[6], s[7], s[8]),
        })
    }
}

/// A fixed node with known position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub position: Vector3<f64>,
}

/// Constant-acceleration kinematics over one sampling interval.
///
/// `f` advances a state by `dt`, `g` injects a white acceleration
/// increment, and `q = sigma_a^2 * g * g^T` is the resulting process noise
/// covariance. `q` has rank 3: the increment enters position, velocity and
/// acceleration through the same three degrees of freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionModel {
    pub f: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub g: SMatrix<f64, STATE_DIM, 3>,
    pub q: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub dt: f64,
    pub sigma_a: f64,
}

/// Builds the motion model for sampling interval `dt` and acceleration
/// noise standard deviation `sigma_a`.
pub fn build_motion_model(dt: f64, sigma_a: f64) -> Result<MotionModel, Error> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter("dt"));
    }
    if !(sigma_a >= 0.0) || !sigma_a.is_finite() {
        return Err(Error::InvalidParameter("sigma_a"));
    }
    let half_dt2 = 0.5 * dt * dt;
    let mut f = SMatrix::<f64, STATE_DIM, STATE_DIM>::identity();
    let mut g = SMatrix::<f64, STATE_DIM, 3>::zeros();
    for axis in 0..3 {
        f[(axis, 3 + axis)] = dt;
        f[(axis, 6 + axis)] = half_dt2;
        f[(3 + axis, 6 + axis)] = dt;
        g[(axis, axis)] = half_dt2;
        g[(3 + axis, axis)] = dt;
        g[(6 + axis, axis)] = 1.0;
    }
    let q = g * g.transpose() * (sigma_a * sigma_a);
    Ok(MotionModel { f, g, q, dt, sigma_a })
}

impl MotionModel {
    /// Transition matrix as a dynamically sized matrix, for network-level
    /// algebra.
    pub fn f_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(STATE_DIM, STATE_DIM, self.f.iter().copied())
    }

    /// Process noise covariance as a dynamically sized matrix.
    pub fn q_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(STATE_DIM, STATE_DIM, self.q.iter().copied())
    }
}

/// Advances one state by a single interval with acceleration increment `u`.
pub fn propagate_state(model: &MotionModel, state: &AgentState, u: &Vector3<f64>) -> AgentState {
    let x = model.f * state.to_vector() + model.g * u;
    AgentState {
        position: Vector3::new(x[0], x[1], x[2]),
        velocity: Vector3::new(x[3], x[4], x[5]),
        acceleration: Vector3::new(x[6], x[7], x[8]),
    }
}

/// Advances a 9-row block of a particle matrix in place, drawing one
/// acceleration increment per particle (three standard normal draws scaled
/// by `sigma_a`, in particle order).
///
/// Every filter routes its prediction through this function, so identical
/// streams yield identical propagated particles whether agents are
/// processed marginally or stacked jointly.
pub fn propagate_particle_block<R: Rng>(
    model: &MotionModel,
    particles: &mut DMatrix<f64>,
    row_offset: usize,
    rng: &mut R,
) {
    debug_assert!(row_offset + STATE_DIM <= particles.nrows());
    let count = particles.ncols();
    let f = model.f_dyn();
    let propagated = &f * particles.rows(row_offset, STATE_DIM);
    particles.rows_mut(row_offset, STATE_DIM).copy_from(&propagated);
    for m in 0..count {
        let u = Vector3::new(
            model.sigma_a * rng.sample::<f64, _>(StandardNormal),
            model.sigma_a * rng.sample::<f64, _>(StandardNormal),
            model.sigma_a * rng.sample::<f64, _>(StandardNormal),
        );
        let gu = model.g * u;
        let mut col = particles.view_mut((row_offset, m), (STATE_DIM, 1));
        for r in 0..STATE_DIM {
            col[r] += gu[r];
        }
    }
}

/// Euclidean distance between two points.
pub fn range(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = a - b;
    num::sqrt(d.dot(&d))
}

/// Position components of block `block` of a stacked state vector.
pub fn block_position(x: &DVector<f64>, block: usize) -> Vector3<f64> {
    let base = STATE_DIM * block;
    Vector3::new(x[base], x[base + 1], x[base + 2])
}

/// Derivative of the range to `other` with respect to the full 9-D state
/// whose position is `own`: the unit vector from `other` to `own` in the
/// position columns, zeros in the velocity and acceleration columns.
pub fn range_jacobian_block(
    own: &Vector3<f64>,
    other: &Vector3<f64>,
) -> Result<SMatrix<f64, 1, STATE_DIM>, Error> {
    let d = range(own, other);
    if d < COINCIDENT_EPS {
        return Err(Error::CoincidentPoints);
    }
    let mut row = SMatrix::<f64, 1, STATE_DIM>::zeros();
    row[(0, 0)] = (own.x - other.x) / d;
    row[(0, 1)] = (own.y - other.y) / d;
    row[(0, 2)] = (own.z - other.z) / d;
    Ok(row)
}

/// All Monte-Carlo scenario knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// Number of mobile agents.
    pub n_agents: usize,
    /// Number of anchors; the generator places 8 corner anchors plus one
    /// center anchor, so this must be 9.
    pub n_anchors: usize,
    /// Support volume extents in meters.
    pub volume: [f64; 3],
    /// Communication range in meters; `f64::INFINITY` for a fully connected
    /// network.
    pub r_max: f64,
    /// Range measurement noise standard deviation in meters.
    pub sigma: f64,
    /// Acceleration increment standard deviation.
    pub sigma_a: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Number of time steps after the initial one.
    pub steps: usize,
    /// Master seed of the experiment.
    pub seed: u64,
    /// Prior position standard deviation in meters.
    pub prior_sigma_p: f64,
    /// The prior acceleration standard deviation is this factor times
    /// `sigma_a`; the velocity block scales it by `dt`.
    pub prior_sigma_a_factor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_agents: 5,
            n_anchors: 9,
            volume: [20.0, 20.0, 20.0],
            r_max: 18.0,
            sigma: 0.1,
            sigma_a: 0.15,
            dt: 0.1,
            steps: 40,
            seed: 0,
            prior_sigma_p: 20.0,
            prior_sigma_a_factor: 10.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_agents == 0 {
            return Err(Error::InvalidParameter("n_agents"));
        }
        if self.n_anchors != 9 {
            return Err(Error::InvalidParameter("n_anchors"));
        }
        if self.volume.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidParameter("volume"));
        }
        // Infinity is allowed and means a fully connected network.
        if !(self.r_max > 0.0) {
            return Err(Error::InvalidParameter("r_max"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter("sigma"));
        }
        if !(self.sigma_a >= 0.0) || !self.sigma_a.is_finite() {
            return Err(Error::InvalidParameter("sigma_a"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter("dt"));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps"));
        }
        if !(self.prior_sigma_p > 0.0) || !self.prior_sigma_p.is_finite() {
            return Err(Error::InvalidParameter("prior_sigma_p"));
        }
        if !(self.prior_sigma_a_factor > 0.0) || !self.prior_sigma_a_factor.is_finite() {
            return Err(Error::InvalidParameter("prior_sigma_a_factor"));
        }
        Ok(())
    }
}

/// Places the 8 corner anchors and the center anchor of a volume. Corners
/// are ordered by bit pattern (x fastest), the center comes last.
pub fn anchor_layout(volume: &[f64; 3]) -> Vec<Anchor> {
    let mut anchors = Vec::with_capacity(9);
    for bits in 0..8u8 {
        anchors.push(Anchor {
            position: Vector3::new(
                if bits & 1 != 0 { volume[0] } else { 0.0 },
                if bits & 2 != 0 { volume[1] } else { 0.0 },
                if bits & 4 != 0 { volume[2] } else { 0.0 },
            ),
        });
    }
    anchors
        .push(Anchor { position: Vector3::new(0.5 * volume[0], 0.5 * volume[1], 0.5 * volume[2]) });
    anchors
}

/// Anchors plus true agent trajectories for one run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub anchors: Vec<Anchor>,
    /// `truth[k][i]` is agent `i` at time step `k`, for `k` in `0..=steps`.
    pub truth: Vec<Vec<AgentState>>,
}

/// Draws the true trajectories of one run.
///
/// Initial positions are uniform in the volume, initial velocities are unit
/// vectors toward the volume center, initial accelerations are zero, and
/// the states then evolve freely under the motion model (no reflection at
/// the volume boundary).
pub fn generate_scenario(cfg: &ScenarioConfig, streams: &RunStreams) -> Result<Scenario, Error> {
    cfg.validate()?;
    let model = build_motion_model(cfg.dt, cfg.sigma_a)?;
    let anchors = anchor_layout(&cfg.volume);
    let center = Vector3::new(0.5 * cfg.volume[0], 0.5 * cfg.volume[1], 0.5 * cfg.volume[2]);

    let mut initial = Vec::with_capacity(cfg.n_agents);
    for i in 0..cfg.n_agents {
        let mut rng = streams.stream(StreamKind::ScenarioInit, 0, i, 0);
        let position = Vector3::new(
            cfg.volume[0] * rng.gen::<f64>(),
            cfg.volume[1] * rng.gen::<f64>(),
            cfg.volume[2] * rng.gen::<f64>(),
        );
        let toward_center = center - position;
        let dist = num::sqrt(toward_center.dot(&toward_center));
        // An agent drawn exactly at the center has no direction toward it;
        // keep the unit-speed start along a fixed axis.
        let velocity =
            if dist < COINCIDENT_EPS { Vector3::new(1.0, 0.0, 0.0) } else { toward_center / dist };
        initial.push(AgentState::new(position, velocity, Vector3::zeros()));
    }

    let mut truth = Vec::with_capacity(cfg.steps + 1);
    truth.push(initial);
    for k in 1..=cfg.steps {
        let mut states = Vec::with_capacity(cfg.n_agents);
        for i in 0..cfg.n_agents {
            let mut rng = streams.stream(StreamKind::ProcessNoise, k, i, 0);
            let u = Vector3::new(
                cfg.sigma_a * rng.sample::<f64, _>(StandardNormal),
                cfg.sigma_a * rng.sample::<f64, _>(StandardNormal),
                cfg.sigma_a * rng.sample::<f64, _>(StandardNormal),
            );
            states.push(propagate_state(&model, &truth[k - 1][i], &u));
        }
        truth.push(states);
    }
    Ok(Scenario { anchors, truth })
}

/// Link sets of one time step: which anchors and agents each agent can
/// measure. Lists are sorted ascending; the agent relation is symmetric.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connectivity {
    pub anchor_links: Vec<Vec<usize>>,
    pub agent_links: Vec<Vec<usize>>,
}

/// Builds the link sets for given agent positions. A link exists when the
/// distance is at most `r_max`.
pub fn build_connectivity(
    positions: &[Vector3<f64>],
    anchors: &[Anchor],
    r_max: f64,
) -> Connectivity {
    let n = positions.len();
    let mut anchor_links = vec![Vec::new(); n];
    let mut agent_links = vec![Vec::new(); n];
    for i in 0..n {
        for (a, anchor) in anchors.iter().enumerate() {
            if range(&positions[i], &anchor.position) <= r_max {
                anchor_links[i].push(a);
            }
        }
        for j in 0..n {
            if j != i && range(&positions[i], &positions[j]) <= r_max {
                agent_links[i].push(j);
            }
        }
    }
    Connectivity { anchor_links, agent_links }
}

/// How the estimators consume pairwise measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcessingMode {
    /// Each agent uses only the ranges it measured itself.
    Distributed,
    /// Each agent additionally uses the reverse measurement of every
    /// cooperative link.
    Centralized,
}

/// One range measurement to an anchor, taken by the owning agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorLink {
    pub anchor: usize,
    pub range: f64,
}

/// One range measurement to another agent, taken by the owning agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentLink {
    pub agent: usize,
    pub range: f64,
}

/// Target of one measurement row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementTarget {
    Anchor(usize),
    Agent(usize),
}

/// One measurement row: `agent` measured `range` to `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub agent: usize,
    pub target: MeasurementTarget,
    pub range: f64,
}

/// All measurements of one time step.
///
/// Both directions of every cooperative pair are always present, because
/// each agent draws its own independent measurement of the shared true
/// distance; `mode` records how the estimators should consume them. Link
/// lists are sorted by ascending node index.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSnapshot {
    pub time_index: usize,
    pub anchor_links: Vec<Vec<AnchorLink>>,
    pub agent_links: Vec<Vec<AgentLink>>,
    pub mode: ProcessingMode,
}

impl NetworkSnapshot {
    pub fn n_agents(&self) -> usize {
        self.anchor_links.len()
    }

    /// Iterates every stored measurement, grouped by owning agent in
    /// ascending order, anchors before agents within each group.
    pub fn measurements(&self) -> impl Iterator<Item = Measurement> + '_ {
        self.anchor_links.iter().enumerate().flat_map(move |(i, links)| {
            links
                .iter()
                .map(move |l| Measurement {
                    agent: i,
                    target: MeasurementTarget::Anchor(l.anchor),
                    range: l.range,
                })
                .chain(self.agent_links[i].iter().map(move |l| Measurement {
                    agent: i,
                    target: MeasurementTarget::Agent(l.agent),
                    range: l.range,
                }))
        })
    }

    /// Total number of stored measurements.
    pub fn len(&self) -> usize {
        self.anchor_links.iter().map(Vec::len).sum::<usize>()
            + self.agent_links.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws the noisy range measurements of time step `k`.
///
/// Agent `i`'s outgoing measurements come from its own stream, ordered
/// anchors first and then cooperative links, both ascending, so the draw
/// sequence is fixed by the link sets alone.
pub fn simulate_measurements(
    positions: &[Vector3<f64>],
    anchors: &[Anchor],
    connectivity: &Connectivity,
    sigma: f64,
    mode: ProcessingMode,
    streams: &RunStreams,
    k: usize,
) -> NetworkSnapshot {
    let n = positions.len();
    let mut anchor_links = Vec::with_capacity(n);
    let mut agent_links = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = streams.stream(StreamKind::Measurement, k, i, 0);
        let mut al = Vec::with_capacity(connectivity.anchor_links[i].len());
        for &a in &connectivity.anchor_links[i] {
            let noise: f64 = rng.sample(StandardNormal);
            al.push(AnchorLink {
                anchor: a,
                range: range(&positions[i], &anchors[a].position) + sigma * noise,
            });
        }
        let mut gl = Vec::with_capacity(connectivity.agent_links[i].len());
        for &j in &connectivity.agent_links[i] {
            let noise: f64 = rng.sample(StandardNormal);
            gl.push(AgentLink {
                agent: j,
                range: range(&positions[i], &positions[j]) + sigma * noise,
            });
        }
        anchor_links.push(al);
        agent_links.push(gl);
    }
    NetworkSnapshot { time_index: k, anchor_links, agent_links, mode }
}

/// Gaussian summary of one agent's belief.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Number of scalars in the broadcast form of a 9-D Gaussian belief.
pub const BROADCAST_LEN: usize = 54;

impl GaussianBelief {
    /// Serializes a 9-D belief as the 9 means followed by the 45 upper
    /// triangular covariance entries in row-major order. This is the
    /// payload an agent would broadcast to its neighbors.
    pub fn to_broadcast(&self) -> Result<[f64; BROADCAST_LEN], Error> {
        if self.mean.len() != STATE_DIM {
            return Err(Error::DimensionMismatch { expected: STATE_DIM, found: self.mean.len() });
        }
        let mut out = [0.0; BROADCAST_LEN];
        out[..STATE_DIM].copy_from_slice(self.mean.as_slice());
        let mut idx = STATE_DIM;
        for r in 0..STATE_DIM {
            for c in r..STATE_DIM {
                out[idx] = self.cov[(r, c)];
                idx += 1;
            }
        }
        Ok(out)
    }

    /// Rebuilds a belief from its broadcast form, mirroring the upper
    /// triangle into the lower one.
    pub fn from_broadcast(data: &[f64; BROADCAST_LEN]) -> GaussianBelief {
        let mean = DVector::from_column_slice(&data[..STATE_DIM]);
        let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut idx = STATE_DIM;
        for r in 0..STATE_DIM {
            for c in r..STATE_DIM {
                cov[(r, c)] = data[idx];
                cov[(c, r)] = data[idx];
                idx += 1;
            }
        }
        GaussianBelief { mean, cov }
    }
}

/// Weighted particle representation of a distribution. Samples are stored
/// one particle per column; weights are kept normalized to sum 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    samples: DMatrix<f64>,
    weights: DVector<f64>,
}

impl ParticleSet {
    /// Wraps a sample matrix with uniform weights.
    pub fn new_uniform(samples: DMatrix<f64>) -> Result<Self, Error> {
        if samples.ncols() == 0 {
            return Err(Error::InvalidParameter("particle count"));
        }
        let w = 1.0 / samples.ncols() as f64;
        let weights = DVector::from_element(samples.ncols(), w);
        Ok(ParticleSet { samples, weights })
    }

    /// Wraps a sample matrix with the given weights, normalizing them.
    pub fn with_weights(samples: DMatrix<f64>, weights: DVector<f64>) -> Result<Self, Error> {
        if samples.ncols() == 0 {
            return Err(Error::InvalidParameter("particle count"));
        }
        if weights.len() != samples.ncols() {
            return Err(Error::DimensionMismatch {
                expected: samples.ncols(),
                found: weights.len(),
            });
        }
        let mut set = ParticleSet { samples, weights: DVector::zeros(weights.len()) };
        set.set_weights(weights)?;
        Ok(set)
    }

    /// Replaces the weights, validating finiteness and positivity of the
    /// total mass and normalizing to sum 1.
    pub fn set_weights(&mut self, weights: DVector<f64>) -> Result<(), Error> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: weights.len() });
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
        self.weights = weights / sum;
        Ok(())
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    /// Particle count.
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.samples
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Weighted mean of the particles.
    pub fn mean(&self) -> DVector<f64> {
        &self.samples * &self.weights
    }

    /// New set formed by the given particle indices, with uniform weights.
    pub fn gather(&self, indices: &[usize]) -> ParticleSet {
        let mut samples = DMatrix::zeros(self.dim(), indices.len());
        for (m, &idx) in indices.iter().enumerate() {
            samples.column_mut(m).copy_from(&self.samples.column(idx));
        }
        ParticleSet::new_uniform(samples).expect("gather preserves a positive particle count")
    }
}

/// Gaussian prior of one agent plus the matching initial particles.
///
/// The covariance is diagonal: `prior_sigma_p` on position, and the
/// acceleration scale `prior_sigma_a_factor * sigma_a` on acceleration and,
/// multiplied by `dt`, on velocity. The prior mean position is uniform in
/// the volume; mean velocity and acceleration are drawn from the respective
/// zero-mean blocks. With `uniform_positions` the particle positions are
/// drawn uniformly in the volume instead of from the Gaussian, which suits
/// estimators that cannot tolerate a prior mean far from the truth.
pub fn init_prior(
    cfg: &ScenarioConfig,
    streams: &RunStreams,
    agent: usize,
    particles: usize,
    uniform_positions: bool,
) -> Result<(GaussianBelief, ParticleSet), Error> {
    cfg.validate()?;
    if particles == 0 {
        return Err(Error::InvalidParameter("particle count"));
    }
    let sigma_a_init = cfg.prior_sigma_a_factor * cfg.sigma_a;
    let sigma_v_init = cfg.dt * sigma_a_init;
    let mut rng = streams.stream(StreamKind::PriorInit, 0, agent, 0);

    let mut mean = DVector::zeros(STATE_DIM);
    for axis in 0..3 {
        mean[axis] = cfg.volume[axis] * rng.gen::<f64>();
    }
    for axis in 0..3 {
        mean[3 + axis] = sigma_v_init * rng.sample::<f64, _>(StandardNormal);
    }
    for axis in 0..3 {
        mean[6 + axis] = sigma_a_init * rng.sample::<f64, _>(StandardNormal);
    }

    let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for axis in 0..3 {
        cov[(axis, axis)] = cfg.prior_sigma_p * cfg.prior_sigma_p;
        cov[(3 + axis, 3 + axis)] = sigma_v_init * sigma_v_init;
        cov[(6 + axis, 6 + axis)] = sigma_a_init * sigma_a_init;
    }

    let mut samples = DMatrix::zeros(STATE_DIM, particles);
    for m in 0..particles {
        let mut col = samples.column_mut(m);
        if uniform_positions {
            for axis in 0..3 {
                col[axis] = cfg.volume[axis] * rng.gen::<f64>();
            }
        } else {
            for axis in 0..3 {
                col[axis] = mean[axis] + cfg.prior_sigma_p * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for axis in 0..3 {
            col[3 + axis] = mean[3 + axis] + sigma_v_init * rng.sample::<f64, _>(StandardNormal);
        }
        for axis in 0..3 {
            col[6 + axis] = mean[6 + axis] + sigma_a_init * rng.sample::<f64, _>(StandardNormal);
        }
    }

    Ok((GaussianBelief { mean, cov }, ParticleSet::new_uniform(samples)?))
}
