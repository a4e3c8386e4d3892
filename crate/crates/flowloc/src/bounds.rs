//! Posterior Cramér-Rao bound along the true joint trajectory: a Fisher
//! information recursion over the stacked agent state, yielding per-step
//! RMSE floors for position, velocity, and acceleration.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::edh::build_joint_observation;
use crate::error::Error;
use crate::flow::block_diag;
use crate::model::{
    range, AgentLink, AgentState, Anchor, AnchorLink, Connectivity, MotionModel, NetworkSnapshot,
    ProcessingMode, STATE_DIM,
};
use crate::num;

/// RMSE floors at one time index, per state component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundFloors {
    pub rmse_p: f64,
    pub rmse_v: f64,
    pub rmse_a: f64,
}

/// One step of the Fisher information recursion:
/// `J_k = (W + F J_{k-1}^{-1} F^T)^{-1} + H^T R^{-1} H`.
///
/// Dimension-agnostic; `h` may have zero rows (no measurements). Requires
/// `j_prev` positive definite and `transition` invertible, which keeps the
/// predicted covariance positive definite even though the process noise is
/// rank-deficient.
pub fn pcrlb_recursion(
    j_prev: &DMatrix<f64>,
    transition: &DMatrix<f64>,
    process_noise: &DMatrix<f64>,
    h: &DMatrix<f64>,
    noise_var: &DVector<f64>,
) -> Result<DMatrix<f64>, Error> {
    let n = j_prev.nrows();
    if j_prev.ncols() != n || transition.nrows() != n || transition.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: transition.nrows() });
    }
    if process_noise.nrows() != n || process_noise.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: process_noise.nrows() });
    }
    if h.ncols() != n && h.nrows() > 0 {
        return Err(Error::DimensionMismatch { expected: n, found: h.ncols() });
    }
    if noise_var.len() != h.nrows() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), found: noise_var.len() });
    }

    let j_inv = Cholesky::new(j_prev.clone())
        .ok_or(Error::NotPositiveDefinite("information matrix"))?
        .inverse();
    let predicted = process_noise + transition * j_inv * transition.transpose();
    let mut j_next = Cholesky::new(predicted)
        .ok_or(Error::NotPositiveDefinite("predicted covariance"))?
        .inverse();

    for r in 0..h.nrows() {
        if !(noise_var[r] > 0.0) || !noise_var[r].is_finite() {
            return Err(Error::InvalidParameter("noise_var"));
        }
        let inv = 1.0 / noise_var[r];
        for i in 0..n {
            let hi = h[(r, i)] * inv;
            if hi == 0.0 {
                continue;
            }
            for c in 0..=i {
                j_next[(i, c)] += hi * h[(r, c)];
            }
        }
    }
    // The rank-1 terms touched only the lower triangle; mirror it.
    for i in 0..n {
        for c in (i + 1)..n {
            j_next[(i, c)] = j_next[(c, i)];
        }
    }
    Ok(j_next)
}

/// Network-averaged RMSE floors from a stacked information matrix: the
/// square root of the mean positional (velocity, acceleration) CRLB trace
/// over all agents. `None` when `j` is not positive definite.
pub fn floors_from_information(j: &DMatrix<f64>, n_agents: usize) -> Option<BoundFloors> {
    let inv = Cholesky::new(j.clone())?.inverse();
    let mut sums = [0.0f64; 3];
    for i in 0..n_agents {
        for (block, sum) in sums.iter_mut().enumerate() {
            let base = STATE_DIM * i + 3 * block;
            *sum += inv[(base, base)] + inv[(base + 1, base + 1)] + inv[(base + 2, base + 2)];
        }
    }
    let scale = 1.0 / n_agents as f64;
    Some(BoundFloors {
        rmse_p: num::sqrt(sums[0] * scale),
        rmse_v: num::sqrt(sums[1] * scale),
        rmse_a: num::sqrt(sums[2] * scale),
    })
}

fn stack_states(states: &[AgentState]) -> DVector<f64> {
    let mut out = DVector::zeros(STATE_DIM * states.len());
    for (i, s) in states.iter().enumerate() {
        out.rows_mut(STATE_DIM * i, STATE_DIM).copy_from(&s.to_vector());
    }
    out
}

/// Fisher information floors along one scenario realization. `truth[k]`
/// holds all agents' states at time k (k = 0 is the prior epoch, without
/// measurements); `links[k-1]` holds the connectivity realized at step k.
/// Returns one entry per time index including k = 0; an entry is `None`
/// from the first step whose information matrix turns numerically
/// singular onward.
pub fn pcrlb_sequence(
    truth: &[Vec<AgentState>],
    anchors: &[Anchor],
    links: &[Connectivity],
    sigma: f64,
    model: &MotionModel,
    prior_covs: &[DMatrix<f64>],
) -> Result<Vec<Option<BoundFloors>>, Error> {
    if truth.is_empty() {
        return Err(Error::InvalidParameter("truth"));
    }
    let n_agents = truth[0].len();
    if prior_covs.len() != n_agents {
        return Err(Error::DimensionMismatch { expected: n_agents, found: prior_covs.len() });
    }
    if links.len() + 1 != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len() - 1, found: links.len() });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter("sigma"));
    }

    let mut prior_infos = Vec::with_capacity(n_agents);
    for cov in prior_covs {
        prior_infos.push(
            Cholesky::new(cov.clone())
                .ok_or(Error::NotPositiveDefinite("prior covariance"))?
                .inverse(),
        );
    }
    let info_refs: Vec<&DMatrix<f64>> = prior_infos.iter().collect();
    let mut j = Some(block_diag(&info_refs));

    let f = model.f_dyn();
    let q = model.q_dyn();
    let f_refs: Vec<&DMatrix<f64>> = (0..n_agents).map(|_| &f).collect();
    let q_refs: Vec<&DMatrix<f64>> = (0..n_agents).map(|_| &q).collect();
    let f_stack = block_diag(&f_refs);
    let w_stack = block_diag(&q_refs);

    let mut out = Vec::with_capacity(truth.len());
    out.push(j.as_ref().and_then(|m| floors_from_information(m, n_agents)));

    for (k, conn) in links.iter().enumerate() {
        let states = &truth[k + 1];
        let positions: Vec<_> = states.iter().map(|s| s.position).collect();
        let snapshot = snapshot_at_truth(&positions, anchors, conn);
        let mean = stack_states(states);
        let next = match &j {
            Some(prev) => {
                let obs = build_joint_observation(&snapshot, &mean, anchors, sigma)?;
                pcrlb_recursion(prev, &f_stack, &w_stack, &obs.h, &obs.noise_var).ok()
            }
            None => None,
        };
        out.push(next.as_ref().and_then(|m| floors_from_information(m, n_agents)));
        j = next;
    }
    Ok(out)
}

/// A snapshot whose measurement values equal the true ranges; only the row
/// structure matters to the bound, the values never enter the recursion.
fn snapshot_at_truth(
    positions: &[nalgebra::Vector3<f64>],
    anchors: &[Anchor],
    conn: &Connectivity,
) -> NetworkSnapshot {
    let anchor_links = conn
        .anchor_links
        .iter()
        .enumerate()
        .map(|(i, list)| {
            list.iter()
                .map(|&a| AnchorLink {
                    anchor: a,
                    range: range(&positions[i], &anchors[a].position),
                })
                .collect()
        })
        .collect();
    let agent_links = conn
        .agent_links
        .iter()
        .enumerate()
        .map(|(i, list)| {
            list.iter()
                .map(|&jx| AgentLink { agent: jx, range: range(&positions[i], &positions[jx]) })
                .collect()
        })
        .collect();
    NetworkSnapshot { time_index: 0, anchor_links, agent_links, mode: ProcessingMode::Distributed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_connectivity, build_motion_model, generate_scenario, ScenarioConfig};
    use crate::rng::RunStreams;
    use nalgebra::Vector3;

    fn default_prior_cov() -> DMatrix<f64> {
        let cfg = ScenarioConfig::default();
        let sp2 = cfg.prior_sigma_p * cfg.prior_sigma_p;
        let sa = cfg.prior_sigma_a_factor * cfg.sigma_a;
        let sv2 = (cfg.dt * sa) * (cfg.dt * sa);
        let sa2 = sa * sa;
        DMatrix::from_fn(9, 9, |r, c| {
            if r != c {
                0.0
            } else if r < 3 {
                sp2
            } else if r < 6 {
                sv2
            } else {
                sa2
            }
        })
    }

    #[test]
    fn prior_epoch_floor_matches_prior_trace() {
        let cfg = ScenarioConfig { n_agents: 4, steps: 2, ..ScenarioConfig::default() };
        let model = build_motion_model(cfg.dt, cfg.sigma_a).unwrap();
        let streams = RunStreams::new(7, 0);
        let sc = generate_scenario(&cfg, &streams).unwrap();
        let links: Vec<Connectivity> = (1..=2)
            .map(|k| {
                let positions: Vec<_> = sc.truth[k].iter().map(|s| s.position).collect();
                build_connectivity(&positions, &sc.anchors, cfg.r_max)
            })
            .collect();
        let priors: Vec<DMatrix<f64>> = (0..4).map(|_| default_prior_cov()).collect();
        let floors =
            pcrlb_sequence(&sc.truth[..3], &sc.anchors, &links, cfg.sigma, &model, &priors)
                .unwrap();
        assert_eq!(floors.len(), 3);
        let first = floors[0].unwrap();
        assert!((first.rmse_p - (3.0f64).sqrt() * 20.0).abs() < 1e-9);
        assert!((first.rmse_a - (3.0f64).sqrt() * 1.5).abs() < 1e-9);
        // Measurements only tighten the bound.
        assert!(floors[1].unwrap().rmse_p < first.rmse_p);
    }

    #[test]
    fn recursion_without_measurements_inflates_the_bound() {
        let model = build_motion_model(0.1, 0.15).unwrap();
        let prior = default_prior_cov();
        let j0 = Cholesky::new(prior).unwrap().inverse();
        let h = DMatrix::zeros(0, 9);
        let nv = DVector::zeros(0);
        let j1 = pcrlb_recursion(&j0, &model.f_dyn(), &model.q_dyn(), &h, &nv).unwrap();
        let floors0 = floors_from_information(&j0, 1).unwrap();
        let floors1 = floors_from_information(&j1, 1).unwrap();
        assert!(floors1.rmse_p > floors0.rmse_p);
        // Without measurements the bound is exactly the propagated prior.
        let propagated =
            &model.f_dyn() * default_prior_cov() * model.f_dyn().transpose() + model.q_dyn();
        let expected = Cholesky::new(propagated).unwrap().inverse();
        assert!((&j1 - &expected).amax() < 1e-10);
    }

    #[test]
    fn extra_anchor_row_never_raises_the_floor() {
        let model = build_motion_model(0.1, 0.15).unwrap();
        let prior = default_prior_cov();
        let j0 = Cholesky::new(prior).unwrap().inverse();
        use rand::Rng;
        for trial in 0..20 {
            let mut rng =
                RunStreams::new(99, trial).stream(crate::rng::StreamKind::ScenarioInit, 0, 0, 0);
            let own = Vector3::new(
                rng.gen::<f64>() * 10.0,
                rng.gen::<f64>() * 10.0,
                rng.gen::<f64>() * 10.0,
            );
            let mut h = DMatrix::zeros(2, 9);
            for r in 0..2 {
                let anchor = Vector3::new(
                    rng.gen::<f64>() * 20.0 - 5.0,
                    rng.gen::<f64>() * 20.0 - 5.0,
                    rng.gen::<f64>() * 20.0 - 5.0,
                );
                let row = crate::model::range_jacobian_block(&own, &anchor).unwrap();
                h.view_mut((r, 0), (1, 9)).copy_from(&row);
            }
            let extra_anchor = Vector3::new(
                rng.gen::<f64>() * 20.0 - 5.0,
                rng.gen::<f64>() * 20.0 - 5.0,
                rng.gen::<f64>() * 20.0 - 5.0,
            );
            let extra = crate::model::range_jacobian_block(&own, &extra_anchor).unwrap();
            let mut h_more = DMatrix::zeros(3, 9);
            h_more.view_mut((0, 0), (2, 9)).copy_from(&h);
            h_more.view_mut((2, 0), (1, 9)).copy_from(&extra);

            let nv2 = DVector::from_element(2, 0.01);
            let nv3 = DVector::from_element(3, 0.01);
            let j_base = pcrlb_recursion(&j0, &model.f_dyn(), &model.q_dyn(), &h, &nv2).unwrap();
            let j_more =
                pcrlb_recursion(&j0, &model.f_dyn(), &model.q_dyn(), &h_more, &nv3).unwrap();
            let base = floors_from_information(&j_base, 1).unwrap();
            let more = floors_from_information(&j_more, 1).unwrap();
            assert!(more.rmse_p <= base.rmse_p + 1e-12);
            assert!(more.rmse_v <= base.rmse_v + 1e-12);
            assert!(more.rmse_a <= base.rmse_a + 1e-12);
        }
    }

    #[test]
    fn information_matrix_stays_symmetric() {
        let model = build_motion_model(0.1, 0.15).unwrap();
        let j0 = Cholesky::new(default_prior_cov()).unwrap().inverse();
        let own = Vector3::new(1.0, 2.0, 3.0);
        let anchor = Vector3::new(4.0, -2.0, 1.0);
        let row = crate::model::range_jacobian_block(&own, &anchor).unwrap();
        let mut h = DMatrix::zeros(1, 9);
        h.view_mut((0, 0), (1, 9)).copy_from(&row);
        let nv = DVector::from_element(1, 0.01);
        let j1 = pcrlb_recursion(&j0, &model.f_dyn(), &model.q_dyn(), &h, &nv).unwrap();
        assert!((&j1 - &j1.transpose()).amax() == 0.0);
    }
}
