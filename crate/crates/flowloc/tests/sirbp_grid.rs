//! Bootstrap weight update against a dense planar Bayes grid: with a
//! uniform particle cloud confined to a thin slab, the weighted particle
//! mean must land on the grid posterior mean.

use flowloc::model::{
    init_prior, Anchor, AnchorLink, NetworkSnapshot, ProcessingMode, ScenarioConfig,
};
use flowloc::rng::RunStreams;
use flowloc::sirbp::{sirbp_weight_update, SirbpBelief};
use flowloc_testutil::{log_normal, PlanarGrid};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

#[test]
fn weighted_mean_matches_the_dense_grid_posterior() {
    let sigma = 0.1;
    let anchors = vec![
        Anchor { position: Vector3::new(0.0, 0.0, 0.0) },
        Anchor { position: Vector3::new(10.0, 0.0, 0.0) },
        Anchor { position: Vector3::new(10.0, 10.0, 0.0) },
        Anchor { position: Vector3::new(0.0, 10.0, 0.0) },
    ];
    let truth = Vector3::new(3.2, 6.1, 0.0);

    // A vanishing z extent pins the uniform cloud to the plane the grid
    // oracle lives in.
    let cfg = ScenarioConfig {
        n_agents: 1,
        volume: [10.0, 10.0, 1e-9],
        steps: 1,
        ..ScenarioConfig::default()
    };
    let streams = RunStreams::new(0x51b, 0);
    let (_, particles) = init_prior(&cfg, &streams, 0, 100_000, true).unwrap();

    let mut z_rng = ChaCha12Rng::seed_from_u64(99);
    let links: Vec<AnchorLink> = anchors
        .iter()
        .enumerate()
        .map(|(a, anchor)| {
            let d = (truth - anchor.position).norm();
            AnchorLink { anchor: a, range: d + sigma * z_rng.sample::<f64, _>(StandardNormal) }
        })
        .collect();
    let snapshot = NetworkSnapshot {
        time_index: 1,
        anchor_links: vec![links.clone()],
        agent_links: vec![vec![]],
        mode: ProcessingMode::Distributed,
    };

    let previous = vec![SirbpBelief::new(particles.clone())];
    let weights =
        sirbp_weight_update(0, &particles, &previous, &snapshot, &anchors, sigma).unwrap();
    let estimate = particles.samples() * &weights;

    let grid = PlanarGrid::posterior((0.0, 10.0), (0.0, 10.0), 500, 500, &|x, y| {
        let mut total = 0.0;
        for link in &links {
            let a = &anchors[link.anchor].position;
            let d = ((x - a.x) * (x - a.x) + (y - a.y) * (y - a.y)).sqrt();
            total += log_normal(link.range, d, sigma);
        }
        total
    });
    let (gx, gy) = grid.mean();

    let err = ((estimate[0] - gx).powi(2) + (estimate[1] - gy).powi(2)).sqrt();
    assert!(err < 0.05, "weighted mean off the grid mean by {err}");

    // The cloud really was uniform: before weighting its mean sits at the
    // volume center, far from the posterior blob.
    let prior_mean = particles.mean();
    assert!((prior_mean[0] - 5.0).abs() < 0.1 && (prior_mean[1] - 5.0).abs() < 0.1);
}
