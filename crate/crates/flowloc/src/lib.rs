//! Cooperative localization for networks of mobile agents.
//!
//! Agents carry a 9-D state (position, velocity, acceleration in 3-D) that
//! evolves under a constant-acceleration motion model, and they measure
//! noisy ranges to fixed anchors and to neighboring agents. This crate
//! provides three estimators over such networks together with the matching
//! performance bound:
//!
//! * [`pfbp`]: belief propagation whose messages are computed by particle
//!   flow over a stacked self-plus-neighbors state, with an invertible-flow
//!   importance correction. Runs one flow per agent, so it distributes.
//! * [`edh`]: the exact Daum-Huang homotopy flow applied to the joint
//!   stacked state of all agents, as a centralized reference filter.
//! * [`sirbp`]: a bootstrap sampling-importance-resampling belief
//!   propagation baseline.
//! * [`bounds`]: the posterior Cramér-Rao lower bound along the true
//!   trajectories.
//!
//! The crate is `no_std`-compatible (with `alloc`); the `std` feature (on
//! by default) additionally enables per-agent wall-clock accounting in the
//! filter steps. All randomness flows through [`rng::RunStreams`], which
//! gives every (run, time step, agent, iteration, role) tuple its own
//! counter-based stream so that experiments are reproducible bit for bit
//! regardless of execution order.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bounds;
pub mod edh;
mod error;
pub mod flow;
pub mod metrics;
pub mod model;
pub mod pfbp;
pub mod rng;
pub mod sirbp;

pub use error::Error;
pub use model::{
    AgentState, Anchor, GaussianBelief, MotionModel, NetworkSnapshot, ParticleSet, ProcessingMode,
    ScenarioConfig,
};
pub use rng::{RunStreams, StreamKind};

/// Scalar math that works both with and without the standard library.
///
/// With `std` these resolve to the inherent `f64` methods; without it they
/// go through nalgebra's real-field abstraction, which the `libm` feature
/// backs on bare-metal targets.
pub(crate) mod num {
    #[cfg(feature = "std")]
    #[inline(always)]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[cfg(feature = "std")]
    #[inline(always)]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    #[cfg(feature = "std")]
    #[inline(always)]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[cfg(feature = "std")]
    #[inline(always)]
    pub fn abs(x: f64) -> f64 {
        x.abs()
    }

    #[cfg(not(feature = "std"))]
    #[inline(always)]
    pub fn sqrt(x: f64) -> f64 {
        nalgebra::ComplexField::sqrt(x)
    }
    #[cfg(not(feature = "std"))]
    #[inline(always)]
    pub fn exp(x: f64) -> f64 {
        nalgebra::ComplexField::exp(x)
    }
    #[cfg(not(feature = "std"))]
    #[inline(always)]
    pub fn ln(x: f64) -> f64 {
        nalgebra::ComplexField::ln(x)
    }
    #[cfg(not(feature = "std"))]
    #[inline(always)]
    pub fn abs(x: f64) -> f64 {
        nalgebra::ComplexField::abs(x)
    }
}

/// Wall-clock stopwatch that degrades to a no-op without `std`, so the
/// filter code can report per-agent timing where a clock exists and still
/// compile for bare-metal targets.
pub(crate) struct Stopwatch {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Stopwatch {
    #[inline]
    pub fn start() -> Self {
        Stopwatch {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    /// Seconds since `start`; always 0 without `std`.
    #[inline]
    pub fn seconds(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}
