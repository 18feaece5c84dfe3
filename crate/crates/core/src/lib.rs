//! Passive hop-distance inference for block-flooding peer-to-peer overlays.
//!
//! A listening node connected to many peers records when each peer announces
//! a new block. After removing half of each peer's round-trip time, the
//! difference between the first announcer (the miner) and a later announcer
//! is a sum of per-hop relay and validation delays, which a Bayesian model
//! turns into a posterior over the number of overlay hops between them.
//!
//! - [`prob`]: prior, closed-form likelihood, evidence and posterior.
//! - [`params`]: latency fits from RTT tables and validation-delay constants.
//! - [`sim`]: random topologies and synthetic timing observations.
//! - [`ingest`]: capture logs to half-RTT-adjusted observations.
//! - [`inference`]: per-pair aggregation and distance decisions.
//! - [`eval`]: scoring and the experiment grid.

pub mod eval;
pub mod inference;
pub mod ingest;
pub mod observation;
pub mod params;
pub mod prob;
pub mod sim;

pub use observation::{Observation, ObservationSet, PeerId, PeerTable};
pub use prob::{HopPrior, LikelihoodParams, NormalParams, PosteriorVector};

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the index.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
