//! Hop-count probability engine.
//!
//! The one-hop relay delay is a normal latency term plus a normal processing
//! term, so the `h`-fold convolution of both is again normal with mean
//! `h·(μ_λ+μ_d)` and variance `h·(σ_λ²+σ_d²)`. Likelihoods integrate that
//! density over a tolerance window `[t−ε, t+ε]`, the prior is the geometric
//! hop distribution of an Erdős–Rényi graph, and the posterior is Bayes over
//! the truncated support `1..=max_hops`.
//!
//! All durations are milliseconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Likelihood terms below this are flushed to zero.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Default truncation of the hop support.
pub const DEFAULT_MAX_HOPS: u32 = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("invalid normal parameters: mean {mean}, variance {variance}")]
    InvalidNormal { mean: f64, variance: f64 },
    #[error("invalid hop prior: mean degree {mean_degree}, node count {node_count}")]
    InvalidPrior { mean_degree: f64, node_count: u32 },
    #[error("hop count must be at least 1")]
    ZeroHops,
    #[error("hop count {h} exceeds max_hops {max_hops}")]
    HopOutOfRange { h: u32, max_hops: u32 },
    #[error("invalid tolerance window {0}")]
    InvalidTolerance(f64),
    #[error("time difference {0} is not finite")]
    NonFiniteTime(f64),
    #[error("combined per-hop variance is zero")]
    DegenerateVariance,
    /// `P(Δ=t)` vanished over the whole hop support.
    #[error("observation at t={t} ms has zero evidence over 1..={max_hops} hops")]
    Uninformative { t: f64, max_hops: u32 },
    #[error("posterior vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no posterior vectors to aggregate")]
    Empty,
}

/// Mean and variance of a normal distribution, in ms and ms².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

impl NormalParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self, ProbError> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(ProbError::InvalidNormal { mean, variance });
        }
        Ok(Self { mean, variance })
    }

    pub const fn zero() -> Self {
        Self {
            mean: 0.0,
            variance: 0.0,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Distribution of `factor · X`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            variance: self.variance * factor * factor,
        }
    }
}

/// Geometric prior over hop counts derived from a uniform edge probability
/// `deg / (N − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopPrior {
    pub mean_degree: f64,
    pub node_count: u32,
}

impl HopPrior {
    pub fn new(mean_degree: f64, node_count: u32) -> Result<Self, ProbError> {
        let prior = Self {
            mean_degree,
            node_count,
        };
        prior.validate()?;
        Ok(prior)
    }

    fn validate(&self) -> Result<(), ProbError> {
        let ok = self.node_count >= 3
            && self.mean_degree.is_finite()
            && self.mean_degree > 0.0
            && self.mean_degree < f64::from(self.node_count - 1);
        if ok {
            Ok(())
        } else {
            Err(ProbError::InvalidPrior {
                mean_degree: self.mean_degree,
                node_count: self.node_count,
            })
        }
    }

    /// Probability that any given pair shares an edge.
    pub fn edge_probability(&self) -> f64 {
        self.mean_degree / f64::from(self.node_count - 1)
    }

    /// `P(H = h) = (1 − p)^(h−1) · p`.
    pub fn prob(&self, h: u32) -> Result<f64, ProbError> {
        self.validate()?;
        if h == 0 {
            return Err(ProbError::ZeroHops);
        }
        let p = self.edge_probability();
        Ok((1.0 - p).powi(h as i32 - 1) * p)
    }
}

/// How a zero combined per-hop variance is treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateVariance {
    /// Zero variance is an error.
    #[default]
    Reject,
    /// Evaluate the σ → 0 limit: the window captures the full mass when it
    /// strictly contains the mean, half of it when the mean sits on the edge.
    PointMass,
}

/// Parameters of the per-hop timing likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParams {
    pub latency: NormalParams,
    pub processing: NormalParams,
    pub tolerance_eps: f64,
    pub max_hops: u32,
    #[serde(default)]
    pub degenerate: DegenerateVariance,
}

impl LikelihoodParams {
    pub fn new(
        latency: NormalParams,
        processing: NormalParams,
        tolerance_eps: f64,
        max_hops: u32,
    ) -> Result<Self, ProbError> {
        let params = Self {
            latency,
            processing,
            tolerance_eps,
            max_hops,
            degenerate: DegenerateVariance::Reject,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_degenerate(mut self, mode: DegenerateVariance) -> Self {
        self.degenerate = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ProbError> {
        for n in [self.latency, self.processing] {
            NormalParams::new(n.mean, n.variance)?;
        }
        if !self.tolerance_eps.is_finite() || self.tolerance_eps < 0.0 {
            return Err(ProbError::InvalidTolerance(self.tolerance_eps));
        }
        if self.max_hops == 0 {
            return Err(ProbError::ZeroHops);
        }
        if self.per_hop_variance() <= 0.0 && self.degenerate == DegenerateVariance::Reject {
            return Err(ProbError::DegenerateVariance);
        }
        Ok(())
    }

    pub fn per_hop_mean(&self) -> f64 {
        self.latency.mean + self.processing.mean
    }

    pub fn per_hop_variance(&self) -> f64 {
        self.latency.variance + self.processing.variance
    }

    /// Distribution of the sum of `h` independent one-hop delays.
    pub fn hop_distribution(&self, h: u32) -> NormalParams {
        let h = f64::from(h);
        NormalParams {
            mean: h * self.per_hop_mean(),
            variance: h * self.per_hop_variance(),
        }
    }
}

/// Standard normal upper tail `Q(z) = 1 − Φ(z)`.
fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Beyond this many standard deviations the tail mass is below
/// [`UNDERFLOW_FLOOR`] and would be flushed anyway.
const NEGLIGIBLE_Z: f64 = 38.0;

/// Mass of `N(mean, variance)` on `[lo, hi]`, evaluated on whichever tail
/// keeps the subtraction well conditioned.
fn normal_interval_mass(dist: NormalParams, lo: f64, hi: f64) -> f64 {
    let sd = dist.std_dev();
    let z_lo = (lo - dist.mean) / sd;
    let z_hi = (hi - dist.mean) / sd;
    if z_lo >= NEGLIGIBLE_Z || z_hi <= -NEGLIGIBLE_Z {
        0.0
    } else if z_lo >= 0.0 {
        upper_tail(z_lo) - upper_tail(z_hi)
    } else if z_hi <= 0.0 {
        upper_tail(-z_hi) - upper_tail(-z_lo)
    } else {
        1.0 - upper_tail(-z_lo) - upper_tail(z_hi)
    }
}

fn point_mass_window(mean: f64, lo: f64, hi: f64) -> f64 {
    if lo < mean && mean < hi {
        1.0
    } else if mean == lo || mean == hi {
        if lo == hi {
            0.0
        } else {
            0.5
        }
    } else {
        0.0
    }
}

/// `P(t−ε ≤ Δ ≤ t+ε | H = h)` in closed form.
pub fn hop_likelihood(params: &LikelihoodParams, h: u32, t: f64) -> Result<f64, ProbError> {
    params.validate()?;
    if h == 0 {
        return Err(ProbError::ZeroHops);
    }
    if !t.is_finite() {
        return Err(ProbError::NonFiniteTime(t));
    }
    Ok(likelihood_unchecked(params, h, t))
}

fn likelihood_unchecked(params: &LikelihoodParams, h: u32, t: f64) -> f64 {
    let dist = params.hop_distribution(h);
    let (lo, hi) = (t - params.tolerance_eps, t + params.tolerance_eps);
    let mass = if dist.variance > 0.0 {
        normal_interval_mass(dist, lo, hi).max(0.0)
    } else {
        point_mass_window(dist.mean, lo, hi)
    };
    if mass < UNDERFLOW_FLOOR {
        0.0
    } else {
        mass.min(1.0)
    }
}

/// Likelihoods for every `h` in `1..=max_hops`, index `h − 1`.
pub fn likelihood_vector(params: &LikelihoodParams, t: f64) -> Result<Vec<f64>, ProbError> {
    params.validate()?;
    if !t.is_finite() {
        return Err(ProbError::NonFiniteTime(t));
    }
    Ok((1..=params.max_hops)
        .map(|h| likelihood_unchecked(params, h, t))
        .collect())
}

/// Prior terms for every `h` in `1..=max_hops`, index `h − 1`.
pub fn prior_vector(prior: &HopPrior, max_hops: u32) -> Result<Vec<f64>, ProbError> {
    (1..=max_hops).map(|h| prior.prob(h)).collect()
}

/// `P(Δ=t)` by total probability over the truncated hop support.
///
/// Zero evidence is reported as [`ProbError::Uninformative`].
pub fn evidence(prior: &HopPrior, params: &LikelihoodParams, t: f64) -> Result<f64, ProbError> {
    let lik = likelihood_vector(params, t)?;
    let pri = prior_vector(prior, params.max_hops)?;
    let total: f64 = lik.iter().zip(&pri).map(|(l, p)| l * p).sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(ProbError::Uninformative {
            t,
            max_hops: params.max_hops,
        })
    }
}

/// `P(H=h | Δ=t)` for `h = 1..=max_hops`, renormalized over that support.
pub fn posterior(
    prior: &HopPrior,
    params: &LikelihoodParams,
    t: f64,
) -> Result<PosteriorVector, ProbError> {
    let lik = likelihood_vector(params, t)?;
    let pri = prior_vector(prior, params.max_hops)?;
    let joint: Vec<f64> = lik.iter().zip(&pri).map(|(l, p)| l * p).collect();
    let total: f64 = joint.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(ProbError::Uninformative {
            t,
            max_hops: params.max_hops,
        });
    }
    Ok(PosteriorVector {
        probs: joint.into_iter().map(|j| j / total).collect(),
    })
}

/// Probability mass over hop counts `1..=len`; `probs[h − 1]` holds `P(H=h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector {
    probs: Vec<f64>,
}

impl PosteriorVector {
    /// Normalizes `weights` into a distribution. Weights must be finite and
    /// non-negative with a positive sum.
    pub fn from_weights(weights: Vec<f64>) -> Option<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return None;
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        Some(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// All mass on hop count `h`.
    pub fn one_hot(h: u32, max_hops: u32) -> Self {
        let mut probs = vec![0.0; max_hops as usize];
        probs[(h - 1) as usize] = 1.0;
        Self { probs }
    }

    pub fn max_hops(&self) -> u32 {
        self.probs.len() as u32
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, h: u32) -> Option<f64> {
        h.checked_sub(1)
            .and_then(|i| self.probs.get(i as usize).copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32 + 1, *p))
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Most probable hop count; ties go to the smaller `h`.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best as u32 + 1
    }
}
