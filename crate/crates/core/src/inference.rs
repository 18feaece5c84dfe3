//! Per-observation posteriors, cross-block aggregation and the direct
//! connection decision.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{Observation, PeerId, PeerTable};
use crate::params::{CountryPair, ParamError, ParamPack, ProcessingModel};
use crate::prob::{
    self, DegenerateVariance, HopPrior, LikelihoodParams, NormalParams, PosteriorVector, ProbError,
};

/// Decisions above this many hops are flagged as low confidence.
pub const CONFIDENT_MAX_HOPS: u32 = 3;

pub const DEFAULT_MIN_BLOCKS: usize = 5;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("no country known for peer {0}")]
    UnknownCountry(String),
    #[error("parameter pack has no latency for country pair {0}")]
    MissingPair(CountryPair),
}

impl InferenceError {
    pub fn is_uninformative(&self) -> bool {
        matches!(self, Self::Prob(ProbError::Uninformative { .. }))
    }
}

/// How posteriors of one (source, relay) pair are combined across blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Arithmetic mean of per-block posteriors.
    #[default]
    MeanPosterior,
    /// Multiply per-block likelihoods, then apply the prior once.
    Bayesian,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" | "mean_posterior" => Ok(Self::MeanPosterior),
            "bayes" | "bayesian" => Ok(Self::Bayesian),
            _ => Err(format!("unknown aggregation mode {s:?}")),
        }
    }
}

/// Latency, processing and prior parameters resolved against a set of peers.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    prior: HopPrior,
    processing: ProcessingModel,
    epsilon_ms: f64,
    max_hops: u32,
    degenerate: DegenerateVariance,
    country_names: Vec<String>,
    peer_country: Vec<Option<usize>>,
    /// Relay-scaled one-hop latency, `country_names.len()²` entries.
    pair_latency: Vec<Option<NormalParams>>,
    fallback: Option<NormalParams>,
    peer_names: Vec<String>,
}

impl InferenceModel {
    /// `peer_countries[id]` is the country of peer `id`, if known.
    pub fn new(
        pack: &ParamPack,
        peers: &PeerTable,
        peer_countries: &[Option<String>],
    ) -> Result<Self, InferenceError> {
        pack.validate()?;
        let prior = HopPrior::new(pack.mean_degree, pack.node_count)?;
        let latency = pack.latency_model()?.scaled(pack.relay_factor);
        let mut country_names: Vec<String> = peer_countries.iter().flatten().cloned().collect();
        country_names.sort();
        country_names.dedup();
        let k = country_names.len();
        let mut pair_latency = vec![None; k * k];
        for (i, a) in country_names.iter().enumerate() {
            for (j, b) in country_names.iter().enumerate() {
                pair_latency[i * k + j] = latency.get(a, b).ok();
            }
        }
        let peer_country = peer_countries
            .iter()
            .map(|c| {
                c.as_ref()
                    .map(|c| country_names.binary_search(c).expect("collected"))
            })
            .collect();
        Ok(Self {
            prior,
            processing: pack.processing()?,
            epsilon_ms: pack.epsilon_ms,
            max_hops: pack.max_hops,
            degenerate: pack.degenerate_variance,
            country_names,
            peer_country,
            pair_latency,
            fallback: pack.fallback.map(|f| f.scaled(pack.relay_factor)),
            peer_names: (0..peers.len() as PeerId)
                .map(|p| peers.name(p).to_owned())
                .collect(),
        })
    }

    pub fn prior(&self) -> &HopPrior {
        &self.prior
    }

    pub fn max_hops(&self) -> u32 {
        self.max_hops
    }

    fn peer_name(&self, p: PeerId) -> String {
        self.peer_names
            .get(p as usize)
            .cloned()
            .unwrap_or_else(|| p.to_string())
    }

    fn country(&self, p: PeerId) -> Option<usize> {
        self.peer_country.get(p as usize).copied().flatten()
    }

    fn latency(&self, source: PeerId, relay: PeerId) -> Result<NormalParams, InferenceError> {
        let k = self.country_names.len();
        match (self.country(source), self.country(relay)) {
            (Some(a), Some(b)) => self.pair_latency[a * k + b]
                .or(self.fallback)
                .ok_or_else(|| {
                    InferenceError::MissingPair(CountryPair::new(
                        &self.country_names[a],
                        &self.country_names[b],
                    ))
                }),
            (None, _) => self
                .fallback
                .ok_or_else(|| InferenceError::UnknownCountry(self.peer_name(source))),
            (_, None) => self
                .fallback
                .ok_or_else(|| InferenceError::UnknownCountry(self.peer_name(relay))),
        }
    }

    /// Likelihood parameters for one observation's pair and block size.
    pub fn likelihood_params(&self, obs: &Observation) -> Result<LikelihoodParams, InferenceError> {
        let params = LikelihoodParams {
            latency: self.latency(obs.source, obs.relay)?,
            processing: self.processing.processing_params(obs.block_size),
            tolerance_eps: self.epsilon_ms,
            max_hops: self.max_hops,
            degenerate: self.degenerate,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Posterior over hop counts for a single observation.
pub fn observation_posterior(
    model: &InferenceModel,
    obs: &Observation,
) -> Result<PosteriorVector, InferenceError> {
    let params = model.likelihood_params(obs)?;
    Ok(prob::posterior(&model.prior, &params, obs.delta_ms)?)
}

/// Running combination of observations for one pair.
#[derive(Debug, Clone)]
pub struct PosteriorAccumulator {
    mode: AggregationMode,
    sums: Vec<f64>,
    informative: usize,
    uninformative: usize,
}

impl PosteriorAccumulator {
    pub fn new(mode: AggregationMode, max_hops: u32) -> Self {
        Self {
            mode,
            sums: vec![0.0; max_hops as usize],
            informative: 0,
            uninformative: 0,
        }
    }

    /// Adds one observation. Zero-evidence observations are counted and
    /// otherwise ignored; other errors propagate.
    pub fn add(&mut self, model: &InferenceModel, obs: &Observation) -> Result<(), InferenceError> {
        let params = model.likelihood_params(obs)?;
        match self.mode {
            AggregationMode::MeanPosterior => {
                match prob::posterior(&model.prior, &params, obs.delta_ms) {
                    Ok(post) => self.add_posterior(&post),
                    Err(ProbError::Uninformative { .. }) => self.uninformative += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            AggregationMode::Bayesian => {
                let lik = prob::likelihood_vector(&params, obs.delta_ms)?;
                if lik.iter().all(|l| *l == 0.0) {
                    self.uninformative += 1;
                } else {
                    for (s, l) in self.sums.iter_mut().zip(&lik) {
                        *s += l.ln();
                    }
                    self.informative += 1;
                }
            }
        }
        Ok(())
    }

    pub fn add_posterior(&mut self, post: &PosteriorVector) {
        for (s, p) in self.sums.iter_mut().zip(post.probs()) {
            *s += p;
        }
        self.informative += 1;
    }

    pub fn informative(&self) -> usize {
        self.informative
    }

    pub fn uninformative(&self) -> usize {
        self.uninformative
    }

    /// Combined posterior, or `None` without informative observations.
    pub fn finish(&self, prior: &HopPrior) -> Option<PosteriorVector> {
        if self.informative == 0 {
            return None;
        }
        match self.mode {
            AggregationMode::MeanPosterior => {
                let n = self.informative as f64;
                PosteriorVector::from_weights(self.sums.iter().map(|s| s / n).collect())
            }
            AggregationMode::Bayesian => {
                let log_post: Vec<f64> = self
                    .sums
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        s + prior
                            .prob(i as u32 + 1)
                            .ok()
                            .map_or(f64::NEG_INFINITY, f64::ln)
                    })
                    .collect();
                let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !top.is_finite() {
                    return None;
                }
                PosteriorVector::from_weights(log_post.iter().map(|l| (l - top).exp()).collect())
            }
        }
    }
}

/// Per-hop arithmetic mean of posteriors, renormalized.
pub fn aggregate(posteriors: &[PosteriorVector]) -> Result<PosteriorVector, ProbError> {
    let first = posteriors.first().ok_or(ProbError::Empty)?;
    let len = first.probs().len();
    let mut sums = vec![0.0; len];
    for p in posteriors {
        if p.probs().len() != len {
            return Err(ProbError::LengthMismatch(len, p.probs().len()));
        }
        for (s, x) in sums.iter_mut().zip(p.probs()) {
            *s += x;
        }
    }
    let n = posteriors.len() as f64;
    PosteriorVector::from_weights(sums.into_iter().map(|s| s / n).collect()).ok_or(ProbError::Empty)
}

/// Most probable distance; ties resolve toward fewer hops.
pub fn decide_distance(agg: &PosteriorVector) -> u32 {
    agg.argmax()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFlag {
    Direct,
    Indirect,
    /// Estimated beyond [`CONFIDENT_MAX_HOPS`].
    LowConfidence,
    /// No observation of the pair carried evidence.
    Uninformative,
}

impl EdgeFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Indirect => "indirect",
            Self::LowConfidence => "low_confidence",
            Self::Uninformative => "uninformative",
        }
    }

    fn for_hops(h: Option<u32>) -> Self {
        match h {
            None => Self::Uninformative,
            Some(1) => Self::Direct,
            Some(h) if h > CONFIDENT_MAX_HOPS => Self::LowConfidence,
            Some(_) => Self::Indirect,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub source: PeerId,
    pub relay: PeerId,
    pub estimated_hops: Option<u32>,
    pub posterior: Option<PosteriorVector>,
    pub observation_count: usize,
    pub uninformative_count: usize,
    pub flag: EdgeFlag,
}

impl PairEstimate {
    pub fn posterior_at_argmax(&self) -> Option<f64> {
        let h = self.estimated_hops?;
        self.posterior.as_ref()?.get(h)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeInference {
    /// Every qualifying pair, ordered by (source, relay) id.
    pub pairs: Vec<PairEstimate>,
}

impl EdgeInference {
    /// Pairs classified as directly connected.
    pub fn direct_edges(&self) -> BTreeSet<(PeerId, PeerId)> {
        self.pairs
            .iter()
            .filter(|p| p.flag == EdgeFlag::Direct)
            .map(|p| (p.source, p.relay))
            .collect()
    }

    /// Pairs without a single informative observation.
    pub fn uninformative_pairs(&self) -> Vec<(PeerId, PeerId)> {
        self.pairs
            .iter()
            .filter(|p| p.flag == EdgeFlag::Uninformative)
            .map(|p| (p.source, p.relay))
            .collect()
    }

    /// `source,relay,estimated_hops,mean_posterior_at_argmax,observation_count,flag`,
    /// rows sorted by peer names.
    pub fn write_csv<W: Write>(&self, peers: &PeerTable, writer: W) -> Result<(), csv::Error> {
        let mut rows: Vec<&PairEstimate> = self.pairs.iter().collect();
        rows.sort_by(|a, b| {
            (peers.name(a.source), peers.name(a.relay))
                .cmp(&(peers.name(b.source), peers.name(b.relay)))
        });
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "source",
            "relay",
            "estimated_hops",
            "mean_posterior_at_argmax",
            "observation_count",
            "flag",
        ])?;
        for p in rows {
            wtr.write_record([
                peers.name(p.source).to_owned(),
                peers.name(p.relay).to_owned(),
                p.estimated_hops.map(|h| h.to_string()).unwrap_or_default(),
                p.posterior_at_argmax()
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                p.observation_count.to_string(),
                p.flag.as_str().to_owned(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Aggregates every (source, relay) pair whose source mined at least
/// `min_blocks` blocks and decides its distance.
pub fn infer_edges(
    observations: &[Observation],
    model: &InferenceModel,
    min_blocks: usize,
    mode: AggregationMode,
) -> Result<EdgeInference, InferenceError> {
    let miners = crate::ingest::filter_miners(observations, min_blocks);
    let mut groups: BTreeMap<(PeerId, PeerId), Vec<&Observation>> = BTreeMap::new();
    for o in observations.iter().filter(|o| miners.contains(&o.source)) {
        groups.entry((o.source, o.relay)).or_default().push(o);
    }
    let groups: Vec<((PeerId, PeerId), Vec<&Observation>)> = groups.into_iter().collect();
    let results = crate::par_map(groups.len(), |i| {
        let ((source, relay), obs) = &groups[i];
        let mut obs = obs.clone();
        // Fixed summation order regardless of input order.
        obs.sort_by(|a, b| {
            a.repetition
                .cmp(&b.repetition)
                .then(a.delta_ms.total_cmp(&b.delta_ms))
                .then(a.block_size.cmp(&b.block_size))
        });
        let mut acc = PosteriorAccumulator::new(mode, model.max_hops);
        for o in &obs {
            acc.add(model, o)?;
        }
        let posterior = acc.finish(&model.prior);
        let estimated_hops = posterior.as_ref().map(decide_distance);
        Ok(PairEstimate {
            source: *source,
            relay: *relay,
            estimated_hops,
            posterior,
            observation_count: obs.len(),
            uninformative_count: acc.uninformative(),
            flag: EdgeFlag::for_hops(estimated_hops),
        })
    });
    Ok(EdgeInference {
        pairs: results.into_iter().collect::<Result<_, InferenceError>>()?,
    })
}

/// Country per peer id, looked up by peer name.
pub fn peer_countries(peers: &PeerTable, by_name: &HashMap<String, String>) -> Vec<Option<String>> {
    (0..peers.len() as PeerId)
        .map(|p| by_name.get(peers.name(p)).cloned())
        .collect()
}
