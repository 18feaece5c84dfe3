//! Latency and processing-delay models built from external data.
//!
//! RTT datasets are keyed by unordered country pairs. Fitting yields one-way
//! latency parameters; the relay factor (1.5 by default, one leg for each of
//! inventory, getdata and block) is applied downstream when edge weights are
//! drawn or when the inference model is assembled.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{DegenerateVariance, NormalParams, DEFAULT_MAX_HOPS};

pub const DEFAULT_RELAY_FACTOR: f64 = 1.5;
pub const DEFAULT_EPSILON_MS: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("no latency samples for country pair {0}")]
    EmptyPair(CountryPair),
    #[error("country pair {0} has a single sample; empirical variance is undefined")]
    SingleSample(CountryPair),
    #[error("latency model has no entry for country pair {0}")]
    MissingPair(CountryPair),
    #[error("invalid RTT {rtt} for pair {pair}")]
    InvalidRtt { pair: CountryPair, rtt: f64 },
    #[error("invalid processing constants k_mu={k_mu}, k_sigma2={k_sigma2}")]
    InvalidConstants { k_mu: f64, k_sigma2: f64 },
    #[error("unknown preset {0:?} (expected gervais, testnet or mainnet)")]
    UnknownPreset(String),
    #[error("unknown variance scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid parameter pack: {0}")]
    InvalidPack(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unordered pair of country codes, stored in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryPair(String, String);

impl CountryPair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            Self(a.to_owned(), b.to_owned())
        } else {
            Self(b.to_owned(), a.to_owned())
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }
}

impl fmt::Display for CountryPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttRecord {
    pub country_a: String,
    pub country_b: String,
    pub rtt_ms: f64,
}

/// RTT samples between countries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyDataset {
    pub records: Vec<RttRecord>,
}

/// Representative inter-country RTTs for the seven-country simulation setup.
const BUILTIN_RTT_CSV: &str = include_str!("../data/country_rtt.csv");

impl LatencyDataset {
    /// Reads `country_a,country_b,rtt_ms` CSV with a header row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, ParamError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let rec: RttRecord = row?;
            if !(rec.rtt_ms.is_finite() && rec.rtt_ms > 0.0) {
                return Err(ParamError::InvalidRtt {
                    pair: CountryPair::new(&rec.country_a, &rec.country_b),
                    rtt: rec.rtt_ms,
                });
            }
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, ParamError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn builtin() -> Self {
        Self::from_csv_reader(BUILTIN_RTT_CSV.as_bytes()).expect("bundled RTT table parses")
    }

    fn buckets(&self) -> BTreeMap<CountryPair, Vec<f64>> {
        let mut out: BTreeMap<CountryPair, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            out.entry(CountryPair::new(&r.country_a, &r.country_b))
                .or_default()
                .push(r.rtt_ms);
        }
        out
    }

    /// Every unordered pair over the countries present in the data,
    /// including same-country pairs.
    pub fn country_pairs(&self) -> Vec<CountryPair> {
        let mut countries: Vec<&str> = self
            .records
            .iter()
            .flat_map(|r| [r.country_a.as_str(), r.country_b.as_str()])
            .collect();
        countries.sort_unstable();
        countries.dedup();
        let mut pairs = Vec::new();
        for (i, a) in countries.iter().enumerate() {
            for b in &countries[i..] {
                pairs.push(CountryPair::new(a, b));
            }
        }
        pairs
    }
}

/// Spread assumption for latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceScenario {
    Small,
    Medium,
    Large,
    /// Sample variance of the halved RTTs.
    Empirical,
}

impl VarianceScenario {
    pub const NAMED: [VarianceScenario; 3] = [Self::Small, Self::Medium, Self::Large];

    /// Standard deviation as a fraction of the mean.
    pub fn fraction(&self) -> Option<f64> {
        match self {
            Self::Small => Some(0.10),
            Self::Medium => Some(0.30),
            Self::Large => Some(0.50),
            Self::Empirical => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
            Self::Empirical => "empirical",
        }
    }
}

impl std::str::FromStr for VarianceScenario {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            "large" => Ok(Self::Large),
            "empirical" => Ok(Self::Empirical),
            _ => Err(ParamError::UnknownScenario(s.to_owned())),
        }
    }
}

/// Which quantity the relay factor multiplies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyBasis {
    /// Halve the RTT first; relay delay is `factor · RTT/2`.
    #[default]
    OneWay,
    /// Use the full RTT; relay delay is `factor · RTT`.
    RoundTrip,
}

/// Per-country-pair latency distributions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyModel {
    pairs: BTreeMap<CountryPair, NormalParams>,
}

impl LatencyModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same distribution for every pair drawn from `countries`.
    pub fn uniform(countries: &[&str], params: NormalParams) -> Self {
        let mut model = Self::new();
        for (i, a) in countries.iter().enumerate() {
            for b in &countries[i..] {
                model.insert(a, b, params);
            }
        }
        model
    }

    pub fn insert(&mut self, a: &str, b: &str, params: NormalParams) {
        self.pairs.insert(CountryPair::new(a, b), params);
    }

    pub fn get(&self, a: &str, b: &str) -> Result<NormalParams, ParamError> {
        let key = CountryPair::new(a, b);
        self.pairs
            .get(&key)
            .copied()
            .ok_or(ParamError::MissingPair(key))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CountryPair, &NormalParams)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every pair distribution scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|(k, v)| (k.clone(), v.scaled(factor)))
                .collect(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Fits one latency distribution per country pair found in `data`.
pub fn fit_latency_model(
    data: &LatencyDataset,
    scenario: VarianceScenario,
) -> Result<LatencyModel, ParamError> {
    fit_latency_model_with(data, scenario, LatencyBasis::OneWay, &[])
}

/// As [`fit_latency_model`], with a chosen basis and a list of pairs that
/// must be covered.
pub fn fit_latency_model_with(
    data: &LatencyDataset,
    scenario: VarianceScenario,
    basis: LatencyBasis,
    required: &[CountryPair],
) -> Result<LatencyModel, ParamError> {
    let buckets = data.buckets();
    for pair in required {
        if !buckets.contains_key(pair) {
            return Err(ParamError::EmptyPair(pair.clone()));
        }
    }
    let divisor = match basis {
        LatencyBasis::OneWay => 2.0,
        LatencyBasis::RoundTrip => 1.0,
    };
    let mut model = LatencyModel::new();
    for (pair, rtts) in buckets {
        if rtts.is_empty() {
            return Err(ParamError::EmptyPair(pair));
        }
        let legs: Vec<f64> = rtts.iter().map(|r| r / divisor).collect();
        let mu = mean(&legs);
        let variance = match scenario.fraction() {
            Some(f) => (f * mu) * (f * mu),
            None => {
                if legs.len() < 2 {
                    return Err(ParamError::SingleSample(pair));
                }
                sample_variance(&legs)
            }
        };
        model
            .pairs
            .insert(pair, NormalParams { mean: mu, variance });
    }
    Ok(model)
}

/// Block-size-proportional validation delay, `μ_d = k_μ·s_b`, `σ_d² = k_σ²·s_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessingModel {
    /// µs per byte.
    pub k_mu: f64,
    /// µs² per byte.
    pub k_sigma2: f64,
}

const US_PER_MS: f64 = 1_000.0;

impl ProcessingModel {
    pub fn new(k_mu: f64, k_sigma2: f64) -> Result<Self, ParamError> {
        if !(k_mu.is_finite() && k_sigma2.is_finite() && k_mu >= 0.0 && k_sigma2 >= 0.0) {
            return Err(ParamError::InvalidConstants { k_mu, k_sigma2 });
        }
        Ok(Self { k_mu, k_sigma2 })
    }

    pub const fn none() -> Self {
        Self {
            k_mu: 0.0,
            k_sigma2: 0.0,
        }
    }

    /// Published Bitcoin validation-time constants.
    pub const GERVAIS: Self = Self {
        k_mu: 0.3796,
        k_sigma2: 0.552049,
    };
    /// Constants measured on a test-network node.
    pub const TESTNET: Self = Self {
        k_mu: 8.55,
        k_sigma2: 345.1,
    };
    /// Constants measured on a main-network node.
    pub const MAINNET: Self = Self {
        k_mu: 12.7357,
        k_sigma2: 2128.16,
    };

    pub fn preset(name: &str) -> Result<Self, ParamError> {
        match name {
            "gervais" => Ok(Self::GERVAIS),
            "testnet" => Ok(Self::TESTNET),
            "mainnet" => Ok(Self::MAINNET),
            other => Err(ParamError::UnknownPreset(other.to_owned())),
        }
    }

    /// Processing-delay distribution for one block, in ms and ms². This is
    /// the only place where µs-based constants cross into milliseconds.
    pub fn processing_params(&self, block_size: u64) -> NormalParams {
        let s = block_size as f64;
        NormalParams {
            mean: self.k_mu * s / US_PER_MS,
            variance: self.k_sigma2 * s / (US_PER_MS * US_PER_MS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairParams {
    pub a: String,
    pub b: String,
    pub mean_ms: f64,
    pub var_ms2: f64,
}

fn default_relay_factor() -> f64 {
    DEFAULT_RELAY_FACTOR
}
fn default_mean_degree() -> f64 {
    16.0
}
fn default_node_count() -> u32 {
    300
}

/// Everything inference needs, serialized as JSON.
///
/// `pairs` hold one-way latency; the relay factor scales them into the
/// one-hop relay delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPack {
    pub pairs: Vec<PairParams>,
    pub k_mu_us_per_byte: f64,
    pub k_sigma2_us2_per_byte: f64,
    pub epsilon_ms: f64,
    pub max_hops: u32,
    #[serde(default = "default_relay_factor")]
    pub relay_factor: f64,
    #[serde(default = "default_mean_degree")]
    pub mean_degree: f64,
    #[serde(default = "default_node_count")]
    pub node_count: u32,
    /// Used for peers whose country is unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<NormalParams>,
    #[serde(default)]
    pub degenerate_variance: DegenerateVariance,
}

impl ParamPack {
    pub fn new(model: &LatencyModel, processing: ProcessingModel) -> Self {
        Self {
            pairs: model
                .iter()
                .map(|(k, v)| PairParams {
                    a: k.first().to_owned(),
                    b: k.second().to_owned(),
                    mean_ms: v.mean,
                    var_ms2: v.variance,
                })
                .collect(),
            k_mu_us_per_byte: processing.k_mu,
            k_sigma2_us2_per_byte: processing.k_sigma2,
            epsilon_ms: DEFAULT_EPSILON_MS,
            max_hops: DEFAULT_MAX_HOPS,
            relay_factor: DEFAULT_RELAY_FACTOR,
            mean_degree: default_mean_degree(),
            node_count: default_node_count(),
            fallback: None,
            degenerate_variance: DegenerateVariance::Reject,
        }
    }

    pub fn latency_model(&self) -> Result<LatencyModel, ParamError> {
        let mut model = LatencyModel::new();
        for p in &self.pairs {
            let n = NormalParams::new(p.mean_ms, p.var_ms2)
                .map_err(|e| ParamError::InvalidPack(e.to_string()))?;
            model.insert(&p.a, &p.b, n);
        }
        Ok(model)
    }

    pub fn processing(&self) -> Result<ProcessingModel, ParamError> {
        ProcessingModel::new(self.k_mu_us_per_byte, self.k_sigma2_us2_per_byte)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.latency_model()?;
        self.processing()?;
        let bad = |m: &str| Err(ParamError::InvalidPack(m.to_owned()));
        if !(self.epsilon_ms.is_finite() && self.epsilon_ms >= 0.0) {
            return bad("epsilon_ms must be a non-negative number");
        }
        if self.max_hops == 0 {
            return bad("max_hops must be at least 1");
        }
        if !(self.relay_factor.is_finite() && self.relay_factor > 0.0) {
            return bad("relay_factor must be positive");
        }
        Ok(())
    }

    pub fn from_json_path(path: &Path) -> Result<Self, ParamError> {
        let pack: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        pack.validate()?;
        Ok(pack)
    }
}
