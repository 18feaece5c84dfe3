//! Ground-truth scoring and the simulation experiment grid.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    decide_distance, AggregationMode, InferenceError, InferenceModel, PosteriorAccumulator,
};
use crate::observation::PeerId;
use crate::params::{
    fit_latency_model_with, LatencyBasis, LatencyDataset, LatencyModel, ParamError, ParamPack,
    ProcessingModel, VarianceScenario, DEFAULT_EPSILON_MS, DEFAULT_RELAY_FACTOR,
};
use crate::prob::{DegenerateVariance, NormalParams, DEFAULT_MAX_HOPS};
use crate::sim::{
    generate_topology, CountryDistribution, EdgeWeights, SimError, SynthesisConfig, Synthesizer,
    Topology,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate for pair {0:?} has no ground truth")]
    MissingTruth((PeerId, PeerId)),
    #[error("ground truth for pair {0:?} has no estimate")]
    MissingEstimate((PeerId, PeerId)),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    /// `tp / (tp + fp)`; `None` when nothing was predicted.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`; `None` when the class never occurs.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Binomial standard error of the precision estimate.
    pub fn precision_stderr(&self) -> Option<f64> {
        binomial_stderr(self.precision()?, self.tp + self.fp)
    }

    pub fn recall_stderr(&self) -> Option<f64> {
        binomial_stderr(self.recall()?, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn binomial_stderr(p: f64, n: u64) -> Option<f64> {
    (n > 0).then(|| (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScore {
    pub distance: u32,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    pub classes: Vec<ClassScore>,
}

impl Score {
    pub fn class(&self, distance: u32) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.distance == distance)
    }

    /// `distance,tp,fp,fn,precision,recall`; undefined ratios are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["distance", "tp", "fp", "fn", "precision", "recall"])?;
        for c in &self.classes {
            wtr.write_record([
                c.distance.to_string(),
                c.counts.tp.to_string(),
                c.counts.fp.to_string(),
                c.counts.fn_.to_string(),
                fmt_opt(c.precision),
                fmt_opt(c.recall),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-distance confusion counts for classes `1..=up_to`.
///
/// A missing estimate (`None`) predicts no class: it can only add false
/// negatives. Estimates above `up_to` likewise count against the true class
/// and as no class's true positive.
pub fn score(
    estimates: &BTreeMap<(PeerId, PeerId), Option<u32>>,
    truth: &BTreeMap<(PeerId, PeerId), u32>,
    up_to: u32,
) -> Result<Score, EvalError> {
    if let Some(k) = estimates.keys().find(|k| !truth.contains_key(k)) {
        return Err(EvalError::MissingTruth(*k));
    }
    if let Some(k) = truth.keys().find(|k| !estimates.contains_key(k)) {
        return Err(EvalError::MissingEstimate(*k));
    }
    let mut counts = vec![ConfusionCounts::default(); up_to as usize];
    for (key, est) in estimates {
        let t = truth[key];
        for c in 1..=up_to {
            let slot = &mut counts[(c - 1) as usize];
            let predicted = *est == Some(c);
            match (predicted, t == c) {
                (true, true) => slot.tp += 1,
                (true, false) => slot.fp += 1,
                (false, true) => slot.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(Score {
        classes: counts
            .into_iter()
            .enumerate()
            .map(|(i, counts)| ClassScore {
                distance: i as u32 + 1,
                counts,
                precision: counts.precision(),
                recall: counts.recall(),
            })
            .collect(),
    })
}

/// Where link latencies come from in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencySource {
    /// RTT CSV, or the bundled seven-country table when `path` is absent.
    /// Fitted once per variance scenario.
    Dataset {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    /// One fixed one-way distribution for every country pair. The scenario
    /// axis collapses to a single cell labelled `uniform`.
    Uniform { mean_ms: f64, var_ms2: f64 },
}

impl Default for LatencySource {
    fn default() -> Self {
        Self::Dataset { path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryShare {
    pub country: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProcessingSpec {
    Preset(String),
    Constants(ProcessingModel),
}

impl ProcessingSpec {
    pub fn resolve(&self) -> Result<ProcessingModel, ParamError> {
        match self {
            Self::Preset(name) => ProcessingModel::preset(name),
            Self::Constants(m) => ProcessingModel::new(m.k_mu, m.k_sigma2),
        }
    }
}

/// Full simulation experiment. Defaults reproduce the 300-node,
/// seven-country, 50-repetition setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_nodes: usize,
    pub out_degree: usize,
    pub countries: Vec<CountryShare>,
    pub block_sizes: Vec<u64>,
    pub scenarios: Vec<VarianceScenario>,
    pub repetitions: u32,
    pub epsilon_ms: f64,
    pub max_hops: u32,
    pub processing: ProcessingSpec,
    pub seed: u64,
    /// Largest distance class scored.
    pub up_to: u32,
    pub latency: LatencySource,
    pub latency_basis: LatencyBasis,
    pub relay_factor: f64,
    pub include_processing: bool,
    pub aggregation: AggregationMode,
    pub min_blocks: usize,
    pub degenerate_variance: DegenerateVariance,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            out_degree: 8,
            countries: CountryDistribution::seven_country()
                .entries()
                .iter()
                .map(|(c, s)| CountryShare {
                    country: c.clone(),
                    share: *s,
                })
                .collect(),
            block_sizes: vec![1630, 1_000_000, 2_000_000],
            scenarios: VarianceScenario::NAMED.to_vec(),
            repetitions: 50,
            epsilon_ms: DEFAULT_EPSILON_MS,
            max_hops: DEFAULT_MAX_HOPS,
            processing: ProcessingSpec::Preset("gervais".into()),
            seed: 0,
            up_to: 3,
            latency: LatencySource::default(),
            latency_basis: LatencyBasis::OneWay,
            relay_factor: DEFAULT_RELAY_FACTOR,
            include_processing: true,
            aggregation: AggregationMode::MeanPosterior,
            min_blocks: 1,
            degenerate_variance: DegenerateVariance::PointMass,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.to_owned()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.block_sizes.is_empty() {
            return bad("block_sizes must not be empty");
        }
        if self.scenarios.is_empty() && matches!(self.latency, LatencySource::Dataset { .. }) {
            return bad("scenarios must not be empty");
        }
        if self.up_to == 0 || self.up_to > self.max_hops {
            return bad("up_to must be within 1..=max_hops");
        }
        if self.out_degree >= self.n_nodes {
            return bad("out_degree must be smaller than n_nodes");
        }
        self.country_distribution()?;
        self.processing.resolve()?;
        Ok(())
    }

    pub fn country_distribution(&self) -> Result<CountryDistribution, EvalError> {
        Ok(CountryDistribution::new(
            self.countries
                .iter()
                .map(|c| (c.country.clone(), c.share))
                .collect(),
        )?)
    }

    fn cells(&self) -> Vec<(u64, Option<VarianceScenario>)> {
        let scenarios: Vec<Option<VarianceScenario>> = match self.latency {
            LatencySource::Dataset { .. } => self.scenarios.iter().copied().map(Some).collect(),
            LatencySource::Uniform { .. } => vec![None],
        };
        self.block_sizes
            .iter()
            .flat_map(|b| scenarios.iter().map(move |s| (*b, *s)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub block_size: u64,
    pub scenario: String,
    /// The cell's score, or the error that aborted it.
    pub outcome: Result<CellScore, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScore {
    pub score: Score,
    /// Pairs whose every observation had zero evidence.
    pub uninformative_pairs: usize,
    pub disconnected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub up_to: u32,
    pub cells: Vec<CellResult>,
}

impl ExperimentReport {
    pub fn cell(&self, block_size: u64, scenario: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.block_size == block_size && c.scenario == scenario)
    }

    /// `block_size,scenario,distance,precision,recall,stderr,recall_stderr,tp,fp,fn,error`.
    /// `stderr` is the binomial standard error of the precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "block_size",
            "scenario",
            "distance",
            "precision",
            "recall",
            "stderr",
            "recall_stderr",
            "tp",
            "fp",
            "fn",
            "error",
        ])?;
        for cell in &self.cells {
            match &cell.outcome {
                Ok(cs) => {
                    for c in &cs.score.classes {
                        wtr.write_record([
                            cell.block_size.to_string(),
                            cell.scenario.clone(),
                            c.distance.to_string(),
                            fmt_opt(c.precision),
                            fmt_opt(c.recall),
                            fmt_opt(c.counts.precision_stderr()),
                            fmt_opt(c.counts.recall_stderr()),
                            c.counts.tp.to_string(),
                            c.counts.fp.to_string(),
                            c.counts.fn_.to_string(),
                            String::new(),
                        ])?;
                    }
                }
                Err(e) => {
                    wtr.write_record([
                        cell.block_size.to_string(),
                        cell.scenario.clone(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.clone(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Hop-count ground truth for every ordered pair of distinct nodes.
pub fn topology_truth(topo: &Topology) -> BTreeMap<(PeerId, PeerId), u32> {
    let graph = crate::sim::Graph::new(topo);
    let n = topo.node_count();
    let rows = crate::par_map(n, |s| graph.hop_distances(s as PeerId));
    let mut truth = BTreeMap::new();
    for (s, row) in rows.into_iter().enumerate() {
        for (r, h) in row.into_iter().enumerate() {
            if let (true, Some(h)) = (s != r, h) {
                truth.insert((s as PeerId, r as PeerId), h);
            }
        }
    }
    truth
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64 + 1);
    rng.next_u64()
}

struct Prepared {
    topo: Topology,
    dataset: Option<LatencyDataset>,
    processing: ProcessingModel,
}

fn latency_for(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    scenario: Option<VarianceScenario>,
) -> Result<LatencyModel, EvalError> {
    match (&cfg.latency, scenario) {
        (LatencySource::Uniform { mean_ms, var_ms2 }, _) => {
            let n = NormalParams::new(*mean_ms, *var_ms2)
                .map_err(|e| EvalError::Config(e.to_string()))?;
            let dist = cfg.country_distribution()?;
            Ok(LatencyModel::uniform(&dist.countries(), n))
        }
        (LatencySource::Dataset { .. }, Some(s)) => {
            let data = prep.dataset.as_ref().expect("dataset loaded");
            let required = cfg
                .country_distribution()?
                .countries()
                .iter()
                .enumerate()
                .flat_map(|(i, a)| {
                    cfg.countries[i..]
                        .iter()
                        .map(move |b| crate::params::CountryPair::new(a, &b.country))
                })
                .collect::<Vec<_>>();
            Ok(fit_latency_model_with(
                data,
                s,
                cfg.latency_basis,
                &required,
            )?)
        }
        (LatencySource::Dataset { .. }, None) => unreachable!("dataset cells carry a scenario"),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    truth: &BTreeMap<(PeerId, PeerId), u32>,
    hops: &[Vec<Option<u32>>],
    block_size: u64,
    scenario: Option<VarianceScenario>,
    seed: u64,
) -> Result<CellScore, EvalError> {
    let latency = latency_for(cfg, prep, scenario)?;
    let synth = Synthesizer::new(
        &prep.topo,
        SynthesisConfig {
            processing: prep.processing.processing_params(block_size),
            block_size,
            include_processing: cfg.include_processing,
            weights: EdgeWeights::Redraw {
                model: latency.clone(),
                relay_factor: cfg.relay_factor,
            },
            repetitions: cfg.repetitions,
            seed,
        },
    )?;

    let mut pack = ParamPack::new(&latency, prep.processing);
    pack.epsilon_ms = cfg.epsilon_ms;
    pack.max_hops = cfg.max_hops;
    pack.relay_factor = cfg.relay_factor;
    pack.mean_degree = prep.topo.mean_degree();
    pack.node_count = prep.topo.node_count() as u32;
    pack.degenerate_variance = cfg.degenerate_variance;
    let peers = prep.topo.peer_table();
    let countries: Vec<Option<String>> = prep
        .topo
        .nodes
        .iter()
        .map(|n| Some(n.country.clone()))
        .collect();
    let model = InferenceModel::new(&pack, &peers, &countries)?;

    let n = prep.topo.node_count();
    // Each source mines one block per repetition, so every source has
    // `repetitions` blocks for the miner filter.
    let eligible = cfg.repetitions as usize >= cfg.min_blocks;
    let per_source = crate::par_map(n, |s| -> Result<_, EvalError> {
        let source = s as PeerId;
        let mut accs: Vec<PosteriorAccumulator> = (0..n)
            .map(|_| PosteriorAccumulator::new(cfg.aggregation, cfg.max_hops))
            .collect();
        let mut disconnected = 0;
        for rep in 0..cfg.repetitions {
            let (obs, missing) = synth.observations_from(rep, source, &hops[s]);
            disconnected += missing;
            for o in &obs {
                accs[o.relay as usize].add(&model, o)?;
            }
        }
        let decisions: Vec<(PeerId, Option<u32>, bool)> = accs
            .iter()
            .enumerate()
            .filter(|(r, _)| *r != s && hops[s][*r].is_some())
            .map(|(r, acc)| {
                let post = acc.finish(model.prior());
                (
                    r as PeerId,
                    post.as_ref().map(decide_distance),
                    post.is_none(),
                )
            })
            .collect();
        Ok((decisions, disconnected))
    });

    let mut estimates = BTreeMap::new();
    let mut uninformative_pairs = 0;
    let mut disconnected = 0;
    for (s, res) in per_source.into_iter().enumerate() {
        let (decisions, missing) = res?;
        disconnected += missing;
        for (r, est, uninformative) in decisions {
            uninformative_pairs += usize::from(uninformative);
            estimates.insert((s as PeerId, r), if eligible { est } else { None });
        }
    }
    Ok(CellScore {
        score: score(&estimates, truth, cfg.up_to)?,
        uninformative_pairs,
        disconnected,
    })
}

/// Runs every (block size × scenario) cell: generate one topology, then per
/// cell redraw latencies, synthesize all repetitions, infer every pair and
/// score against hop-count ground truth. A failing cell is recorded and the
/// remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let topo = generate_topology(
        cfg.n_nodes,
        cfg.out_degree,
        &cfg.country_distribution()?,
        cfg.seed,
    )?;
    let dataset = match &cfg.latency {
        LatencySource::Dataset { path: Some(p) } => Some(LatencyDataset::from_csv_path(p)?),
        LatencySource::Dataset { path: None } => Some(LatencyDataset::builtin()),
        LatencySource::Uniform { .. } => None,
    };
    let prep = Prepared {
        topo,
        dataset,
        processing: cfg.processing.resolve()?,
    };
    let truth = topology_truth(&prep.topo);
    let graph = crate::sim::Graph::new(&prep.topo);
    let hops = crate::par_map(prep.topo.node_count(), |s| graph.hop_distances(s as PeerId));

    let cells = cfg
        .cells()
        .into_iter()
        .enumerate()
        .map(|(i, (block_size, scenario))| CellResult {
            block_size,
            scenario: scenario.map_or("uniform", |s| s.name()).to_owned(),
            outcome: run_cell(
                cfg,
                &prep,
                &truth,
                &hops,
                block_size,
                scenario,
                cell_seed(cfg.seed, i),
            )
            .map_err(|e| e.to_string()),
        })
        .collect();
    Ok(ExperimentReport {
        up_to: cfg.up_to,
        cells,
    })
}
