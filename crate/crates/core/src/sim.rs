//! Random overlay topologies and synthetic block-arrival timings.
//!
//! Every node opens `out_degree` connections to distinct random peers, as a
//! reference client does with its outgoing slots; repeated picks of the same
//! pair collapse into one undirected edge. Edge weights are one-hop relay
//! delays drawn per country pair. A block mined at a source reaches every
//! other node along the fastest path, where each traversed hop costs the edge
//! weight plus a validation delay at the receiving node. The vantage point
//! only listens, so its links never carry relays.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{Observation, ObservationSet, PeerId, PeerTable};
use crate::params::{LatencyModel, ParamError};
use crate::prob::NormalParams;

/// Floor applied to sampled edge weights, ms.
pub const MIN_EDGE_WEIGHT_MS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("out_degree {out_degree} must be smaller than node count {n}")]
    DegreeTooLarge { n: usize, out_degree: usize },
    #[error("invalid country distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("source {0} is not a node of the topology")]
    UnknownSource(PeerId),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("invalid relay factor {0}")]
    InvalidRelayFactor(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Country shares used when assigning locations to nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryDistribution {
    entries: Vec<(String, f64)>,
}

impl CountryDistribution {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, SimError> {
        if entries.is_empty() {
            return Err(SimError::InvalidDistribution("no countries".into()));
        }
        if let Some((c, s)) = entries.iter().find(|(_, s)| !(s.is_finite() && *s > 0.0)) {
            return Err(SimError::InvalidDistribution(format!(
                "share {s} for {c} must be positive"
            )));
        }
        let total: f64 = entries.iter().map(|(_, s)| s).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidDistribution(format!(
                "shares sum to {total}, expected 1"
            )));
        }
        Ok(Self { entries })
    }

    /// Seven northern-hemisphere countries: US 30%, RU 20%, and 10% each for
    /// CA, CN, FR, DE, JP.
    pub fn seven_country() -> Self {
        let entries = [
            ("US", 0.3),
            ("RU", 0.2),
            ("CA", 0.1),
            ("CN", 0.1),
            ("FR", 0.1),
            ("DE", 0.1),
            ("JP", 0.1),
        ];
        Self::new(entries.iter().map(|(c, s)| (c.to_string(), *s)).collect())
            .expect("shares sum to one")
    }

    pub fn single(country: &str) -> Self {
        Self {
            entries: vec![(country.to_owned(), 1.0)],
        }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn countries(&self) -> Vec<&str> {
        self.entries.iter().map(|(c, _)| c.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: PeerId,
    pub country: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: PeerId,
    pub b: PeerId,
    pub weight_ms: f64,
}

/// Undirected country-tagged overlay. Edges are stored with `a < b`, sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub seed: u64,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.nodes.len() as f64
    }

    pub fn country(&self, id: PeerId) -> &str {
        &self.nodes[id as usize].country
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidTopology(m));
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id as usize != i {
                return bad(format!("node ids must be dense, found {} at {i}", n.id));
            }
        }
        let n = self.nodes.len() as PeerId;
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.a == e.b {
                return bad(format!("self-loop at {}", e.a));
            }
            if e.a >= n || e.b >= n {
                return bad(format!("edge {}-{} references a missing node", e.a, e.b));
            }
            if !(e.weight_ms.is_finite() && e.weight_ms > 0.0) {
                return bad(format!("edge {}-{} has weight {}", e.a, e.b, e.weight_ms));
            }
            if !seen.insert((e.a.min(e.b), e.a.max(e.b))) {
                return bad(format!("duplicate edge {}-{}", e.a, e.b));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let topo: Self = serde_json::from_str(text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn from_json_path(path: &Path) -> Result<Self, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Peer names for this topology: each node's decimal id.
    pub fn peer_table(&self) -> PeerTable {
        PeerTable::numeric(self.nodes.len())
    }
}

/// Random topology where each node attempts `out_degree` connections.
///
/// Edge weights are set to 1 ms until [`assign_edge_latencies`] runs.
pub fn generate_topology(
    n: usize,
    out_degree: usize,
    dist: &CountryDistribution,
    seed: u64,
) -> Result<Topology, SimError> {
    if out_degree >= n {
        return Err(SimError::DegreeTooLarge { n, out_degree });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(dist.entries.iter().map(|(_, s)| *s))
        .map_err(|e| SimError::InvalidDistribution(e.to_string()))?;
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: i as PeerId,
            country: dist.entries[picker.sample(&mut rng)].0.clone(),
        })
        .collect();

    let mut pairs = BTreeSet::new();
    for i in 0..n {
        // Pick among the n − 1 other nodes.
        for k in index::sample(&mut rng, n - 1, out_degree) {
            let j = if k >= i { k + 1 } else { k };
            pairs.insert((i.min(j) as PeerId, i.max(j) as PeerId));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| Edge {
            a,
            b,
            weight_ms: 1.0,
        })
        .collect();
    Ok(Topology { nodes, edges, seed })
}

fn edge_models(topo: &Topology, model: &LatencyModel) -> Result<Vec<NormalParams>, SimError> {
    topo.edges
        .iter()
        .map(|e| Ok(model.get(topo.country(e.a), topo.country(e.b))?))
        .collect()
}

fn draw_weights(models: &[NormalParams], relay_factor: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    models
        .iter()
        .map(|m| {
            let draw = Normal::new(m.mean, m.std_dev())
                .expect("validated normal")
                .sample(rng);
            (draw * relay_factor).max(MIN_EDGE_WEIGHT_MS)
        })
        .collect()
}

/// Draws every edge weight from its endpoint countries' latency
/// distribution, scaled by `relay_factor` and floored at 1 ms.
pub fn assign_edge_latencies(
    topo: &Topology,
    model: &LatencyModel,
    relay_factor: f64,
    seed: u64,
) -> Result<Topology, SimError> {
    if !(relay_factor.is_finite() && relay_factor > 0.0) {
        return Err(SimError::InvalidRelayFactor(relay_factor));
    }
    let models = edge_models(topo, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = draw_weights(&models, relay_factor, &mut rng);
    let mut out = topo.clone();
    for (e, w) in out.edges.iter_mut().zip(weights) {
        e.weight_ms = w;
    }
    Ok(out)
}

/// Adjacency lists over edge indices.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Vec<Vec<(PeerId, usize)>>,
}

impl Graph {
    pub fn new(topo: &Topology) -> Self {
        let mut adj = vec![Vec::new(); topo.nodes.len()];
        for (i, e) in topo.edges.iter().enumerate() {
            adj[e.a as usize].push((e.b, i));
            adj[e.b as usize].push((e.a, i));
        }
        Self { adj }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// `(neighbor, edge index)` pairs.
    pub fn neighbors(&self, v: PeerId) -> &[(PeerId, usize)] {
        &self.adj[v as usize]
    }

    /// Unweighted hop distance from `source` to every node.
    pub fn hop_distances(&self, source: PeerId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.adj.len()];
        dist[source as usize] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u as usize].unwrap();
            for &(v, _) in &self.adj[u as usize] {
                if dist[v as usize].is_none() {
                    dist[v as usize] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Earliest arrival time at every node for a block leaving `source` at
    /// time 0. Entering `v` over edge `e` from `u` costs
    /// `arrival[u] + weights[e] + node_cost[v]`.
    pub fn fastest_arrivals(
        &self,
        weights: &[f64],
        node_cost: &[f64],
        source: PeerId,
    ) -> Vec<Option<f64>> {
        let mut best: Vec<Option<f64>> = vec![None; self.adj.len()];
        let mut done = vec![false; self.adj.len()];
        let mut heap = BinaryHeap::new();
        best[source as usize] = Some(0.0);
        heap.push(Frontier {
            time: 0.0,
            node: source,
        });
        while let Some(Frontier { time, node }) = heap.pop() {
            if done[node as usize] {
                continue;
            }
            done[node as usize] = true;
            for &(v, e) in &self.adj[node as usize] {
                if done[v as usize] {
                    continue;
                }
                let cand = time + weights[e] + node_cost[v as usize];
                if best[v as usize].is_none_or(|b| cand < b) {
                    best[v as usize] = Some(cand);
                    heap.push(Frontier {
                        time: cand,
                        node: v,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    time: f64,
    node: PeerId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time, then node id.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Source of edge weights for each repetition.
#[derive(Debug, Clone)]
pub enum EdgeWeights {
    /// Reuse the topology's stored weights every repetition.
    Fixed,
    /// Redraw every edge each repetition from `model` scaled by `relay_factor`.
    Redraw {
        model: LatencyModel,
        relay_factor: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Per-hop validation delay for the simulated block size.
    pub processing: NormalParams,
    pub block_size: u64,
    /// When false, deltas accumulate edge weights only.
    pub include_processing: bool,
    pub weights: EdgeWeights,
    pub repetitions: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthesisDiagnostics {
    /// (source, relay, repetition) triples with no connecting path.
    pub disconnected: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Synthesis {
    pub observations: Vec<Observation>,
    pub diagnostics: SynthesisDiagnostics,
}

impl Synthesis {
    pub fn into_set(self, topo: &Topology) -> ObservationSet {
        ObservationSet {
            peers: topo.peer_table(),
            observations: self.observations,
        }
    }
}

const WEIGHT_STREAM: u64 = 0xFFFF_FFFF;

fn stream_rng(seed: u64, repetition: u32, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(repetition) << 32) | lane);
    rng
}

/// Prepared simulation: graph, ground truth, and per-repetition edge
/// weights. Processing delays are drawn per (repetition, source) on demand
/// from independent RNG streams, so any evaluation order gives the same
/// numbers.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    graph: Graph,
    cfg: SynthesisConfig,
    rep_weights: Vec<Vec<f64>>,
}

impl Synthesizer {
    pub fn new(topo: &Topology, cfg: SynthesisConfig) -> Result<Self, SimError> {
        topo.validate()?;
        if cfg.repetitions == 0 {
            return Err(SimError::NoRepetitions);
        }
        NormalParams::new(cfg.processing.mean, cfg.processing.variance)
            .map_err(|e| SimError::InvalidTopology(e.to_string()))?;
        let rep_weights = match &cfg.weights {
            EdgeWeights::Fixed => {
                let w: Vec<f64> = topo.edges.iter().map(|e| e.weight_ms).collect();
                vec![w; cfg.repetitions as usize]
            }
            EdgeWeights::Redraw {
                model,
                relay_factor,
            } => {
                if !(relay_factor.is_finite() && *relay_factor > 0.0) {
                    return Err(SimError::InvalidRelayFactor(*relay_factor));
                }
                let models = edge_models(topo, model)?;
                (0..cfg.repetitions)
                    .map(|r| {
                        let mut rng = stream_rng(cfg.seed, r, WEIGHT_STREAM);
                        draw_weights(&models, *relay_factor, &mut rng)
                    })
                    .collect()
            }
        };
        Ok(Self {
            graph: Graph::new(topo),
            cfg,
            rep_weights,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.cfg
    }

    pub fn edge_weights(&self, repetition: u32) -> &[f64] {
        &self.rep_weights[repetition as usize]
    }

    /// Validation delay at every node for the block `source` mines in
    /// `repetition`; negative draws clamp to 0.
    pub fn processing_delays(&self, repetition: u32, source: PeerId) -> Vec<f64> {
        let n = self.graph.node_count();
        if !self.cfg.include_processing {
            return vec![0.0; n];
        }
        let p = self.cfg.processing;
        if p.variance == 0.0 {
            return vec![p.mean.max(0.0); n];
        }
        let normal = Normal::new(p.mean, p.std_dev()).expect("validated normal");
        let mut rng = stream_rng(self.cfg.seed, repetition, u64::from(source));
        let mut out: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng).max(0.0)).collect();
        out[source as usize] = 0.0;
        out
    }

    /// Arrival delay of `source`'s block at every node in one repetition.
    pub fn deltas_from(&self, repetition: u32, source: PeerId) -> Vec<Option<f64>> {
        let costs = self.processing_delays(repetition, source);
        self.graph
            .fastest_arrivals(self.edge_weights(repetition), &costs, source)
    }

    /// Observations for one (repetition, source), relays in id order, plus
    /// the number of unreachable relays.
    pub fn observations_from(
        &self,
        repetition: u32,
        source: PeerId,
        hops: &[Option<u32>],
    ) -> (Vec<Observation>, usize) {
        let deltas = self.deltas_from(repetition, source);
        let mut out = Vec::with_capacity(deltas.len());
        let mut missing = 0;
        for (relay, d) in deltas.into_iter().enumerate() {
            if relay as PeerId == source {
                continue;
            }
            match d {
                Some(delta_ms) => out.push(Observation {
                    source,
                    relay: relay as PeerId,
                    block_size: self.cfg.block_size,
                    delta_ms,
                    repetition,
                    true_hops: hops[relay],
                }),
                None => missing += 1,
            }
        }
        (out, missing)
    }
}

/// Synthesizes observations for every (source, relay) pair in every
/// repetition, sorted by repetition, source, relay.
pub fn synthesize_observations(
    topo: &Topology,
    cfg: SynthesisConfig,
    sources: &[PeerId],
) -> Result<Synthesis, SimError> {
    let n = topo.node_count() as PeerId;
    if let Some(s) = sources.iter().find(|s| **s >= n) {
        return Err(SimError::UnknownSource(*s));
    }
    let synth = Synthesizer::new(topo, cfg)?;
    let hops: Vec<Vec<Option<u32>>> =
        crate::par_map(sources.len(), |i| synth.graph.hop_distances(sources[i]));
    let reps = synth.cfg.repetitions as usize;
    let chunks = crate::par_map(reps * sources.len(), |k| {
        let (r, i) = (k / sources.len(), k % sources.len());
        synth.observations_from(r as u32, sources[i], &hops[i])
    });
    let mut result = Synthesis::default();
    for (obs, missing) in chunks {
        result.observations.extend(obs);
        result.diagnostics.disconnected += missing;
    }
    Ok(result)
}
