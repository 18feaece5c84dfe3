//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Nothing here calls the closed-form or
//! shortest-path code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};

use hopinfer::eval::{CountryShare, ExperimentConfig, LatencySource, ProcessingSpec};
use hopinfer::inference::{self, AggregationMode, InferenceModel};
use hopinfer::ingest::{self, RttEstimator, SourceOrdering};
use hopinfer::params::{LatencyModel, ParamPack, ProcessingModel};
use hopinfer::prob::{DegenerateVariance, NormalParams};
use hopinfer::sim::{self, CountryDistribution, EdgeWeights, SynthesisConfig, Topology};
use hopinfer::{ObservationSet, PeerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Numeric convolution of Gaussian densities.

/// A density sampled at `offset + (start + k) * dx`.
struct Grid {
    offset: f64,
    start: i64,
    dx: f64,
    values: Vec<f64>,
}

fn sample_normal(mean: f64, var: f64, offset: f64, dx: f64) -> Grid {
    if var == 0.0 {
        // Unit mass at `mean`; convolving with it is an exact shift.
        return Grid {
            offset: mean,
            start: 0,
            dx,
            values: vec![1.0 / dx],
        };
    }
    let sd = var.sqrt();
    let lo = ((mean - 11.0 * sd - offset) / dx).floor() as i64;
    let hi = ((mean + 11.0 * sd - offset) / dx).ceil() as i64;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let values = (lo..=hi)
        .map(|k| {
            let z = (offset + k as f64 * dx - mean) / sd;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    Grid {
        offset,
        start: lo,
        dx,
        values,
    }
}

fn convolve(a: &Grid, b: &Grid) -> Grid {
    let mut values = vec![0.0; a.values.len() + b.values.len() - 1];
    for (i, x) in a.values.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.values.iter().enumerate() {
            values[i + j] += x * y * a.dx;
        }
    }
    Grid {
        offset: a.offset + b.offset,
        start: a.start + b.start,
        dx: a.dx,
        values,
    }
}

/// Probability that the sum of `h` independent (latency + processing) hop
/// delays lands in `[t − eps, t + eps]`, by building the density through
/// repeated numeric convolution and integrating it with Simpson's rule.
pub fn numeric_hop_likelihood(
    latency: (f64, f64),
    processing: (f64, f64),
    h: u32,
    t: f64,
    eps: f64,
) -> f64 {
    assert!(h >= 1 && eps > 0.0);
    let sd_min = [latency.1, processing.1]
        .into_iter()
        .filter(|v| *v > 0.0)
        .map(f64::sqrt)
        .fold(f64::INFINITY, f64::min);
    assert!(sd_min.is_finite(), "at least one component needs spread");
    // Window end points fall on the grid; at least sixteen points per σ.
    let mut m = ((2.0 * eps) / (sd_min / 16.0)).ceil().max(4.0) as i64;
    m += m % 2;
    let dx = 2.0 * eps / m as f64;

    let hop = || {
        convolve(
            &sample_normal(latency.0, latency.1, 0.0, dx),
            &sample_normal(processing.0, processing.1, 0.0, dx),
        )
    };
    let mut density = sample_normal(processing.0, processing.1, 0.0, dx);
    for _ in 1..h {
        density = convolve(&density, &hop());
    }
    // The last latency component is sampled on a shifted grid so the
    // total lands on `t − eps + k·dx`.
    let last = sample_normal(latency.0, latency.1, t - eps - density.offset, dx);
    let density = convolve(&density, &last);

    let at = |k: i64| -> f64 {
        let idx = k - density.start;
        if idx < 0 || idx as usize >= density.values.len() {
            0.0
        } else {
            density.values[idx as usize]
        }
    };
    let mut sum = at(0) + at(m);
    for k in 1..m {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * at(k);
    }
    sum * dx / 3.0
}

/// Random parameter set for the convolution comparison:
/// `(latency, processing, eps, t)` for a given hop count.
pub fn random_likelihood_case(rng: &mut ChaCha8Rng, h: u32) -> ((f64, f64), (f64, f64), f64, f64) {
    let lat_sd: f64 = rng.random_range(3.0..25.0);
    let latency = (rng.random_range(20.0..200.0), lat_sd * lat_sd);
    let processing = if rng.random_bool(0.2) {
        (rng.random_range(0.0..50.0), 0.0)
    } else {
        let sd: f64 = rng.random_range(1.0..8.0);
        (rng.random_range(0.0..50.0), sd * sd)
    };
    let eps = rng.random_range(0.5..10.0);
    let hf = f64::from(h);
    let total_sd = (hf * (latency.1 + processing.1)).sqrt();
    let t = hf * (latency.0 + processing.0) + rng.random_range(-4.0..4.0) * total_sd;
    (latency, processing, eps, t)
}

// ---------------------------------------------------------------------------
// Exhaustive path enumeration.

/// Earliest arrival at `target` over every simple path from `source`, where
/// entering `v` over edge `e` adds `weights[e] + node_cost[v]`.
pub fn brute_force_arrival(
    topo: &Topology,
    weights: &[f64],
    node_cost: &[f64],
    source: PeerId,
    target: PeerId,
) -> Option<f64> {
    let n = topo.nodes.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, e) in topo.edges.iter().enumerate() {
        adj[e.a as usize].push((e.b as usize, i));
        adj[e.b as usize].push((e.a as usize, i));
    }
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        u: usize,
        cost: f64,
        target: usize,
        adj: &[Vec<(usize, usize)>],
        weights: &[f64],
        node_cost: &[f64],
        on_path: &mut [bool],
        best: &mut Option<f64>,
    ) {
        if u == target {
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for &(v, e) in &adj[u] {
            if on_path[v] {
                continue;
            }
            on_path[v] = true;
            dfs(
                v,
                cost + weights[e] + node_cost[v],
                target,
                adj,
                weights,
                node_cost,
                on_path,
                best,
            );
            on_path[v] = false;
        }
    }
    let mut on_path = vec![false; n];
    on_path[source as usize] = true;
    let mut best = None;
    dfs(
        source as usize,
        0.0,
        target as usize,
        &adj,
        weights,
        node_cost,
        &mut on_path,
        &mut best,
    );
    best
}

/// G(n, p) graph with random positive weights.
pub fn random_small_topology(rng: &mut ChaCha8Rng, max_nodes: u32) -> Topology {
    let n = rng.random_range(2..=max_nodes);
    let p = rng.random_range(0.15..0.8);
    let nodes = (0..n)
        .map(|id| sim::Node {
            id,
            country: "US".into(),
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push(sim::Edge {
                    a,
                    b,
                    weight_ms: rng.random_range(1.0..300.0),
                });
            }
        }
    }
    Topology {
        nodes,
        edges,
        seed: 0,
    }
}

/// Breadth-first hop counts from `source`, written against the raw edge
/// list.
pub fn bfs_hops(topo: &Topology, source: PeerId) -> Vec<Option<u32>> {
    let n = topo.nodes.len();
    let mut adj: HashMap<PeerId, Vec<PeerId>> = HashMap::new();
    for e in &topo.edges {
        adj.entry(e.a).or_default().push(e.b);
        adj.entry(e.b).or_default().push(e.a);
    }
    let mut dist = vec![None; n];
    dist[source as usize] = Some(0u32);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u as usize].unwrap();
        for v in adj.get(&u).into_iter().flatten() {
            if dist[*v as usize].is_none() {
                dist[*v as usize] = Some(d + 1);
                queue.push_back(*v);
            }
        }
    }
    dist
}

// ---------------------------------------------------------------------------
// Noise-free pipeline fixtures.

/// One-way latency that, scaled by 1.5, gives 150 ms edges.
pub const NOISE_FREE_ONE_WAY_MS: f64 = 100.0;
/// 0.01 µs/B on a 1 MB block: 10 ms of validation per hop.
pub const NOISE_FREE_K_MU: f64 = 0.01;
pub const NOISE_FREE_BLOCK: u64 = 1_000_000;

pub fn noise_free_pack() -> ParamPack {
    let model = LatencyModel::uniform(
        &["US"],
        NormalParams::new(NOISE_FREE_ONE_WAY_MS, 0.0).unwrap(),
    );
    let mut pack = ParamPack::new(&model, ProcessingModel::new(NOISE_FREE_K_MU, 0.0).unwrap());
    pack.degenerate_variance = DegenerateVariance::PointMass;
    pack
}

/// Single-country topology whose every edge weighs exactly 150 ms.
pub fn noise_free_topology(n: usize, out_degree: usize, seed: u64) -> Topology {
    let topo =
        sim::generate_topology(n, out_degree, &CountryDistribution::single("US"), seed).unwrap();
    let pack = noise_free_pack();
    sim::assign_edge_latencies(
        &topo,
        &pack.latency_model().unwrap(),
        pack.relay_factor,
        seed,
    )
    .unwrap()
}

pub fn noise_free_observations(topo: &Topology, repetitions: u32) -> ObservationSet {
    let pack = noise_free_pack();
    let sources: Vec<PeerId> = (0..topo.nodes.len() as PeerId).collect();
    sim::synthesize_observations(
        topo,
        SynthesisConfig {
            processing: pack
                .processing()
                .unwrap()
                .processing_params(NOISE_FREE_BLOCK),
            block_size: NOISE_FREE_BLOCK,
            include_processing: true,
            weights: EdgeWeights::Redraw {
                model: pack.latency_model().unwrap(),
                relay_factor: pack.relay_factor,
            },
            repetitions,
            seed: 7,
        },
        &sources,
    )
    .unwrap()
    .into_set(topo)
}

pub fn topology_countries(topo: &Topology) -> HashMap<String, String> {
    topo.nodes
        .iter()
        .map(|n| (n.id.to_string(), n.country.clone()))
        .collect()
}

/// Runs inference over `set` and returns estimates keyed by peer names.
pub fn infer_by_name(
    set: &ObservationSet,
    pack: &ParamPack,
    countries: &HashMap<String, String>,
    min_blocks: usize,
) -> BTreeMap<(String, String), Option<u32>> {
    let model = InferenceModel::new(
        pack,
        &set.peers,
        &inference::peer_countries(&set.peers, countries),
    )
    .unwrap();
    let result = inference::infer_edges(
        &set.observations,
        &model,
        min_blocks,
        AggregationMode::MeanPosterior,
    )
    .unwrap();
    result
        .pairs
        .iter()
        .map(|p| {
            (
                (
                    set.peers.name(p.source).to_owned(),
                    set.peers.name(p.relay).to_owned(),
                ),
                p.estimated_hops,
            )
        })
        .collect()
}

/// Known per-peer RTT for the synthetic capture log.
pub fn synthetic_rtt(p: PeerId) -> f64 {
    20.0 + f64::from((p * 37) % 180)
}

pub struct RoundTrip {
    /// Largest |ingested − simulated| delta, ms.
    pub max_delta_error: f64,
    pub compared: usize,
    pub missing: usize,
    pub planted_direct: usize,
    pub recovered_direct: usize,
}

/// Simulates a noise-free network, renders it as an NDJSON capture log,
/// parses it back and runs inference on the ingested observations.
pub fn ingestion_round_trip(n: usize, out_degree: usize, repetitions: u32, seed: u64) -> RoundTrip {
    let topo = noise_free_topology(n, out_degree, seed);
    let set = noise_free_observations(&topo, repetitions);

    let log = ingest::synthesize_log(&set, &|p| synthetic_rtt(p), 100_000.0);
    let mut bytes = Vec::new();
    ingest::write_ndjson(&log, &mut bytes).unwrap();
    let records = ingest::read_ndjson(bytes.as_slice()).unwrap();
    let (ingested, _diag) =
        ingest::build_observations(&records, RttEstimator::default(), SourceOrdering::Adjusted);

    // Blocks are emitted in (repetition, source) order and spaced far
    // apart, so the ingested block ordinal follows the same order.
    let mut ordinal: BTreeMap<(u32, PeerId), u32> = BTreeMap::new();
    for o in &set.observations {
        let next = ordinal.len() as u32;
        ordinal.entry((o.repetition, o.source)).or_insert(next);
    }
    let mut expected: HashMap<(u32, String, String), f64> = HashMap::new();
    for o in &set.observations {
        expected.insert(
            (
                ordinal[&(o.repetition, o.source)],
                set.peers.name(o.source).to_owned(),
                set.peers.name(o.relay).to_owned(),
            ),
            o.delta_ms,
        );
    }
    let mut max_delta_error: f64 = 0.0;
    let mut compared = 0;
    for o in &ingested.observations {
        let key = (
            o.repetition,
            ingested.peers.name(o.source).to_owned(),
            ingested.peers.name(o.relay).to_owned(),
        );
        if let Some(d) = expected.get(&key) {
            max_delta_error = max_delta_error.max((o.delta_ms - d).abs());
            compared += 1;
        }
    }
    let missing = expected.len() - compared;

    let estimates = infer_by_name(&ingested, &noise_free_pack(), &topology_countries(&topo), 1);
    let mut planted_direct = 0;
    let mut recovered_direct = 0;
    for e in &topo.edges {
        for (s, r) in [(e.a, e.b), (e.b, e.a)] {
            planted_direct += 1;
            if estimates.get(&(s.to_string(), r.to_string())) == Some(&Some(1)) {
                recovered_direct += 1;
            }
        }
    }
    RoundTrip {
        max_delta_error,
        compared,
        missing,
        planted_direct,
        recovered_direct,
    }
}

// ---------------------------------------------------------------------------
// Experiment configurations.

/// The 300-node, seven-country, 50-repetition setup with validation
/// constants 0.3796 µs/B and 0.552049 µs²/B.
pub fn reference_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_nodes: 300,
        out_degree: 8,
        countries: [
            ("US", 0.3),
            ("RU", 0.2),
            ("CA", 0.1),
            ("CN", 0.1),
            ("FR", 0.1),
            ("DE", 0.1),
            ("JP", 0.1),
        ]
        .iter()
        .map(|(c, s)| CountryShare {
            country: (*c).into(),
            share: *s,
        })
        .collect(),
        block_sizes: vec![1630, 1_000_000, 2_000_000],
        repetitions: 50,
        epsilon_ms: 5.0,
        processing: ProcessingSpec::Constants(ProcessingModel::new(0.3796, 0.552049).unwrap()),
        seed,
        ..ExperimentConfig::default()
    }
}

/// Single-country experiment with zero latency and processing variance.
pub fn noise_free_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_nodes: 120,
        out_degree: 3,
        countries: vec![CountryShare {
            country: "US".into(),
            share: 1.0,
        }],
        block_sizes: vec![NOISE_FREE_BLOCK],
        repetitions: 1,
        max_hops: 9,
        up_to: 9,
        processing: ProcessingSpec::Constants(ProcessingModel::new(NOISE_FREE_K_MU, 0.0).unwrap()),
        latency: LatencySource::Uniform {
            mean_ms: NOISE_FREE_ONE_WAY_MS,
            var_ms2: 0.0,
        },
        degenerate_variance: DegenerateVariance::PointMass,
        seed,
        ..ExperimentConfig::default()
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Posterior normalization property.

use hopinfer::prob::{self, HopPrior, LikelihoodParams, ProbError};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

#[derive(Debug, Clone)]
pub struct PosteriorCase {
    pub node_count: u32,
    pub degree_fraction: f64,
    pub latency: (f64, f64),
    pub processing: (f64, f64),
    pub eps: f64,
    pub max_hops: u32,
    pub hops_near: u32,
    pub offset_sd: f64,
}

pub fn posterior_case() -> impl Strategy<Value = PosteriorCase> {
    (
        3u32..5000,
        0.001f64..0.999,
        (1.0f64..500.0, 0.01f64..1e4),
        (0.0f64..1000.0, 0.0f64..1e4),
        0.01f64..20.0,
        1u32..=12,
        1u32..=12,
        -6.0f64..6.0,
    )
        .prop_map(
            |(
                node_count,
                degree_fraction,
                latency,
                processing,
                eps,
                max_hops,
                hops_near,
                offset_sd,
            )| {
                PosteriorCase {
                    node_count,
                    degree_fraction,
                    latency,
                    processing,
                    eps,
                    max_hops,
                    hops_near,
                    offset_sd,
                }
            },
        )
}

impl PosteriorCase {
    pub fn prior(&self) -> HopPrior {
        HopPrior::new(
            self.degree_fraction * f64::from(self.node_count - 1),
            self.node_count,
        )
        .unwrap()
    }

    pub fn params(&self) -> LikelihoodParams {
        LikelihoodParams::new(
            NormalParams::new(self.latency.0, self.latency.1).unwrap(),
            NormalParams::new(self.processing.0, self.processing.1).unwrap(),
            self.eps,
            self.max_hops,
        )
        .unwrap()
    }

    pub fn time(&self) -> f64 {
        let p = self.params();
        let h = f64::from(self.hops_near);
        h * p.per_hop_mean() + self.offset_sd * (h * p.per_hop_variance()).sqrt()
    }
}

/// Posterior sums to one within 1e-9 and every entry is a probability;
/// the prior's partial sums rise monotonically and never exceed one.
pub fn check_normalization(case: &PosteriorCase) -> Result<(), TestCaseError> {
    let prior = case.prior();
    match prob::posterior(&prior, &case.params(), case.time()) {
        Ok(post) => {
            let sum: f64 = post.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "posterior sums to {sum}");
            prop_assert!(post.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        }
        Err(ProbError::Uninformative { .. }) => {}
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    }
    let mut partial = 0.0;
    let mut last = f64::INFINITY;
    for h in 1..=60 {
        let p = prior.prob(h).unwrap();
        prop_assert!(p <= last, "prior rose at h={h}");
        let next = partial + p;
        prop_assert!(next >= partial && next <= 1.0 + 1e-12);
        partial = next;
        last = p;
    }
    let tail = (1.0 - prior.edge_probability()).powi(60);
    prop_assert!(
        (1.0 - partial - tail).abs() <= 1e-9,
        "partial sum {partial} vs closed form"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Command-line pipeline.

use std::path::Path;
use std::process::Command;

pub fn run_cli(bin: &Path, threads: usize, args: &[&str]) -> std::process::Output {
    Command::new(bin)
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

fn run_ok(bin: &Path, threads: usize, args: &[&str]) {
    let out = run_cli(bin, threads, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs every subcommand under `root` and returns each output file's bytes
/// keyed by its path relative to `root`.
pub fn cli_pipeline(bin: &Path, root: &Path, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let p = |rel: &str| root.join(rel).to_str().unwrap().to_owned();
    let ok = |args: &[&str]| run_ok(bin, threads, args);

    ok(&[
        "--seed",
        "5",
        "--out",
        &p("gen"),
        "generate",
        "--nodes",
        "50",
        "--out-degree",
        "4",
    ]);
    ok(&[
        "--out",
        &p("fit"),
        "fit",
        "--scenario",
        "medium",
        "--node-count",
        "50",
        "--mean-degree",
        "7.5",
    ]);
    ok(&[
        "--seed",
        "5",
        "--out",
        &p("sim"),
        "simulate",
        "--topology",
        &p("gen/topology.json"),
        "--pack",
        &p("fit/pack.json"),
        "--block-size",
        "1000000",
        "--repetitions",
        "3",
    ]);

    // Capture log rendered from the simulated observations.
    let sim_obs =
        ObservationSet::read_csv(std::fs::File::open(p("sim/observations.csv")).unwrap()).unwrap();
    let log = ingest::synthesize_log(&sim_obs, &|peer| synthetic_rtt(peer), 100_000.0);
    let mut file = std::fs::File::create(p("capture.ndjson")).unwrap();
    ingest::write_ndjson(&log, &mut file).unwrap();
    ok(&["--out", &p("ing"), "ingest", "--log", &p("capture.ndjson")]);

    ok(&[
        "--out",
        &p("inf"),
        "infer",
        "--observations",
        &p("ing/observations.csv"),
        "--pack",
        &p("fit/pack.json"),
        "--topology",
        &p("gen/topology.json"),
        "--min-blocks",
        "1",
    ]);
    ok(&[
        "--out",
        &p("score"),
        "score",
        "--edges",
        &p("inf/edges.csv"),
        "--topology",
        &p("gen/topology.json"),
    ]);

    let exp = ExperimentConfig {
        n_nodes: 40,
        out_degree: 4,
        block_sizes: vec![1630, 2_000_000],
        repetitions: 3,
        ..ExperimentConfig::default()
    };
    std::fs::write(p("experiment.json"), serde_json::to_string(&exp).unwrap()).unwrap();
    ok(&[
        "--seed",
        "3",
        "--config",
        &p("experiment.json"),
        "--out",
        &p("exp"),
        "experiment",
    ]);

    let mut files = BTreeMap::new();
    for dir in ["gen", "fit", "sim", "ing", "inf", "score", "exp"] {
        for entry in std::fs::read_dir(root.join(dir)).unwrap() {
            let path = entry.unwrap().path();
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_str()
                .unwrap()
                .to_owned();
            files.insert(rel, std::fs::read(&path).unwrap());
        }
    }
    files
}
