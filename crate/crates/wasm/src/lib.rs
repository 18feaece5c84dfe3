//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string so the page needs no generated
//! TypeScript types. The plain `*_json` functions hold the logic and are
//! what the native tests exercise.

use std::collections::{BTreeMap, BTreeSet};

use hopinfer::eval;
use hopinfer::inference::{self, AggregationMode, InferenceModel};
use hopinfer::params::{
    fit_latency_model, LatencyDataset, ParamPack, ProcessingModel, VarianceScenario,
};
use hopinfer::prob::{self, DegenerateVariance, HopPrior, LikelihoodParams};
use hopinfer::sim::{self, CountryDistribution, EdgeWeights, SynthesisConfig};
use hopinfer::PeerId;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const RELAY_FACTOR: f64 = 1.5;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn processing_preset(name: &str) -> Result<ProcessingModel, String> {
    ProcessingModel::preset(name).map_err(err)
}

/// Countries present in the bundled RTT table.
pub fn countries_json() -> String {
    let mut names = BTreeSet::new();
    for pair in LatencyDataset::builtin().country_pairs() {
        names.insert(pair.first().to_owned());
        names.insert(pair.second().to_owned());
    }
    json!(names).to_string()
}

/// Prior, likelihood and posterior over hop counts for one observed delay
/// `t_ms` between peers in `country_a` and `country_b`.
#[allow(clippy::too_many_arguments)]
pub fn explain_json(
    country_a: &str,
    country_b: &str,
    scenario: &str,
    preset: &str,
    block_size: u32,
    eps_ms: f64,
    mean_degree: f64,
    node_count: u32,
    max_hops: u32,
    t_ms: f64,
) -> Result<String, String> {
    let scenario: VarianceScenario = scenario.parse().map_err(err)?;
    let latency = fit_latency_model(&LatencyDataset::builtin(), scenario)
        .and_then(|m| m.get(country_a, country_b))
        .map_err(err)?
        .scaled(RELAY_FACTOR);
    let processing = processing_preset(preset)?.processing_params(u64::from(block_size));
    let params = LikelihoodParams::new(latency, processing, eps_ms, max_hops)
        .map_err(err)?
        .with_degenerate(DegenerateVariance::PointMass);
    let prior = HopPrior::new(mean_degree, node_count).map_err(err)?;

    let priors = prob::prior_vector(&prior, max_hops).map_err(err)?;
    let likelihood = prob::likelihood_vector(&params, t_ms).map_err(err)?;
    let posterior = match prob::posterior(&prior, &params, t_ms) {
        Ok(p) => Some(p),
        Err(prob::ProbError::Uninformative { .. }) => None,
        Err(e) => return Err(err(e)),
    };
    Ok(json!({
        "per_hop_mean_ms": params.per_hop_mean(),
        "per_hop_sd_ms": params.per_hop_variance().sqrt(),
        "latency_mean_ms": latency.mean,
        "processing_mean_ms": processing.mean,
        "prior": priors,
        "likelihood": likelihood,
        "posterior": posterior.as_ref().map(|p| p.probs().to_vec()),
        "argmax": posterior.as_ref().map(|p| p.argmax()),
    })
    .to_string())
}

/// Generates a small seven-country network, simulates `repetitions`
/// blocks from every node, infers all pairwise distances and scores them.
#[allow(clippy::too_many_arguments)]
pub fn simulate_json(
    nodes: u32,
    out_degree: u32,
    seed: u32,
    scenario: &str,
    preset: &str,
    block_size: u32,
    repetitions: u32,
    eps_ms: f64,
    bayesian: bool,
) -> Result<String, String> {
    let seed = u64::from(seed);
    let scenario: VarianceScenario = scenario.parse().map_err(err)?;
    let processing = processing_preset(preset)?;
    let block_size = u64::from(block_size);

    let topo = sim::generate_topology(
        nodes as usize,
        out_degree as usize,
        &CountryDistribution::seven_country(),
        seed,
    )
    .map_err(err)?;
    let latency = fit_latency_model(&LatencyDataset::builtin(), scenario).map_err(err)?;
    let sources: Vec<PeerId> = (0..nodes).collect();
    let synthesis = sim::synthesize_observations(
        &topo,
        SynthesisConfig {
            processing: processing.processing_params(block_size),
            block_size,
            include_processing: true,
            weights: EdgeWeights::Redraw {
                model: latency.clone(),
                relay_factor: RELAY_FACTOR,
            },
            repetitions,
            seed,
        },
        &sources,
    )
    .map_err(err)?;
    let set = synthesis.into_set(&topo);

    let mut pack = ParamPack::new(&latency, processing);
    pack.epsilon_ms = eps_ms;
    pack.mean_degree = topo.mean_degree();
    pack.node_count = nodes;
    pack.degenerate_variance = DegenerateVariance::PointMass;
    let countries: Vec<Option<String>> =
        topo.nodes.iter().map(|n| Some(n.country.clone())).collect();
    let model = InferenceModel::new(&pack, &set.peers, &countries).map_err(err)?;
    let mode = if bayesian {
        AggregationMode::Bayesian
    } else {
        AggregationMode::MeanPosterior
    };
    let result = inference::infer_edges(&set.observations, &model, 1, mode).map_err(err)?;

    let truth = eval::topology_truth(&topo);
    let estimates: BTreeMap<(PeerId, PeerId), Option<u32>> = result
        .pairs
        .iter()
        .map(|p| ((p.source, p.relay), p.estimated_hops))
        .collect();
    let scored_truth: BTreeMap<(PeerId, PeerId), u32> = estimates
        .keys()
        .filter_map(|k| truth.get(k).map(|h| (*k, *h)))
        .collect();
    let score = eval::score(&estimates, &scored_truth, 3).map_err(err)?;

    // Undirected view for drawing: a link is predicted when either
    // direction is estimated at one hop.
    let true_edges: BTreeSet<(PeerId, PeerId)> = topo.edges.iter().map(|e| (e.a, e.b)).collect();
    let predicted: BTreeSet<(PeerId, PeerId)> = result
        .direct_edges()
        .into_iter()
        .map(|(s, r)| (s.min(r), s.max(r)))
        .collect();
    let links: Vec<Value> = true_edges
        .union(&predicted)
        .map(|&(a, b)| {
            let status = match (true_edges.contains(&(a, b)), predicted.contains(&(a, b))) {
                (true, true) => "hit",
                (true, false) => "missed",
                _ => "false",
            };
            json!({ "a": a, "b": b, "status": status })
        })
        .collect();
    let classes: Vec<Value> = score
        .classes
        .iter()
        .map(|c| {
            json!({
                "distance": c.distance,
                "tp": c.counts.tp,
                "fp": c.counts.fp,
                "fn": c.counts.fn_,
                "precision": c.precision,
                "recall": c.recall,
            })
        })
        .collect();
    Ok(json!({
        "nodes": topo.nodes.iter().map(|n| json!({ "id": n.id, "country": n.country })).collect::<Vec<_>>(),
        "links": links,
        "mean_degree": topo.mean_degree(),
        "observations": set.observations.len(),
        "uninformative_pairs": result.uninformative_pairs().len(),
        "classes": classes,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn countries() -> String {
    countries_json()
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn explain(
    country_a: &str,
    country_b: &str,
    scenario: &str,
    preset: &str,
    block_size: u32,
    eps_ms: f64,
    mean_degree: f64,
    node_count: u32,
    max_hops: u32,
    t_ms: f64,
) -> Result<String, JsError> {
    explain_json(
        country_a,
        country_b,
        scenario,
        preset,
        block_size,
        eps_ms,
        mean_degree,
        node_count,
        max_hops,
        t_ms,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    nodes: u32,
    out_degree: u32,
    seed: u32,
    scenario: &str,
    preset: &str,
    block_size: u32,
    repetitions: u32,
    eps_ms: f64,
    bayesian: bool,
) -> Result<String, JsError> {
    simulate_json(
        nodes,
        out_degree,
        seed,
        scenario,
        preset,
        block_size,
        repetitions,
        eps_ms,
        bayesian,
    )
    .map_err(|e| JsError::new(&e))
}
