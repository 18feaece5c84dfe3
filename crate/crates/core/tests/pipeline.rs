mod support;

use hopinfer::eval::{self, ExperimentConfig};
use hopinfer::inference::{self, AggregationMode, InferenceModel};
use hopinfer::params::VarianceScenario;
use hopinfer::sim::{self, CountryDistribution};
use hopinfer::PeerId;
use rand::seq::SliceRandom;

#[test]
fn noise_free_pipeline_recovers_every_distance() {
    let topo = support::noise_free_topology(80, 2, 3);
    let set = support::noise_free_observations(&topo, 2);
    let estimates = support::infer_by_name(
        &set,
        &support::noise_free_pack(),
        &support::topology_countries(&topo),
        1,
    );
    let mut checked = 0;
    for s in 0..topo.nodes.len() as PeerId {
        for (r, h) in support::bfs_hops(&topo, s).into_iter().enumerate() {
            let Some(h) = h.filter(|h| (1..=9).contains(h)) else {
                continue;
            };
            let est = estimates[&(s.to_string(), r.to_string())];
            assert_eq!(est, Some(h), "{s}->{r}");
            checked += 1;
        }
    }
    assert!(checked > 1000, "only {checked} pairs in range");
}

#[test]
fn noise_free_experiment_scores_perfectly() {
    let report = eval::run_experiment(&support::noise_free_config(4)).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = report.cells[0].outcome.as_ref().unwrap();
    assert_eq!(cell.uninformative_pairs, 0);
    let mut seen = 0;
    for c in &cell.score.classes {
        if c.counts.tp + c.counts.fn_ > 0 {
            assert_eq!(
                (c.counts.fp, c.counts.fn_),
                (0, 0),
                "distance {}",
                c.distance
            );
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn ingested_log_reproduces_deltas_and_direct_edges() {
    let rt = support::ingestion_round_trip(60, 3, 3, 9);
    assert_eq!(rt.missing, 0);
    assert!(rt.compared > 0);
    assert!(
        rt.max_delta_error < 1e-6,
        "max error {}",
        rt.max_delta_error
    );
    assert_eq!(rt.recovered_direct, rt.planted_direct);
}

#[test]
fn mean_degree_law() {
    let dist = CountryDistribution::seven_country();
    for seed in 0..30 {
        let d = sim::generate_topology(300, 8, &dist, seed)
            .unwrap()
            .mean_degree();
        assert!((15.5..=16.0).contains(&d), "seed {seed}: {d}");
    }
}

#[test]
fn recorded_hops_match_independent_bfs() {
    let topo = support::noise_free_topology(50, 2, 21);
    let set = support::noise_free_observations(&topo, 1);
    let bfs: Vec<Vec<Option<u32>>> = (0..50).map(|s| support::bfs_hops(&topo, s)).collect();
    for o in &set.observations {
        assert_eq!(o.true_hops, bfs[o.source as usize][o.relay as usize]);
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn small_experiment() -> ExperimentConfig {
    ExperimentConfig {
        n_nodes: 60,
        out_degree: 4,
        block_sizes: vec![1630, 2_000_000],
        scenarios: vec![VarianceScenario::Small, VarianceScenario::Large],
        repetitions: 4,
        seed: 13,
        ..ExperimentConfig::default()
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let run = || {
        let mut csv = Vec::new();
        eval::run_experiment(&small_experiment())
            .unwrap()
            .write_csv(&mut csv)
            .unwrap();

        let topo = support::noise_free_topology(40, 3, 2);
        let set = support::noise_free_observations(&topo, 3);
        let mut obs = Vec::new();
        set.write_csv(&mut obs).unwrap();
        let pack = support::noise_free_pack();
        let countries = inference::peer_countries(&set.peers, &support::topology_countries(&topo));
        let model = InferenceModel::new(&pack, &set.peers, &countries).unwrap();
        let edges = inference::infer_edges(&set.observations, &model, 1, AggregationMode::Bayesian)
            .unwrap();
        let mut edges_csv = Vec::new();
        edges.write_csv(&set.peers, &mut edges_csv).unwrap();
        (csv, obs, edges_csv)
    };
    let one = in_pool(1, run);
    let four = in_pool(4, run);
    assert!(one == four);
}

#[test]
fn inference_ignores_observation_order() {
    let cfg = small_experiment();
    let topo = sim::generate_topology(40, 4, &cfg.country_distribution().unwrap(), 5).unwrap();
    let model_lat = hopinfer::params::fit_latency_model(
        &hopinfer::params::LatencyDataset::builtin(),
        VarianceScenario::Large,
    )
    .unwrap();
    let processing = hopinfer::params::ProcessingModel::GERVAIS;
    let set = sim::synthesize_observations(
        &topo,
        sim::SynthesisConfig {
            processing: processing.processing_params(1_000_000),
            block_size: 1_000_000,
            include_processing: true,
            weights: sim::EdgeWeights::Redraw {
                model: model_lat.clone(),
                relay_factor: 1.5,
            },
            repetitions: 5,
            seed: 8,
        },
        &(0..40).collect::<Vec<_>>(),
    )
    .unwrap()
    .into_set(&topo);
    let mut pack = hopinfer::params::ParamPack::new(&model_lat, processing);
    pack.node_count = 40;
    pack.mean_degree = topo.mean_degree();
    let countries: Vec<Option<String>> =
        topo.nodes.iter().map(|n| Some(n.country.clone())).collect();
    let model = InferenceModel::new(&pack, &set.peers, &countries).unwrap();

    for mode in [AggregationMode::MeanPosterior, AggregationMode::Bayesian] {
        let base = inference::infer_edges(&set.observations, &model, 1, mode).unwrap();
        let mut shuffled = set.observations.clone();
        shuffled.shuffle(&mut support::seeded(99));
        let again = inference::infer_edges(&shuffled, &model, 1, mode).unwrap();
        assert_eq!(base, again);
    }
}

/// Averaged over five seeds, larger blocks do at least as well on direct
/// links as the smallest block.
#[test]
fn larger_blocks_score_better_at_distance_one() {
    let (mut small_p, mut small_r, mut big_p, mut big_r) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..5 {
        let cfg = ExperimentConfig {
            block_sizes: vec![1630, 2_000_000],
            scenarios: vec![VarianceScenario::Small],
            ..support::reference_config(seed)
        };
        let report = eval::run_experiment(&cfg).unwrap();
        let d1 = |block: u64| {
            let c = report
                .cell(block, "small")
                .unwrap()
                .outcome
                .as_ref()
                .unwrap();
            let s = c.score.class(1).unwrap();
            (s.precision.unwrap_or(0.0), s.recall.unwrap_or(0.0))
        };
        let (p, r) = d1(1630);
        small_p += p;
        small_r += r;
        let (p, r) = d1(2_000_000);
        big_p += p;
        big_r += r;
    }
    assert!(big_p >= small_p, "precision {big_p} < {small_p}");
    assert!(big_r >= small_r, "recall {big_r} < {small_r}");
}
