use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hopinfer::eval::{self, CountryShare, ExperimentConfig};
use hopinfer::inference::{self, AggregationMode, InferenceModel, DEFAULT_MIN_BLOCKS};
use hopinfer::ingest::{self, RttEstimator, SourceOrdering, DEFAULT_ALPHA};
use hopinfer::params::{
    fit_latency_model_with, LatencyBasis, LatencyDataset, ParamPack, ProcessingModel,
    VarianceScenario, DEFAULT_EPSILON_MS, DEFAULT_RELAY_FACTOR,
};
use hopinfer::prob::DEFAULT_MAX_HOPS;
use hopinfer::sim::{self, CountryDistribution, EdgeWeights, SynthesisConfig, Topology};
use hopinfer::{ObservationSet, PeerId, PeerTable};

#[derive(Parser)]
#[command(
    name = "hopinfer",
    version,
    about = "Hop-distance inference from block-announcement timing"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with the subcommand's settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random country-tagged topology (topology.json).
    Generate(GenerateArgs),
    /// Synthesize timing observations over a topology (observations.csv).
    Simulate(SimulateArgs),
    /// Fit a parameter pack from an RTT dataset (pack.json).
    Fit(FitArgs),
    /// Convert an NDJSON capture log into observations (observations.csv).
    Ingest(IngestArgs),
    /// Infer hop distances for every (source, relay) pair (edges.csv).
    Infer(InferArgs),
    /// Score inferred distances against ground truth (score.csv).
    Score(ScoreArgs),
    /// Run the block-size × variance experiment grid (report.csv).
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Config = 1,
    Data = 2,
    Internal = 3,
}

struct CliError {
    kind: Failure,
    err: anyhow::Error,
}

type CliResult<T> = Result<T, CliError>;

trait Classify<T> {
    fn config(self) -> CliResult<T>;
    fn data(self) -> CliResult<T>;
    fn internal(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Failure::Config,
            err: e.into(),
        })
    }
    fn data(self) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Failure::Data,
            err: e.into(),
        })
    }
    fn internal(self) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Failure::Internal,
            err: e.into(),
        })
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .config()?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .config()
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
        .data()
}

fn load_pack(path: &Path) -> CliResult<ParamPack> {
    ParamPack::from_json_path(path)
        .with_context(|| format!("loading pack {}", path.display()))
        .data()
}

fn load_topology(path: &Path) -> CliResult<Topology> {
    Topology::from_json_path(path)
        .with_context(|| format!("loading topology {}", path.display()))
        .data()
}

fn write_output(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .internal()?;
    let path = dir.join(name);
    let file = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .internal()?;
    let mut w = BufWriter::new(file);
    f(&mut w).internal()?;
    w.flush().internal()
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    write_output(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn parse_countries(spec: &str) -> anyhow::Result<Vec<CountryShare>> {
    spec.split(',')
        .map(|item| {
            let (c, s) = item
                .split_once(':')
                .ok_or_else(|| anyhow!("expected COUNTRY:SHARE, got {item:?}"))?;
            Ok(CountryShare {
                country: c.trim().to_owned(),
                share: s.trim().parse()?,
            })
        })
        .collect()
}

fn distribution(shares: &[CountryShare]) -> anyhow::Result<CountryDistribution> {
    Ok(CountryDistribution::new(
        shares
            .iter()
            .map(|c| (c.country.clone(), c.share))
            .collect(),
    )?)
}

fn default_shares() -> Vec<CountryShare> {
    ExperimentConfig::default().countries
}

// ---- generate ----

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    out_degree: Option<usize>,
    /// Country shares, e.g. `US:0.5,DE:0.5`.
    #[arg(long)]
    countries: Option<String>,
    /// Draw edge latencies from this pack instead of the bundled RTT table.
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Variance scenario used with the bundled RTT table.
    #[arg(long)]
    scenario: Option<VarianceScenario>,
    /// Keep unit edge weights.
    #[arg(long)]
    unweighted: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateConfig {
    nodes: usize,
    out_degree: usize,
    countries: Vec<CountryShare>,
    pack: Option<PathBuf>,
    scenario: VarianceScenario,
    unweighted: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            nodes: 300,
            out_degree: 8,
            countries: default_shares(),
            pack: None,
            scenario: VarianceScenario::Small,
            unweighted: false,
        }
    }
}

fn generate(cli: &Cli, args: &GenerateArgs) -> CliResult<()> {
    let mut cfg: GenerateConfig = load_config(cli.config.as_deref())?;
    cfg.nodes = args.nodes.unwrap_or(cfg.nodes);
    cfg.out_degree = args.out_degree.unwrap_or(cfg.out_degree);
    if let Some(c) = &args.countries {
        cfg.countries = parse_countries(c).config()?;
    }
    cfg.pack = args.pack.clone().or(cfg.pack);
    cfg.scenario = args.scenario.unwrap_or(cfg.scenario);
    cfg.unweighted |= args.unweighted;
    let seed = cli.seed.unwrap_or(0);

    let dist = distribution(&cfg.countries).config()?;
    let topo = sim::generate_topology(cfg.nodes, cfg.out_degree, &dist, seed).config()?;
    let topo = if cfg.unweighted {
        topo
    } else {
        let (model, factor) = match &cfg.pack {
            Some(p) => {
                let pack = load_pack(p)?;
                (pack.latency_model().data()?, pack.relay_factor)
            }
            None => {
                let data = LatencyDataset::builtin();
                let model = fit_latency_model_with(&data, cfg.scenario, LatencyBasis::OneWay, &[])
                    .internal()?;
                (model, DEFAULT_RELAY_FACTOR)
            }
        };
        sim::assign_edge_latencies(&topo, &model, factor, seed).data()?
    };
    write_output(&cli.out, "topology.json", |w| {
        w.write_all(topo.to_json().as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

// ---- simulate ----

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Redraw edge weights each repetition from this pack's latencies and
    /// take processing constants from it.
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Processing preset when no pack is given (gervais, testnet, mainnet).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    block_size: Option<u64>,
    #[arg(long)]
    repetitions: Option<u32>,
    /// Comma-separated source node ids; all nodes when omitted.
    #[arg(long)]
    sources: Option<String>,
    /// Accumulate edge weights only.
    #[arg(long)]
    no_processing: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    topology: Option<PathBuf>,
    pack: Option<PathBuf>,
    preset: String,
    block_size: u64,
    repetitions: u32,
    sources: Option<Vec<PeerId>>,
    include_processing: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            topology: None,
            pack: None,
            preset: "gervais".into(),
            block_size: 1_000_000,
            repetitions: 50,
            sources: None,
            include_processing: true,
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    observations: usize,
    disconnected: usize,
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> CliResult<()> {
    let mut cfg: SimulateConfig = load_config(cli.config.as_deref())?;
    cfg.topology = args.topology.clone().or(cfg.topology);
    cfg.pack = args.pack.clone().or(cfg.pack);
    if let Some(p) = &args.preset {
        cfg.preset = p.clone();
    }
    cfg.block_size = args.block_size.unwrap_or(cfg.block_size);
    cfg.repetitions = args.repetitions.unwrap_or(cfg.repetitions);
    if let Some(s) = &args.sources {
        let parsed: Result<Vec<PeerId>, _> = s.split(',').map(|x| x.trim().parse()).collect();
        cfg.sources = Some(parsed.context("parsing --sources").config()?);
    }
    cfg.include_processing &= !args.no_processing;

    let topo_path = cfg
        .topology
        .as_ref()
        .ok_or_else(|| anyhow!("--topology is required"))
        .config()?;
    let topo = load_topology(topo_path)?;
    let (weights, processing) = match &cfg.pack {
        Some(p) => {
            let pack = load_pack(p)?;
            (
                EdgeWeights::Redraw {
                    model: pack.latency_model().data()?,
                    relay_factor: pack.relay_factor,
                },
                pack.processing().data()?,
            )
        }
        None => (
            EdgeWeights::Fixed,
            ProcessingModel::preset(&cfg.preset).config()?,
        ),
    };
    let sources: Vec<PeerId> = cfg
        .sources
        .clone()
        .unwrap_or_else(|| (0..topo.node_count() as PeerId).collect());
    let synth = sim::synthesize_observations(
        &topo,
        SynthesisConfig {
            processing: processing.processing_params(cfg.block_size),
            block_size: cfg.block_size,
            include_processing: cfg.include_processing,
            weights,
            repetitions: cfg.repetitions,
            seed: cli.seed.unwrap_or(0),
        },
        &sources,
    )
    .data()?;
    let summary = SimulateSummary {
        observations: synth.observations.len(),
        disconnected: synth.diagnostics.disconnected,
    };
    let set = synth.into_set(&topo);
    write_output(&cli.out, "observations.csv", |w| Ok(set.write_csv(w)?))?;
    write_json(&cli.out, "simulate_summary.json", &summary)
}

// ---- fit ----

#[derive(Args)]
struct FitArgs {
    /// `country_a,country_b,rtt_ms` CSV; the bundled table when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<VarianceScenario>,
    /// Processing constants: gervais, testnet or mainnet.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_hops: Option<u32>,
    #[arg(long)]
    relay_factor: Option<f64>,
    /// Apply the relay factor to the full RTT instead of RTT/2.
    #[arg(long)]
    round_trip: bool,
    #[arg(long)]
    mean_degree: Option<f64>,
    #[arg(long)]
    node_count: Option<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitConfig {
    dataset: Option<PathBuf>,
    scenario: VarianceScenario,
    preset: String,
    epsilon_ms: f64,
    max_hops: u32,
    relay_factor: f64,
    latency_basis: LatencyBasis,
    mean_degree: f64,
    node_count: u32,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            scenario: VarianceScenario::Small,
            preset: "gervais".into(),
            epsilon_ms: DEFAULT_EPSILON_MS,
            max_hops: DEFAULT_MAX_HOPS,
            relay_factor: DEFAULT_RELAY_FACTOR,
            latency_basis: LatencyBasis::OneWay,
            mean_degree: 16.0,
            node_count: 300,
        }
    }
}

fn fit(cli: &Cli, args: &FitArgs) -> CliResult<()> {
    let mut cfg: FitConfig = load_config(cli.config.as_deref())?;
    cfg.dataset = args.dataset.clone().or(cfg.dataset);
    cfg.scenario = args.scenario.unwrap_or(cfg.scenario);
    if let Some(p) = &args.preset {
        cfg.preset = p.clone();
    }
    cfg.epsilon_ms = args.epsilon.unwrap_or(cfg.epsilon_ms);
    cfg.max_hops = args.max_hops.unwrap_or(cfg.max_hops);
    cfg.relay_factor = args.relay_factor.unwrap_or(cfg.relay_factor);
    if args.round_trip {
        cfg.latency_basis = LatencyBasis::RoundTrip;
    }
    cfg.mean_degree = args.mean_degree.unwrap_or(cfg.mean_degree);
    cfg.node_count = args.node_count.unwrap_or(cfg.node_count);

    let data = match &cfg.dataset {
        Some(p) => LatencyDataset::from_csv_path(p).data()?,
        None => LatencyDataset::builtin(),
    };
    let model = fit_latency_model_with(&data, cfg.scenario, cfg.latency_basis, &[]).data()?;
    let mut pack = ParamPack::new(&model, ProcessingModel::preset(&cfg.preset).config()?);
    pack.epsilon_ms = cfg.epsilon_ms;
    pack.max_hops = cfg.max_hops;
    pack.relay_factor = cfg.relay_factor;
    pack.mean_degree = cfg.mean_degree;
    pack.node_count = cfg.node_count;
    pack.validate().config()?;
    write_json(&cli.out, "pack.json", &pack)
}

// ---- ingest ----

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    /// EWMA gain for RTT smoothing.
    #[arg(long)]
    alpha: Option<f64>,
    /// Pick block sources by raw instead of half-RTT-adjusted arrival.
    #[arg(long)]
    raw_order: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestConfig {
    log: Option<PathBuf>,
    alpha: f64,
    source_ordering: SourceOrdering,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            log: None,
            alpha: DEFAULT_ALPHA,
            source_ordering: SourceOrdering::Adjusted,
        }
    }
}

fn ingest_cmd(cli: &Cli, args: &IngestArgs) -> CliResult<()> {
    let mut cfg: IngestConfig = load_config(cli.config.as_deref())?;
    cfg.log = args.log.clone().or(cfg.log);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    if args.raw_order {
        cfg.source_ordering = SourceOrdering::Raw;
    }
    let path = cfg
        .log
        .as_ref()
        .ok_or_else(|| anyhow!("--log is required"))
        .config()?;
    let estimator = RttEstimator::new(cfg.alpha).config()?;
    let records = ingest::read_ndjson(open(path)?).data()?;
    let (set, diag) = ingest::build_observations(&records, estimator, cfg.source_ordering);
    write_output(&cli.out, "observations.csv", |w| Ok(set.write_csv(w)?))?;
    write_json(&cli.out, "ingest_diagnostics.json", &diag)
}

// ---- infer ----

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Topology whose node countries label the peers.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// `peer,country` CSV labelling the peers.
    #[arg(long)]
    countries: Option<PathBuf>,
    #[arg(long)]
    min_blocks: Option<usize>,
    /// `mean` (average posteriors) or `bayes` (multiply likelihoods).
    #[arg(long)]
    mode: Option<AggregationMode>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferConfig {
    observations: Option<PathBuf>,
    pack: Option<PathBuf>,
    topology: Option<PathBuf>,
    countries: Option<PathBuf>,
    min_blocks: usize,
    mode: AggregationMode,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            observations: None,
            pack: None,
            topology: None,
            countries: None,
            min_blocks: DEFAULT_MIN_BLOCKS,
            mode: AggregationMode::MeanPosterior,
        }
    }
}

#[derive(Deserialize)]
struct CountryRow {
    peer: String,
    country: String,
}

fn infer_cmd(cli: &Cli, args: &InferArgs) -> CliResult<()> {
    let mut cfg: InferConfig = load_config(cli.config.as_deref())?;
    cfg.observations = args.observations.clone().or(cfg.observations);
    cfg.pack = args.pack.clone().or(cfg.pack);
    cfg.topology = args.topology.clone().or(cfg.topology);
    cfg.countries = args.countries.clone().or(cfg.countries);
    cfg.min_blocks = args.min_blocks.unwrap_or(cfg.min_blocks);
    cfg.mode = args.mode.unwrap_or(cfg.mode);

    let obs_path = cfg
        .observations
        .as_ref()
        .ok_or_else(|| anyhow!("--observations is required"))
        .config()?;
    let pack_path = cfg
        .pack
        .as_ref()
        .ok_or_else(|| anyhow!("--pack is required"))
        .config()?;
    let pack = load_pack(pack_path)?;

    let mut by_name: HashMap<String, String> = HashMap::new();
    let mut peers = PeerTable::new();
    if let Some(t) = &cfg.topology {
        let topo = load_topology(t)?;
        peers = topo.peer_table();
        for n in &topo.nodes {
            by_name.insert(n.id.to_string(), n.country.clone());
        }
    }
    if let Some(c) = &cfg.countries {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(open(c)?);
        for row in rdr.deserialize() {
            let row: CountryRow = row.data()?;
            by_name.insert(row.peer, row.country);
        }
    }
    let set = ObservationSet::read_csv_into(open(obs_path)?, peers).data()?;
    let countries = inference::peer_countries(&set.peers, &by_name);
    let model = InferenceModel::new(&pack, &set.peers, &countries).data()?;
    let result =
        inference::infer_edges(&set.observations, &model, cfg.min_blocks, cfg.mode).data()?;
    write_output(&cli.out, "edges.csv", |w| {
        Ok(result.write_csv(&set.peers, w)?)
    })
}

// ---- score ----

#[derive(Args)]
struct ScoreArgs {
    /// Inferred edges CSV.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Ground truth from a topology's hop distances.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Ground truth from the `true_hops` column of an observations CSV.
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    up_to: Option<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScoreConfig {
    edges: Option<PathBuf>,
    topology: Option<PathBuf>,
    observations: Option<PathBuf>,
    up_to: u32,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            edges: None,
            topology: None,
            observations: None,
            up_to: 3,
        }
    }
}

#[derive(Deserialize)]
struct EdgeRow {
    source: String,
    relay: String,
    estimated_hops: Option<u32>,
}

fn score_cmd(cli: &Cli, args: &ScoreArgs) -> CliResult<()> {
    let mut cfg: ScoreConfig = load_config(cli.config.as_deref())?;
    cfg.edges = args.edges.clone().or(cfg.edges);
    cfg.topology = args.topology.clone().or(cfg.topology);
    cfg.observations = args.observations.clone().or(cfg.observations);
    cfg.up_to = args.up_to.unwrap_or(cfg.up_to);
    if cfg.up_to == 0 {
        return Err(anyhow!("--up-to must be at least 1")).config();
    }
    let edges_path = cfg
        .edges
        .as_ref()
        .ok_or_else(|| anyhow!("--edges is required"))
        .config()?;

    let (mut peers, all_truth) = match (&cfg.topology, &cfg.observations) {
        (Some(t), None) => {
            let topo = load_topology(t)?;
            (topo.peer_table(), eval::topology_truth(&topo))
        }
        (None, Some(o)) => {
            let set = ObservationSet::read_csv(open(o)?).data()?;
            let mut truth: BTreeMap<(PeerId, PeerId), u32> = BTreeMap::new();
            for obs in &set.observations {
                let Some(h) = obs.true_hops else { continue };
                let prev = truth.insert((obs.source, obs.relay), h);
                if prev.is_some_and(|p| p != h) {
                    return Err(anyhow!(
                        "conflicting true_hops for {}->{}",
                        set.peers.name(obs.source),
                        set.peers.name(obs.relay)
                    ))
                    .data();
                }
            }
            (set.peers, truth)
        }
        _ => {
            return Err(anyhow!(
                "exactly one of --topology or --observations is required"
            ))
            .config()
        }
    };

    let mut estimates = BTreeMap::new();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(edges_path)?);
    for row in rdr.deserialize() {
        let row: EdgeRow = row.data()?;
        let key = (peers.intern(&row.source), peers.intern(&row.relay));
        estimates.insert(key, row.estimated_hops);
    }
    let truth: BTreeMap<(PeerId, PeerId), u32> = estimates
        .keys()
        .filter_map(|k| all_truth.get(k).map(|h| (*k, *h)))
        .collect();
    let score = eval::score(&estimates, &truth, cfg.up_to).data()?;
    write_output(&cli.out, "score.csv", |w| Ok(score.write_csv(w)?))
}

// ---- experiment ----

fn experiment(cli: &Cli) -> CliResult<()> {
    let mut cfg: ExperimentConfig = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().config()?;
    let report = eval::run_experiment(&cfg).data()?;
    write_output(&cli.out, "report.csv", |w| Ok(report.write_csv(w)?))
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Ingest(a) => ingest_cmd(cli, a),
        Command::Infer(a) => infer_cmd(cli, a),
        Command::Score(a) => score_cmd(cli, a),
        Command::Experiment => experiment(cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                Failure::Config as u8
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { kind, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(kind as u8)
        }
    }
}
