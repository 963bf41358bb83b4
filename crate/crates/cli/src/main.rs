use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kgdrive::corpus::{build_forest, load_corpus_dir, CorpusError};
use kgdrive::dataset::{build_desk_dataset, split, Dataset, DatasetConfig, DatasetError};
use kgdrive::kgraph::external::{EndpointConfig, ExternalExtractor, HttpEndpoint, ENV_ENDPOINT_KEY, ENV_ENDPOINT_URL};
use kgdrive::kgraph::{build_graph, link_entities, DefaultProfiler, ExtractError, GraphError, KnowledgeGraph, Lexicon};
use kgdrive::planner::{PlannerError, TrajPoint, Trajectory};
use kgdrive::retrieval::Retriever;
use kgdrive::seed::{config_hash, sha256_hex};
use kgdrive::sim::{
    find_scenario, load_scenario_dir, metrics_csv_row, render_svg, run_episode, suite_rows, sweep, sweep_csv_row, Env,
    Knowledge, Policy, Scenario, SimConfig, SimError, SweepSpec, METRICS_CSV_HEADER, SWEEP_CSV_HEADER,
};
use kgdrive::value::scorer::ScorerError;
use kgdrive::value::train::{evaluate, label_mean, train_scorer, TrainConfig, TrainError};
use kgdrive::value::{ScorerWeights, ValueError};
use kgdrive::verbalizer::SceneState;

/// Exit codes; clap itself exits with 2 on usage errors.
mod exit {
    pub const MISSING_PATH: u8 = 3;
    pub const BAD_INPUT: u8 = 4;
    pub const COMPUTE: u8 = 5;
    pub const ENDPOINT: u8 = 6;
    pub const OTHER: u8 = 1;
}

#[derive(Debug)]
struct MissingPath(PathBuf);

impl std::fmt::Display for MissingPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "path does not exist: {}", self.0.display())
    }
}

impl std::error::Error for MissingPath {}

/// Argument values clap cannot check itself.
#[derive(Debug)]
struct BadArgument(String);

impl std::fmt::Display for BadArgument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadArgument {}

#[derive(Parser)]
#[command(name = "kgdrive", version, about = "Knowledge-grounded trajectory selection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a corpus directory and write the clause graph.
    BuildGraph(BuildGraphArgs),
    /// Retrieve clauses for the first observation of a scenario.
    Query(QueryArgs),
    /// Generate an oracle-labeled preference dataset from procedural scenes.
    GenDataset(GenDatasetArgs),
    /// Train the learned scorer on a dataset's train split.
    TrainValue(TrainArgs),
    /// Report MSE, MAE and sign agreement of a weights file.
    EvalValue(EvalArgs),
    /// Run closed-loop episodes and write metrics, traces and renders.
    Run(RunArgs),
    /// Aggregate episodes over policies and gamma / N_K / N_T settings.
    Sweep(SweepArgs),
    /// Render the candidates of one planning step as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long, default_value = "data/corpus")]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Entity extraction endpoint; the built-in lexicon is used when unset.
    #[arg(long, env = ENV_ENDPOINT_URL)]
    endpoint_url: Option<String>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario id (looked up in --scenarios) or path to a scenario or scene file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "data/scenarios")]
    scenarios: PathBuf,
}

#[derive(Args)]
struct ValueArgs {
    #[arg(long, default_value_t = 0.7)]
    gamma: f64,
    #[arg(long, default_value_t = 16)]
    nk: usize,
    #[arg(long, default_value_t = 20)]
    nt: usize,
    /// Learned scorer weights; the rule oracle scores when unset.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 16)]
    nk: usize,
    /// Structured output file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    #[arg(long, default_value_t = 40)]
    per_scene: usize,
    #[arg(long, default_value_t = 0.25)]
    negative_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    nk: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Seed of the scene shuffle.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Heldout,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Heldout)]
    split: SplitChoice,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "knowval")]
    policy: String,
    /// Episode seeds; repeat the flag for several.
    #[arg(long = "seed", default_values_t = [0u64])]
    seeds: Vec<u64>,
    /// Run seeds 0..N instead of --seed.
    #[arg(long)]
    n_seeds: Option<u64>,
    #[command(flatten)]
    value: ValueArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value = "data/scenarios")]
    scenarios: PathBuf,
    /// Restrict to these scenario ids; all scenarios in the directory otherwise.
    #[arg(long = "scenario")]
    only: Vec<String>,
    #[arg(long = "policy", default_values_t = ["knowval".to_string()])]
    policies: Vec<String>,
    #[arg(long, default_value_t = 20)]
    n_seeds: u64,
    #[arg(long = "gamma", default_values_t = [0.7])]
    gammas: Vec<f64>,
    #[arg(long = "nk", default_values_t = [16usize])]
    n_ks: Vec<usize>,
    #[arg(long = "nt", default_values_t = [20usize])]
    n_ts: Vec<usize>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "knowval")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    step: usize,
    #[command(flatten)]
    value: ValueArgs,
    #[arg(long)]
    out: PathBuf,
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(MissingPath(path.to_path_buf()).into());
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_knowledge(path: &Path) -> Result<Knowledge> {
    require(path)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let graph = KnowledgeGraph::load(&bytes).with_context(|| format!("loading graph {}", path.display()))?;
    Ok(Knowledge::new(graph, Lexicon::driving_default()))
}

fn load_weights(path: Option<&PathBuf>) -> Result<Option<ScorerWeights>> {
    let Some(p) = path else { return Ok(None) };
    require(p)?;
    let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    Ok(Some(ScorerWeights::read_from(std::io::BufReader::new(f)).with_context(|| format!("reading weights {}", p.display()))?))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Dataset::from_jsonl(&text).with_context(|| format!("parsing dataset {}", path.display()))
}

fn resolve_scenario(a: &ScenarioArgs) -> Result<Scenario> {
    let p = Path::new(&a.scenario);
    if !p.exists() {
        require(&a.scenarios)?;
    }
    Ok(find_scenario(&a.scenarios, &a.scenario)?)
}

fn parse_policy(s: &str) -> Result<Policy> {
    Policy::parse(s).ok_or_else(|| BadArgument(format!("unknown policy `{s}` (knowval, progress_max, scripted_replay)")).into())
}

fn sim_config(v: &ValueArgs) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.value.gamma = v.gamma;
    cfg.value.n_k = v.nk;
    cfg.value.n_t = v.nt;
    cfg.synced()
}

fn cmd_build_graph(a: &BuildGraphArgs) -> Result<()> {
    require(&a.corpus)?;
    let docs = load_corpus_dir(&a.corpus)?;
    let forest = build_forest(&docs)?;
    let lexicon = Lexicon::driving_default();
    let (graph, extractor) = match &a.endpoint_url {
        Some(url) => {
            let mut ec = EndpointConfig::new(url.clone());
            ec.api_key = std::env::var(ENV_ENDPOINT_KEY).ok();
            let ex = ExternalExtractor::new(HttpEndpoint::new(ec));
            let (g, report) = link_entities(&forest, &ex, &DefaultProfiler)?;
            if let Some((clause, e)) = report.failures.first() {
                return Err(anyhow::Error::new(e.clone()).context(format!("extraction failed for {clause}")));
            }
            (g, "external")
        }
        None => (build_graph(&forest, &lexicon)?, "lexicon"),
    };
    let bytes = graph.save();
    write(&a.out, &bytes)?;
    let stats = json!({
        "documents": docs.len(),
        "clauses": graph.clause_ids().count(),
        "native_nodes": graph.native_nodes.len(),
        "entities": graph.entities.len(),
        "nodes": graph.native_nodes.len() + graph.entities.len(),
        "edges": graph.edges.len(),
        "extractor": extractor,
        "graph_sha256": sha256_hex(&bytes),
    });
    let text = serde_json::to_string_pretty(&stats)?;
    write(&a.out.with_extension("stats.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

/// A scenario file gives its first observation; anything else must be a
/// serialized observation.
fn query_scene(a: &ScenarioArgs) -> Result<SceneState> {
    let p = Path::new(&a.scenario);
    if p.is_file() {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        if let Ok(sc) = Scenario::from_json(&text) {
            return Ok(Env::new(&sc, SimConfig::default().planner.dt)?.perceive());
        }
        let scene: SceneState = serde_json::from_str(&text).with_context(|| format!("{} is neither a scenario nor a scene", p.display()))?;
        scene.validate().map_err(|e| anyhow::anyhow!(e.to_string())).context("invalid scene")?;
        return Ok(scene);
    }
    let sc = resolve_scenario(a)?;
    Ok(Env::new(&sc, SimConfig::default().planner.dt)?.perceive())
}

fn cmd_query(a: &QueryArgs) -> Result<()> {
    let k = load_knowledge(&a.graph)?;
    let scene = query_scene(&a.scenario)?;
    let mut rc = SimConfig::default().retrieval;
    rc.n_k = a.nk;
    let r = Retriever::new(&k.graph, &k.lexicon, rc).retrieve(&scene);
    println!("query: {}", r.query.replace('\n', " | "));
    println!("entity keywords: {}", r.keywords.entity_keywords.join(", "));
    println!("context keywords: {}", r.keywords.context_keywords.join(", "));
    for (i, it) in r.items.iter().take(a.nk).enumerate() {
        println!("{:>2}. [{}] {:.3} {}", i + 1, it.clause_id, it.relevance, it.verbatim_text);
    }
    println!("supplement: {}", r.supplement.items.join(", "));
    if let Some(out) = &a.out {
        let items: Vec<_> = r
            .items
            .iter()
            .take(a.nk)
            .enumerate()
            .map(|(i, it)| json!({"rank": i + 1, "clause_id": it.clause_id, "relevance": it.relevance, "verbatim_text": it.verbatim_text}))
            .collect();
        let doc = json!({"query": r.query, "keywords": r.keywords, "items": items, "supplement": r.supplement.items});
        write(out, format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    Ok(())
}

fn cmd_gen_dataset(a: &GenDatasetArgs) -> Result<()> {
    let k = load_knowledge(&a.graph)?;
    let mut cfg = DatasetConfig { per_scene: a.per_scene, negative_ratio: a.negative_ratio, ..Default::default() };
    cfg.retrieval.n_k = a.nk;
    let (ds, ann, failures) = build_desk_dataset(a.scenes, &cfg, &k, a.seed)?;
    for (scene, why) in &failures {
        log::warn!("scene {scene} skipped: {why}");
    }
    let text = ds.to_jsonl();
    write(&a.out, &text)?;
    let report = json!({
        "samples": ds.samples.len(),
        "scenes": a.scenes,
        "failed_scenes": failures.len(),
        "dropped_samples": ann.dropped.len(),
        "unbound_clauses": ann.unbound.len(),
        "seed": a.seed,
        "config_hash": ds.header.config_hash,
        "dataset_sha256": sha256_hex(text.as_bytes()),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn pick_split(ds: &Dataset, s: &SplitArgs, which: SplitChoice) -> Result<Vec<kgdrive::dataset::PreferenceSample>> {
    if let SplitChoice::All = which {
        return Ok(ds.samples.clone());
    }
    let (train, held) = split(&ds.samples, s.train_fraction, s.split_seed)?;
    Ok(match which {
        SplitChoice::Train => train,
        _ => held,
    })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let (train, held) = split(&ds.samples, a.split.train_fraction, a.split.split_seed)?;
    let (tx, hx) = (ds.examples(&train), ds.examples(&held));
    let tc = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, lr: a.lr, seed: a.seed, ..Default::default() };
    let shape = kgdrive::value::ScorerShape { c: ds.header.config.planner.token_dim, layers: a.layers };
    let (w, logs) = train_scorer(shape, &tx, &hx, &tc)?;
    for l in &logs {
        match l.val_mse {
            Some(v) => println!("epoch {:>3} lr {:.2e} train_mse {:.5} val_mse {:.5}", l.epoch, l.lr, l.train_mse, v),
            None => println!("epoch {:>3} lr {:.2e} train_mse {:.5}", l.epoch, l.lr, l.train_mse),
        }
    }
    let meta = json!({
        "seed": a.seed,
        "config_hash": config_hash(&tc),
        "train_config": tc,
        "dataset_sha256": ds.file_hash(),
        "train_fraction": a.split.train_fraction,
        "split_seed": a.split.split_seed,
        "label_mean": label_mean(&tx),
    });
    let mut bytes = Vec::new();
    w.write_with_meta(&mut bytes, &meta)?;
    write(&a.out, &bytes)?;
    println!("weights_sha256 {}", sha256_hex(&bytes));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let w = load_weights(Some(&a.weights))?.expect("path given");
    let (train, _) = split(&ds.samples, a.split_args.train_fraction, a.split_args.split_seed)?;
    let baseline = label_mean(&ds.examples(&train));
    let samples = pick_split(&ds, &a.split_args, a.split)?;
    let m = evaluate(&w, &ds.examples(&samples), baseline)?;
    let report = json!({
        "split": match a.split { SplitChoice::Train => "train", SplitChoice::Heldout => "heldout", SplitChoice::All => "all" },
        "samples": samples.len(),
        "metrics": m,
        "dataset_sha256": ds.file_hash(),
        "dataset_seed": ds.header.seed,
        "config_hash": ds.header.config_hash,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &a.out {
        write(out, format!("{text}\n"))?;
    }
    Ok(())
}

/// The driven path as a trajectory, for rendering.
fn driven_path(ep: &kgdrive::sim::Episode, dt: f64) -> Trajectory {
    let points = ep
        .frames
        .iter()
        .skip(1)
        .map(|f| TrajPoint { x: f.ego.position[0], y: f.ego.position[1], heading: f.ego.heading, speed: f.ego.speed })
        .collect();
    Trajectory { traj_id: 0, dt, points, maneuver_tag: "driven".into() }
}

fn svg_with_provenance(svg: String, seed: u64, hash: &str) -> String {
    svg.replacen("\n", &format!("\n<!-- seed {seed} config_hash {hash} -->\n"), 1)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let k = load_knowledge(&a.graph)?;
    let sc = resolve_scenario(&a.scenario)?;
    let policy = parse_policy(&a.policy)?;
    let weights = load_weights(a.value.weights.as_ref())?;
    let cfg = sim_config(&a.value);
    let seeds: Vec<u64> = match a.n_seeds {
        Some(n) => (0..n).collect(),
        None => a.seeds.clone(),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut csv = format!("{METRICS_CSV_HEADER}\n");
    for &seed in &seeds {
        let ep = run_episode(&sc, policy, seed, &cfg, &k, weights.as_ref(), false)?;
        let m = &ep.metrics;
        csv.push_str(&metrics_csv_row(m));
        csv.push('\n');
        let stem = format!("{}_{}_s{seed}", sc.scenario_id, policy.as_str());
        let head = json!({"scenario_id": m.scenario_id, "policy": policy.as_str(), "seed": seed, "config_hash": m.config_hash, "trace_hash": m.trace_hash});
        write(&a.out.join(format!("{stem}.trace.jsonl")), format!("{head}\n{}", ep.trace_jsonl()))?;
        let scene = Env::new(&sc, cfg.planner.dt)?.perceive();
        let svg = render_svg(&scene, &[driven_path(&ep, cfg.planner.dt)], Some(0));
        write(&a.out.join(format!("{stem}.svg")), svg_with_provenance(svg, seed, &m.config_hash))?;
        println!(
            "{} {} seed {seed}: collisions {} splashes {} solid-line crossings {} progress {:.3} trace {}",
            sc.scenario_id,
            policy.as_str(),
            m.collisions,
            m.splash_events,
            m.solid_line_crossings_in_tunnel,
            m.route_progress,
            m.trace_hash
        );
    }
    write(&a.out.join("metrics.csv"), csv)?;
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let k = load_knowledge(&a.graph)?;
    require(&a.scenarios)?;
    let mut scenarios = load_scenario_dir(&a.scenarios)?;
    if !a.only.is_empty() {
        for id in &a.only {
            if !scenarios.iter().any(|s| &s.scenario_id == id) {
                find_scenario(&a.scenarios, id)?;
            }
        }
        scenarios.retain(|s| a.only.contains(&s.scenario_id));
    }
    let policies = a.policies.iter().map(|p| parse_policy(p)).collect::<Result<Vec<_>>>()?;
    let spec = SweepSpec {
        policies,
        seeds: (0..a.n_seeds).collect(),
        gammas: a.gammas.clone(),
        n_ks: a.n_ks.clone(),
        n_ts: a.n_ts.clone(),
    };
    let weights = load_weights(a.weights.as_ref())?;
    let base = SimConfig::default();
    let rows = sweep(&scenarios, &spec, &base, &k, weights.as_ref())?;
    let suite = suite_rows(&rows);
    let mut csv = format!("# seeds 0..{} config_hash {}\n{SWEEP_CSV_HEADER}\n", a.n_seeds, config_hash(&base));
    for r in rows.iter().chain(&suite) {
        csv.push_str(&sweep_csv_row(r));
        csv.push('\n');
    }
    write(&a.out, &csv)?;
    println!("{SWEEP_CSV_HEADER}");
    for r in &suite {
        println!("{}", sweep_csv_row(r));
    }
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let k = load_knowledge(&a.graph)?;
    let sc = resolve_scenario(&a.scenario)?;
    let policy = parse_policy(&a.policy)?;
    let weights = load_weights(a.value.weights.as_ref())?;
    let cfg = sim_config(&a.value);
    let ep = run_episode(&sc, policy, a.seed, &cfg, &k, weights.as_ref(), true)?;
    let Some((scene, cands, selected)) = ep.plans.get(a.step) else {
        bail!("episode has {} steps; step {} does not exist", ep.plans.len(), a.step);
    };
    let svg = render_svg(scene, cands, Some(*selected));
    write(&a.out, svg_with_provenance(svg, a.seed, &ep.metrics.config_hash))?;
    println!("{} step {}: {} candidates, selected {}", sc.scenario_id, a.step, cands.len(), selected);
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<BadArgument>() {
            return exit::BAD_INPUT;
        }
        if cause.is::<MissingPath>() {
            return exit::MISSING_PATH;
        }
        if cause.is::<ExtractError>() {
            return exit::ENDPOINT;
        }
        if cause.is::<TrainError>() || cause.is::<PlannerError>() || cause.is::<ValueError>() {
            return exit::COMPUTE;
        }
        if let Some(s) = cause.downcast_ref::<SimError>() {
            return match s {
                SimError::Planner(_) | SimError::Value(_) | SimError::EpisodeFinished => exit::COMPUTE,
                _ => exit::BAD_INPUT,
            };
        }
        if let Some(d) = cause.downcast_ref::<DatasetError>() {
            return match d {
                DatasetError::Planner(_) => exit::COMPUTE,
                _ => exit::BAD_INPUT,
            };
        }
        if cause.is::<CorpusError>() || cause.is::<GraphError>() || cause.is::<ScorerError>() || cause.is::<serde_json::Error>() {
            return exit::BAD_INPUT;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound { exit::MISSING_PATH } else { exit::OTHER };
        }
    }
    exit::OTHER
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::BuildGraph(a) => cmd_build_graph(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::GenDataset(a) => cmd_gen_dataset(a),
        Cmd::TrainValue(a) => cmd_train(a),
        Cmd::EvalValue(a) => cmd_eval(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Render(a) => cmd_render(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
