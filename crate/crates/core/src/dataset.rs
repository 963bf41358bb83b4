//! Preference dataset: (scene, trajectory, retrieved basis, per-clause label)
//! samples for the learned scorer.
//!
//! Scenes are fully revealed and labels come from the rule oracle. A dataset
//! file is JSON lines: one header line, then one sample per line.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{
    feedback_control, generate_candidates, rollout_world, start_point, step_state, wrap_angle, FutureState, PlannerConfig,
    PlannerError, TrajPoint, Trajectory,
};
use crate::retrieval::{scene_terms, Embedder, HashEmbedder, RetrievalConfig, Retriever};
use crate::seed::{config_hash, derive_seed, rng_for, sha256_hex};
use crate::sim::{AgentSpec, Env, Knowledge, Lane, MapSpec, Marking, MarkingKind, RouteSpec, Scenario, SimError, Zone};
use crate::value::features::{query_rows, query_tail};
use crate::value::oracle::{oracle_score, Trace};
use crate::value::train::TrainExample;
use crate::verbalizer::{connected_blocks, default_radius, EgoState, SceneState};

pub const FORMAT: &str = "kgdrive-dataset/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 scenes to split, got {0}")]
    TooFewScenes(usize),
    #[error("sample {sample_id}: label {label} for {clause_id} is outside its conclusion band")]
    OutOfBand { sample_id: String, clause_id: String, label: f64 },
    #[error("sample {0} refers to an unknown scene")]
    UnknownScene(String),
    #[error("dataset line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PlannerCandidate,
    RandomNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub sample_id: String,
    pub scene_ref: String,
    pub trajectory: Trajectory,
    /// Retrieved clause ids in rank order.
    pub basis: Vec<String>,
    pub future: FutureState,
    /// One label per basis clause once annotated.
    pub labels: Vec<f64>,
    pub provenance: Provenance,
    /// Trajectory encoding and context feature of the query rows.
    pub query_tail: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub per_scene: usize,
    pub negative_ratio: f64,
    pub noise_scale: f64,
    pub planner: PlannerConfig,
    pub retrieval: RetrievalConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_scene: 40,
            negative_ratio: 0.25,
            noise_scale: 1.0,
            planner: PlannerConfig::default(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.per_scene == 0 {
            return Err(DatasetError::InvalidConfig("per_scene must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_ratio) {
            return Err(DatasetError::InvalidConfig(format!("negative_ratio {} outside [0, 1]", self.negative_ratio)));
        }
        if self.planner.token_dim < 16 || !self.planner.token_dim.is_multiple_of(4) {
            return Err(DatasetError::InvalidConfig(format!("token_dim {}", self.planner.token_dim)));
        }
        Ok(())
    }
}

/// A named observation to sample from.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub scene_ref: String,
    pub scene: SceneState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    /// Where the scenes came from, e.g. `desk:50`.
    pub scene_source: String,
    pub config: DatasetConfig,
    /// Verbatim text of every clause named in a basis.
    pub clauses: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<PreferenceSample>,
}

/// Samples plus the scenes that could not be sampled and why.
#[derive(Debug, Clone, Default)]
pub struct GenerationReport {
    pub samples: Vec<PreferenceSample>,
    pub clauses: BTreeMap<String, String>,
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub labeled: usize,
    /// Samples dropped because their basis is empty.
    pub dropped: Vec<String>,
    /// Labels of clauses without a compiled predicate, per clause.
    pub unbound: BTreeMap<String, usize>,
}

/// Values are stored to 1e-6 so the file stays compact; training reads the
/// same rounded values.
fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn quantize_future(f: &mut FutureState) {
    for row in &mut f.tokens {
        row.iter_mut().for_each(|x| *x = quantize(*x));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NegativeKind {
    AimAtAgent,
    CrossSolidLine,
    OverspeedInWater,
}

fn nearest_label_cell(scene: &SceneState, label: &str) -> Option<[f64; 2]> {
    let g = &scene.grid;
    let ego = scene.ego.position;
    let mut best: Option<([f64; 2], f64)> = None;
    for j in 0..g.height {
        for i in 0..g.width {
            if g.label(i, j) != label {
                continue;
            }
            let c = g.cell_center(i, j);
            // only ahead of the ego
            if c[0] < ego[0] + 2.0 {
                continue;
            }
            let d = (c[0] - ego[0]).hypot(c[1] - ego[1]);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((c, d));
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Drive at `target` regardless of what is there.
fn aim_at(start: &TrajPoint, target: [f64; 2], v_target: f64, cfg: &PlannerConfig) -> Vec<TrajPoint> {
    let mut p = *start;
    (0..cfg.horizon)
        .map(|_| {
            let a = ((v_target - p.speed) / cfg.dt).clamp(-cfg.a_max, cfg.a_max);
            let v1 = (p.speed + a * cfg.dt).max(0.0);
            let s = (0.5 * (p.speed + v1) * cfg.dt).max(1e-6);
            let desired = (target[1] - p.y).atan2(target[0] - p.x);
            let kappa = wrap_angle(desired - p.heading) / s;
            p = step_state(&p, a, kappa, cfg);
            p
        })
        .collect()
}

fn lane_target(start: &TrajPoint, y_target: f64, v_target: f64, cfg: &PlannerConfig) -> Vec<TrajPoint> {
    let mut p = *start;
    (0..cfg.horizon)
        .map(|_| {
            let (a, k) = feedback_control(&p, y_target, v_target, cfg.a_max, cfg);
            p = step_state(&p, a, k, cfg);
            p
        })
        .collect()
}

fn negative_kinds(scene: &SceneState) -> Vec<NegativeKind> {
    let labels = scene.grid.present_labels();
    let mut kinds = vec![];
    if !scene.instances.is_empty() {
        kinds.push(NegativeKind::AimAtAgent);
    }
    if labels.contains("solid_line") {
        kinds.push(NegativeKind::CrossSolidLine);
    }
    if labels.contains("water") {
        kinds.push(NegativeKind::OverspeedInWater);
    }
    kinds
}

/// A deliberately bad trajectory. Scenes offering none of the three intents
/// get a flat-out overspeed in the ego's lane.
fn negative(scene: &SceneState, traj_id: usize, rng: &mut ChaCha8Rng, cfg: &PlannerConfig) -> Trajectory {
    let start = start_point(&scene.ego);
    let ego = scene.ego.position;
    let fast = (scene.ego.speed * rng.random_range(1.2..1.6)).max(rng.random_range(8.0..12.0)).min(cfg.v_max);
    let kinds = negative_kinds(scene);
    let (points, tag) = match kinds.choose(rng) {
        Some(NegativeKind::AimAtAgent) => {
            let near = scene
                .instances
                .iter()
                .min_by(|a, b| {
                    let da = (a.center[0] - ego[0]).hypot(a.center[1] - ego[1]);
                    let db = (b.center[0] - ego[0]).hypot(b.center[1] - ego[1]);
                    da.total_cmp(&db)
                })
                .expect("kind requires an instance");
            let t = [near.center[0] + rng.random_range(-0.5..0.5), near.center[1] + rng.random_range(-0.3..0.3)];
            (aim_at(&start, t, fast.max(scene.ego.speed), cfg), "neg_aim_agent")
        }
        Some(NegativeKind::CrossSolidLine) => {
            let c = nearest_label_cell(scene, "solid_line").unwrap_or([ego[0] + 10.0, ego[1] + cfg.lane_width / 2.0]);
            let side = if c[1] >= ego[1] { 1.0 } else { -1.0 };
            let y = c[1] + side * rng.random_range(1.0..2.0);
            (lane_target(&start, y, scene.ego.speed.max(3.0), cfg), "neg_cross_solid")
        }
        Some(NegativeKind::OverspeedInWater) => {
            let c = nearest_label_cell(scene, "water").unwrap_or([ego[0] + 10.0, ego[1]]);
            (lane_target(&start, c[1], fast.max(8.0), cfg), "neg_water_overspeed")
        }
        None => (lane_target(&start, ego[1], cfg.v_max.min(scene.ego.speed + 10.0), cfg), "neg_overspeed"),
    };
    Trajectory { traj_id, dt: cfg.dt, points, maneuver_tag: tag.into() }
}

fn sample_scene(
    spec: &SceneSpec,
    index: usize,
    knowledge: &Knowledge,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<(Vec<PreferenceSample>, BTreeMap<String, String>), DatasetError> {
    let scene = &spec.scene;
    scene.validate().map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
    let retriever = Retriever::new(&knowledge.graph, &knowledge.lexicon, cfg.retrieval.clone());
    let result = retriever.retrieve(scene);
    let items = &result.items[..result.items.len().min(cfg.retrieval.n_k)];
    let basis: Vec<String> = items.iter().map(|i| i.clause_id.clone()).collect();
    let clauses = items.iter().map(|i| (i.clause_id.clone(), i.verbatim_text.clone())).collect();
    let pcfg = &cfg.planner;
    let cands = generate_candidates(scene, cfg.per_scene, cfg.noise_scale, derive_seed(seed, "dataset-planner", index as u64), pcfg)?;
    let blocks = connected_blocks(&scene.grid, &default_radius, Some(scene.ego.position));
    let mut rng = rng_for(seed, "dataset", index as u64);
    let mut out = Vec::with_capacity(cfg.per_scene);
    for (k, cand) in cands.into_iter().enumerate() {
        let draw: f64 = rng.random();
        let (trajectory, provenance) = if draw < cfg.negative_ratio {
            (negative(scene, k, &mut rng, pcfg), Provenance::RandomNegative)
        } else {
            (cand, Provenance::PlannerCandidate)
        };
        let mut future = rollout_world(scene, &trajectory, &blocks, pcfg);
        quantize_future(&mut future);
        let tail = query_tail(scene, &trajectory, pcfg, pcfg.token_dim).into_iter().map(quantize).collect();
        out.push(PreferenceSample {
            sample_id: format!("{}-{k:03}", spec.scene_ref),
            scene_ref: spec.scene_ref.clone(),
            trajectory,
            basis: basis.clone(),
            future,
            labels: vec![],
            provenance,
            query_tail: tail,
        });
    }
    Ok((out, clauses))
}

/// Unlabeled samples, `per_scene` for every scene that could be sampled.
/// Scenes fail independently; their errors are collected in the report.
pub fn generate_samples(
    scenes: &[SceneSpec],
    knowledge: &Knowledge,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<GenerationReport, DatasetError> {
    cfg.validate()?;
    let parts: Vec<_> = scenes.par_iter().enumerate().map(|(i, s)| sample_scene(s, i, knowledge, cfg, seed)).collect();
    let mut report = GenerationReport::default();
    for (spec, part) in scenes.iter().zip(parts) {
        match part {
            Ok((samples, clauses)) => {
                report.samples.extend(samples);
                report.clauses.extend(clauses);
            }
            Err(e) => {
                log::warn!("scene {}: {e}", spec.scene_ref);
                report.failures.push((spec.scene_ref.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}

/// Label every (sample, clause) pair with the oracle. Samples with an empty
/// basis are dropped; a label outside its conclusion band is an error.
pub fn annotate(
    samples: Vec<PreferenceSample>,
    scenes: &[SceneSpec],
    knowledge: &Knowledge,
    pcfg: &PlannerConfig,
) -> Result<(Vec<PreferenceSample>, AnnotationReport), DatasetError> {
    let by_ref: BTreeMap<&str, &SceneState> = scenes.iter().map(|s| (s.scene_ref.as_str(), &s.scene)).collect();
    let terms: BTreeMap<&str, BTreeSet<String>> =
        scenes.iter().map(|s| (s.scene_ref.as_str(), scene_terms(&s.scene, &knowledge.lexicon))).collect();
    let mut report = AnnotationReport::default();
    let mut out = Vec::with_capacity(samples.len());
    for mut s in samples {
        if s.basis.is_empty() {
            log::warn!("sample {} has an empty basis and is dropped", s.sample_id);
            report.dropped.push(s.sample_id);
            continue;
        }
        let scene = by_ref.get(s.scene_ref.as_str()).ok_or_else(|| DatasetError::UnknownScene(s.sample_id.clone()))?;
        let trace = Trace::new(scene, &s.trajectory, pcfg);
        let mut labels = Vec::with_capacity(s.basis.len());
        for c in &s.basis {
            let binding = knowledge.bindings.get(c);
            if binding.is_none() {
                *report.unbound.entry(c.clone()).or_default() += 1;
            }
            let e = oracle_score(&trace, c, binding, &terms[s.scene_ref.as_str()]);
            if !e.in_band() {
                return Err(DatasetError::OutOfBand { sample_id: s.sample_id.clone(), clause_id: c.clone(), label: e.score });
            }
            labels.push(e.score);
        }
        s.labels = labels;
        report.labeled += 1;
        out.push(s);
    }
    if !report.unbound.is_empty() {
        let n: usize = report.unbound.values().sum();
        log::warn!("{n} labels from {} clauses without a predicate scored as no evidence", report.unbound.len());
    }
    Ok((out, report))
}

/// Scene-level split: whole scenes go to one side. Scene order is a seeded
/// shuffle and the train side gets `round(train_fraction * scenes)` of them.
pub fn split(
    samples: &[PreferenceSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<PreferenceSample>, Vec<PreferenceSample>), DatasetError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DatasetError::InvalidConfig(format!("train_fraction {train_fraction} outside [0, 1]")));
    }
    let mut refs: Vec<&str> = samples.iter().map(|s| s.scene_ref.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    if refs.len() < 2 {
        return Err(DatasetError::TooFewScenes(refs.len()));
    }
    refs.shuffle(&mut rng_for(seed, "split", 0));
    let n_train = (train_fraction * refs.len() as f64).round() as usize;
    if n_train == refs.len() {
        log::warn!("train fraction {train_fraction} leaves the held-out split empty");
    }
    let train_refs: BTreeSet<&str> = refs[..n_train].iter().copied().collect();
    let (train, held): (Vec<_>, Vec<_>) = samples.iter().cloned().partition(|s| train_refs.contains(s.scene_ref.as_str()));
    Ok((train, held))
}

impl Dataset {
    pub fn new(report: GenerationReport, samples: Vec<PreferenceSample>, cfg: &DatasetConfig, seed: u64, scene_source: &str) -> Self {
        let used: BTreeSet<&String> = samples.iter().flat_map(|s| &s.basis).collect();
        let clauses = report.clauses.into_iter().filter(|(k, _)| used.contains(k)).collect();
        let header = DatasetHeader {
            format: FORMAT.into(),
            seed,
            config_hash: config_hash(cfg),
            scene_source: scene_source.into(),
            config: cfg.clone(),
            clauses,
        };
        Self { header, samples }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(DatasetError::Parse { line: 1, reason: "empty file".into() })?;
        let header: DatasetHeader =
            serde_json::from_str(first).map_err(|e| DatasetError::Parse { line: 1, reason: e.to_string() })?;
        if header.format != FORMAT {
            return Err(DatasetError::Parse { line: 1, reason: format!("unknown format `{}`", header.format) });
        }
        let mut samples = Vec::new();
        for (i, l) in lines {
            let s: PreferenceSample =
                serde_json::from_str(l).map_err(|e| DatasetError::Parse { line: i + 1, reason: e.to_string() })?;
            if s.labels.len() != s.basis.len() {
                return Err(DatasetError::Parse { line: i + 1, reason: "labels and basis differ in length".into() });
            }
            samples.push(s);
        }
        Ok(Self { header, samples })
    }

    pub fn file_hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    /// Scorer inputs for `samples`, with clause texts embedded by the same
    /// embedder retrieval uses. Clauses without tokens get no row.
    pub fn examples(&self, samples: &[PreferenceSample]) -> Vec<TrainExample> {
        let c = self.header.config.planner.token_dim;
        let embedder = HashEmbedder { dim: self.header.config.retrieval.embed_dim };
        let embeds: BTreeMap<&str, Array2<f64>> =
            self.header.clauses.iter().map(|(k, t)| (k.as_str(), embedder.embed(t))).collect();
        let empty = Array2::zeros((0, embedder.dim));
        samples
            .iter()
            .map(|s| {
                let e: Vec<&Array2<f64>> = s.basis.iter().map(|b| embeds.get(b.as_str()).unwrap_or(&empty)).collect();
                let (x, idx) = query_rows(&e, &s.query_tail, c);
                let target = Array1::from_iter(idx.iter().map(|&j| s.labels[j]));
                TrainExample { x, s: crate::value::features::token_matrix(&s.future), target }
            })
            .collect()
    }
}

/// Parameters of one procedural scene.
fn desk_scenario(index: usize, rng: &mut ChaCha8Rng) -> Scenario {
    let lw = 3.5;
    let two = rng.random_bool(0.5);
    let top = if two { 1.5 * lw } else { 0.5 * lw };
    let (x0, x1) = (-10.0, 100.0);
    let rect = |xa: f64, xb: f64, ya: f64, yb: f64| vec![[xa, ya], [xb, ya], [xb, yb], [xa, yb]];
    let mut lanes = vec![Lane { centerline: vec![[x0, 0.0], [x1, 0.0]], width: lw }];
    let mut markings = vec![];
    let mut zones = vec![
        Zone { label: "sidewalk".into(), polygon: rect(x0, x1, -0.5 * lw - 2.75, -0.5 * lw) },
        Zone { label: "sidewalk".into(), polygon: rect(x0, x1, top, top + 2.75) },
    ];
    if two {
        lanes.push(Lane { centerline: vec![[x0, lw], [x1, lw]], width: lw });
        if rng.random_bool(0.5) {
            let xs = rng.random_range(0.0..30.0);
            markings.push(Marking { kind: MarkingKind::Dashed, points: vec![[x0, 0.5 * lw], [xs, 0.5 * lw]] });
            markings.push(Marking { kind: MarkingKind::Solid, points: vec![[xs, 0.5 * lw], [x1, 0.5 * lw]] });
        } else {
            markings.push(Marking { kind: MarkingKind::Dashed, points: vec![[x0, 0.5 * lw], [x1, 0.5 * lw]] });
        }
    }
    let lane_y = if two && rng.random_bool(0.5) { lw } else { 0.0 };
    let speed = rng.random_range(3.0..16.0);
    let ego_init = EgoState {
        position: [0.0, lane_y + rng.random_range(-0.3..0.3)],
        heading: rng.random_range(-0.04..0.04),
        speed,
        accel: 0.0,
    };
    let sidewalk_y = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { -0.5 * lw - 1.35 } else { top + 1.35 };
    let mut agents = vec![];
    let ped = |id: String, c: [f64; 2]| AgentSpec {
        id,
        label: "pedestrian".into(),
        center: c,
        size: [0.6, 0.6],
        yaw: 0.0,
        velocity: [0.0, 0.0],
        script: vec![],
    };
    let water = rng.random_bool(0.45).then(|| {
        let xa = rng.random_range(8.0..40.0);
        (xa, xa + rng.random_range(6.0..14.0))
    });
    if let Some((xa, xb)) = water {
        zones.push(Zone { label: "water".into(), polygon: rect(xa, xb, lane_y - 0.5 * lw, lane_y + 0.5 * lw) });
        if rng.random_bool(0.6) {
            let y = sidewalk_y(rng);
            agents.push(ped("ped_water".into(), [0.5 * (xa + xb), y]));
        }
    }
    if rng.random_bool(0.3) {
        let x = rng.random_range(12.0..45.0);
        zones.push(Zone { label: "crosswalk".into(), polygon: rect(x - 2.0, x + 2.0, -0.5 * lw, top) });
        let y = rng.random_range(-0.5 * lw..top);
        agents.push(AgentSpec { velocity: [0.0, rng.random_range(-1.2..1.2)], ..ped("ped_cross".into(), [x, y]) });
    }
    for k in 0..rng.random_range(0..=2usize) {
        let c = [rng.random_range(5.0..60.0), sidewalk_y(rng)];
        agents.push(ped(format!("ped_{k}"), c));
    }
    if rng.random_bool(0.25) {
        let x = rng.random_range(10.0..40.0);
        markings.push(Marking { kind: MarkingKind::Stop, points: vec![[x, lane_y - 0.5 * lw], [x, lane_y + 0.5 * lw]] });
    }
    if rng.random_bool(0.45) {
        let truck = rng.random_bool(0.35);
        let (label, size) = if truck { ("truck", [8.0, 2.5]) } else { ("car", [4.5, 1.9]) };
        let x = rng.random_range(8.0..35.0);
        agents.push(AgentSpec {
            id: "lead".into(),
            label: label.into(),
            center: [x, lane_y],
            size,
            yaw: 0.0,
            velocity: [rng.random_range(0.0..speed.max(0.1)), 0.0],
            script: vec![],
        });
    }
    if two && rng.random_bool(0.3) {
        let other = lw - lane_y;
        agents.push(AgentSpec {
            id: "adjacent".into(),
            label: "car".into(),
            center: [rng.random_range(-5.0..30.0), other],
            size: [4.5, 1.9],
            yaw: 0.0,
            velocity: [rng.random_range(3.0..15.0), 0.0],
            script: vec![],
        });
    }
    let mut concepts = BTreeMap::new();
    let location = match rng.random_range(0..20) {
        0..=11 => "urban road",
        12..=16 => "expressway",
        _ => "tunnel",
    };
    concepts.insert("location".to_string(), location.to_string());
    if location == "expressway" {
        concepts.insert("speed_limit".into(), "22.2".into());
        concepts.insert("min_speed".into(), "11.1".into());
    } else if rng.random_bool(0.5) {
        let lim = ["8.3", "11.1", "13.9"][rng.random_range(0..3)];
        concepts.insert("speed_limit".into(), lim.into());
    }
    if rng.random_bool(0.4) {
        concepts.insert("weather".into(), "rain".into());
        concepts.insert("road_surface".into(), "wet".into());
    }
    Scenario {
        scenario_id: format!("desk_{index:03}"),
        description: String::new(),
        seed: index as u64,
        duration: 10.0,
        map: MapSpec {
            origin: [x0, -0.5 * lw - 4.0],
            width_m: x1 - x0,
            height_m: top + 0.5 * lw + 8.0,
            resolution: 0.5,
            lanes,
            markings,
            zones,
        },
        concepts,
        agents,
        ego_init,
        route: RouteSpec { name: "eastbound".into(), waypoints: vec![[0.0, lane_y], [90.0, lane_y]] },
        hidden: BTreeMap::new(),
        thresholds: Default::default(),
        nav_command: Default::default(),
        user_instruction: None,
        ego_script: vec![],
    }
}

/// `n` procedural street scenes, fully revealed, as seen at their first step.
pub fn desk_scenes(n: usize, seed: u64, dt: f64) -> Result<Vec<SceneSpec>, DatasetError> {
    (0..n)
        .map(|i| {
            let sc = desk_scenario(i, &mut rng_for(seed, "desk-scene", i as u64));
            let scene = Env::fully_revealed(&sc, dt)?.perceive();
            Ok(SceneSpec { scene_ref: sc.scenario_id.clone(), scene })
        })
        .collect()
}

/// Generate, annotate and package a desk dataset.
pub fn build_desk_dataset(
    n_scenes: usize,
    cfg: &DatasetConfig,
    knowledge: &Knowledge,
    seed: u64,
) -> Result<(Dataset, AnnotationReport, Vec<(String, String)>), DatasetError> {
    let scenes = desk_scenes(n_scenes, seed, cfg.planner.dt)?;
    let mut report = generate_samples(&scenes, knowledge, cfg, seed)?;
    let samples = std::mem::take(&mut report.samples);
    let failures = report.failures.clone();
    let (labeled, ann) = annotate(samples, &scenes, knowledge, &cfg.planner)?;
    Ok((Dataset::new(report, labeled, cfg, seed, &format!("desk:{n_scenes}")), ann, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_forest, load_corpus_dir};
    use crate::kgraph::{build_graph, Lexicon};
    use std::path::Path;

    fn knowledge() -> Knowledge {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus");
        let forest = build_forest(&load_corpus_dir(&dir).unwrap()).unwrap();
        let lex = Lexicon::driving_default();
        Knowledge::new(build_graph(&forest, &lex).unwrap(), lex)
    }

    fn small_cfg(per_scene: usize, negative_ratio: f64) -> DatasetConfig {
        DatasetConfig { per_scene, negative_ratio, ..Default::default() }
    }

    #[test]
    fn counts_and_provenance() {
        let k = knowledge();
        let scenes = desk_scenes(10, 3, 0.5).unwrap();
        let r = generate_samples(&scenes, &k, &small_cfg(20, 0.0), 3).unwrap();
        assert!(r.failures.is_empty());
        assert_eq!(r.samples.len(), 200);
        assert!(r.samples.iter().all(|s| s.provenance == Provenance::PlannerCandidate));
    }

    #[test]
    fn labels_match_basis_and_bands() {
        let k = knowledge();
        let cfg = small_cfg(12, 0.5);
        let (ds, ann, failures) = build_desk_dataset(6, &cfg, &k, 11).unwrap();
        assert!(failures.is_empty());
        assert_eq!(ann.labeled, ds.samples.len());
        for s in &ds.samples {
            assert_eq!(s.labels.len(), s.basis.len());
            assert!(s.labels.iter().all(|l| (-1.0..=1.0).contains(l)));
        }
        assert!(ds.samples.iter().any(|s| s.provenance == Provenance::RandomNegative));
        let back = Dataset::from_jsonl(&ds.to_jsonl()).unwrap();
        assert_eq!(back, ds);
        let ex = ds.examples(&ds.samples);
        assert_eq!(ex.len(), ds.samples.len());
        assert_eq!(ex[0].x.ncols(), 64 + 32 + 64);
    }

    #[test]
    fn same_seed_same_file() {
        let k = knowledge();
        let cfg = small_cfg(6, 0.3);
        let a = build_desk_dataset(4, &cfg, &k, 9).unwrap().0;
        let b = build_desk_dataset(4, &cfg, &k, 9).unwrap().0;
        assert_eq!(a.file_hash(), b.file_hash());
        let c = build_desk_dataset(4, &cfg, &k, 10).unwrap().0;
        assert_ne!(a.file_hash(), c.file_hash());
    }

    fn stub(scene: &str, i: usize) -> PreferenceSample {
        PreferenceSample {
            sample_id: format!("{scene}-{i}"),
            scene_ref: scene.into(),
            trajectory: Trajectory { traj_id: i, dt: 0.5, points: vec![], maneuver_tag: String::new() },
            basis: vec![],
            future: FutureState { tokens: vec![], n_ego: 0, n_instances: 0, n_blocks: 0 },
            labels: vec![],
            provenance: Provenance::PlannerCandidate,
            query_tail: vec![],
        }
    }

    #[test]
    fn split_is_by_scene() {
        let samples: Vec<_> = (0..10).flat_map(|s| (0..3).map(move |i| stub(&format!("s{s}"), i))).collect();
        let (train, held) = split(&samples, 0.8, 1).unwrap();
        let tr: BTreeSet<_> = train.iter().map(|s| &s.scene_ref).collect();
        let he: BTreeSet<_> = held.iter().map(|s| &s.scene_ref).collect();
        assert_eq!((tr.len(), he.len()), (8, 2));
        assert!(tr.is_disjoint(&he));
        let (all, none) = split(&samples, 1.0, 1).unwrap();
        assert_eq!((all.len(), none.len()), (30, 0));
        assert!(matches!(split(&samples[..3], 0.8, 1), Err(DatasetError::TooFewScenes(1))));
    }

    #[test]
    fn empty_basis_is_dropped() {
        let k = knowledge();
        let scenes = desk_scenes(1, 0, 0.5).unwrap();
        let mut s = stub(&scenes[0].scene_ref, 0);
        s.trajectory = generate_candidates(&scenes[0].scene, 1, 0.0, 0, &PlannerConfig::default()).unwrap().remove(0);
        let (out, rep) = annotate(vec![s], &scenes, &k, &PlannerConfig::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(rep.dropped.len(), 1);
    }
}
