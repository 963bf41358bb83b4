//! Closed-loop 2D scenario environment.
//!
//! Each step: perceive (the scenario rasterized with unrevealed attributes
//! masked), retrieve, plan, score, select, then execute the first waypoint of
//! the chosen trajectory. Attributes named in a supplement request are
//! revealed one step later.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::OrientedBox;
use crate::kgraph::{KnowledgeGraph, Lexicon};
use crate::planner::{
    diversify, extrapolate, feedback_control, generate_candidates, nearest_lane_center, step_state, instance_class, rollout_controls, Maneuver, start_point, PlannerConfig, PlannerError,
    Trajectory,
};
use crate::retrieval::{RetrievalConfig, Retriever, SupplementRequest};
use crate::seed::{config_hash, derive_seed, sha256_hex};
use crate::text::normalize_term;
use crate::value::oracle::{compile_bindings, oracle_score, swept_boxes, ClauseBinding, Conclusion, RuleEvaluation, Trace};
use crate::value::{assess, select, ScorerWeights, ValueConfig, ValueError, ValueModel};
use crate::verbalizer::{EgoState, Instance, InstanceSource, NavCommand, SceneState, SemanticGrid, CONCEPT_KEYS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario `{id}`: {reason}")]
    InvalidScenario { id: String, reason: String },
    #[error("episode finished")]
    EpisodeFinished,
    #[error("unknown scenario `{id}`; available: {available}")]
    UnknownScenario { id: String, available: String },
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("scenario file {path}: {reason}")]
    Load { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingKind {
    Solid,
    Dashed,
    Stop,
}

impl MarkingKind {
    pub fn label(self) -> &'static str {
        match self {
            MarkingKind::Solid => "solid_line",
            MarkingKind::Dashed => "dashed_line",
            MarkingKind::Stop => "stop_line",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marking {
    pub kind: MarkingKind,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub label: String,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub origin: [f64; 2],
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub markings: Vec<Marking>,
    /// Painted in order over the lanes; later zones win.
    #[serde(default)]
    pub zones: Vec<Zone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityChange {
    pub at: f64,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub label: String,
    pub center: [f64; 2],
    pub size: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Scripted velocity changes, applied once `t >= at`.
    #[serde(default)]
    pub script: Vec<VelocityChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub name: String,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventThresholds {
    pub splash_speed: f64,
    pub splash_distance: f64,
}

impl Default for EventThresholds {
    fn default() -> Self {
        Self { splash_speed: 4.0, splash_distance: 3.0 }
    }
}

/// Hidden attribute values are `grid:<label>`, `concept:<key>=<value>` or
/// `agent:<id>`, keyed by the entity name whose request reveals them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration: f64,
    pub map: MapSpec,
    #[serde(default)]
    pub concepts: BTreeMap<String, String>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    pub ego_init: EgoState,
    pub route: RouteSpec,
    #[serde(default)]
    pub hidden: BTreeMap<String, String>,
    #[serde(default)]
    pub thresholds: EventThresholds,
    #[serde(default)]
    pub nav_command: NavCommand,
    #[serde(default)]
    pub user_instruction: Option<String>,
    /// `(acceleration, curvature)` per step for the replay policy.
    #[serde(default)]
    pub ego_script: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Hidden {
    Grid(String),
    Concept(String, String),
    Agent(String),
}

fn parse_hidden(v: &str) -> Option<Hidden> {
    let (kind, rest) = v.split_once(':')?;
    match kind {
        "grid" => Some(Hidden::Grid(rest.to_string())),
        "concept" => rest.split_once('=').map(|(k, v)| Hidden::Concept(k.to_string(), v.to_string())),
        "agent" => Some(Hidden::Agent(rest.to_string())),
        _ => None,
    }
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0) };
    let q = [a[0] + t * dx, a[1] + t * dy];
    ((p[0] - q[0]).hypot(p[1] - q[1]), t)
}

/// Distance to a polyline and the arclength of the closest point.
fn polyline_project(p: [f64; 2], line: &[[f64; 2]]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let mut acc = 0.0;
    for w in line.windows(2) {
        let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let (d, t) = seg_dist(p, w[0], w[1]);
        if d < best.0 {
            best = (d, acc + t * len);
        }
        acc += len;
    }
    if line.len() == 1 {
        best = ((p[0] - line[0][0]).hypot(p[1] - line[0][1]), 0.0);
    }
    best
}

fn polyline_length(line: &[[f64; 2]]) -> f64 {
    line.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}

pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
    }
    inside
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn polygon_is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

const DASH_ON_M: f64 = 3.0;
const DASH_PERIOD_M: f64 = 6.0;

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let err = |reason: String| SimError::Load { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let s = Self::from_json(&text).map_err(|e| err(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: String| SimError::InvalidScenario { id: self.scenario_id.clone(), reason };
        if !(self.duration > 0.0) {
            return Err(bad(format!("duration {}", self.duration)));
        }
        let m = &self.map;
        if !(m.resolution > 0.0 && m.width_m > 0.0 && m.height_m > 0.0) {
            return Err(bad("map extent and resolution must be positive".into()));
        }
        if m.lanes.is_empty() || m.lanes.iter().any(|l| l.centerline.len() < 2 || !(l.width > 0.0)) {
            return Err(bad("every lane needs a centerline of two or more points and a positive width".into()));
        }
        if let Some(z) = m.zones.iter().find(|z| !polygon_is_simple(&z.polygon)) {
            return Err(bad(format!("zone `{}` is not a simple polygon", z.label)));
        }
        if self.route.waypoints.len() < 2 {
            return Err(bad("route needs two or more waypoints".into()));
        }
        for w in &self.route.waypoints {
            if !m.lanes.iter().any(|l| polyline_project(*w, &l.centerline).0 <= l.width / 2.0 + 1e-9) {
                return Err(bad(format!("route waypoint {w:?} is off the lanes")));
            }
        }
        if let Some(k) = self.concepts.keys().find(|k| !CONCEPT_KEYS.contains(&k.as_str())) {
            return Err(bad(format!("unknown concept `{k}`")));
        }
        for (k, v) in &self.hidden {
            match parse_hidden(v) {
                None => return Err(bad(format!("hidden `{k}`: cannot parse `{v}`"))),
                Some(Hidden::Agent(id)) if !self.agents.iter().any(|a| a.id == id) => {
                    return Err(bad(format!("hidden `{k}` names unknown agent `{id}`")))
                }
                _ => {}
            }
        }
        if self.agents.iter().any(|a| !(a.size[0] > 0.0 && a.size[1] > 0.0)) {
            return Err(bad("agent sizes must be positive".into()));
        }
        Ok(())
    }

    fn hidden_entries(&self) -> Vec<(String, Hidden)> {
        self.hidden.iter().filter_map(|(k, v)| parse_hidden(v).map(|h| (normalize_term(k), h))).collect()
    }

    /// Rasterize the map, leaving out labels in `suppressed`.
    pub fn rasterize(&self, suppressed: &BTreeSet<String>) -> SemanticGrid {
        let m = &self.map;
        let w = (m.width_m / m.resolution).round() as usize;
        let h = (m.height_m / m.resolution).round() as usize;
        let mut g = SemanticGrid::new(w, h, m.resolution, m.origin);
        let half = m.resolution / 2.0 + 1e-9;
        for j in 0..h {
            for i in 0..w {
                let p = g.cell_center(i, j);
                let mut label: Option<&str> = None;
                if m.lanes.iter().any(|l| polyline_project(p, &l.centerline).0 <= l.width / 2.0 + 1e-9) {
                    label = Some(crate::verbalizer::DRIVABLE_LABEL);
                }
                for z in &m.zones {
                    if !suppressed.contains(&z.label) && point_in_polygon(p, &z.polygon) {
                        label = Some(&z.label);
                    }
                }
                for mk in &m.markings {
                    let l = mk.kind.label();
                    if suppressed.contains(l) {
                        continue;
                    }
                    let (d, s) = polyline_project(p, &mk.points);
                    let on = d <= half && (mk.kind != MarkingKind::Dashed || s.rem_euclid(DASH_PERIOD_M) < DASH_ON_M);
                    if on {
                        label = Some(l);
                    }
                }
                if let Some(l) = label {
                    g.set(i, j, l);
                }
            }
        }
        g
    }

    pub fn route_length(&self) -> f64 {
        polyline_length(&self.route.waypoints)
    }

    /// Fraction of the route covered at `p`.
    pub fn progress_at(&self, p: [f64; 2]) -> f64 {
        let len = self.route_length();
        if len <= 0.0 {
            return 1.0;
        }
        (polyline_project(p, &self.route.waypoints).1 / len).clamp(0.0, 1.0)
    }

    /// Metres along the route less metres away from it; the tie-break that
    /// prefers forward, route-hugging candidates among equally valued ones.
    pub fn centered_progress_m(&self, p: [f64; 2]) -> f64 {
        let (off, along) = polyline_project(p, &self.route.waypoints);
        along - off
    }

    fn in_zone(&self, label: &str, p: [f64; 2]) -> bool {
        self.map.zones.iter().any(|z| z.label == label && point_in_polygon(p, &z.polygon))
    }
}

/// Labels a vehicle may not occupy.
pub fn is_offroad(label: Option<&str>) -> bool {
    matches!(label, None | Some("empty" | "sidewalk" | "building" | "grass" | "barrier"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: String,
    pub label: String,
    pub center: [f64; 2],
    pub velocity: [f64; 2],
    pub size: [f64; 2],
    pub yaw: f64,
}

impl AgentState {
    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.center, self.size[0], self.size[1], self.yaw)
    }
}

/// World snapshot the event detectors read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub step: usize,
    pub t: f64,
    pub ego: EgoState,
    pub agents: Vec<AgentState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    Splash,
    SolidLineInTunnel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

/// Contact state carried between frames so each contact counts once, at its
/// onset.
#[derive(Debug, Clone, Default)]
pub struct DetectorState {
    colliding: BTreeSet<String>,
    splashing: bool,
    on_solid: bool,
}

fn lerp_agent(a: &AgentState, b: &AgentState, t: f64) -> OrientedBox {
    let c = [a.center[0] + t * (b.center[0] - a.center[0]), a.center[1] + t * (b.center[1] - a.center[1])];
    OrientedBox::new(c, b.size[0], b.size[1], b.yaw)
}

/// Events between two consecutive frames, judged on interpolated sub-steps.
pub fn detect_step(scenario: &Scenario, truth: &SemanticGrid, prev: &Frame, cur: &Frame, st: &mut DetectorState) -> Vec<Event> {
    let th = scenario.thresholds;
    let boxes = swept_boxes(&start_point(&prev.ego), &start_point(&cur.ego));
    let n = boxes.len() as f64;
    let mut out = Vec::new();
    let mut now_colliding = BTreeSet::new();
    let mut splash = false;
    let mut solid = false;
    let speed = prev.ego.speed.max(cur.ego.speed);
    for (s, ego) in boxes.iter().enumerate() {
        let tt = (s + 1) as f64 / n;
        for b in &cur.agents {
            let Some(a) = prev.agents.iter().find(|a| a.id == b.id) else { continue };
            let ab = lerp_agent(a, b, tt);
            if ego.overlaps(&ab) {
                now_colliding.insert(b.id.clone());
            }
        }
        if speed > th.splash_speed && ego.touches_label(truth, "water") {
            let near = cur.agents.iter().filter(|b| instance_class(&b.label) == 0).any(|b| {
                let a = prev.agents.iter().find(|a| a.id == b.id).unwrap_or(b);
                ego.clearance(&lerp_agent(a, b, tt)) <= th.splash_distance
            });
            splash |= near;
        }
        if ego.touches_label(truth, "solid_line") && scenario.in_zone("tunnel", ego.center) {
            solid = true;
        }
    }
    for id in &now_colliding {
        if !st.colliding.contains(id) {
            out.push(Event { step: cur.step, t: cur.t, kind: EventKind::Collision, detail: format!("contact with {id}") });
        }
    }
    if splash && !st.splashing {
        out.push(Event { step: cur.step, t: cur.t, kind: EventKind::Splash, detail: format!("through water at {speed:.1} m/s") });
    }
    if solid && !st.on_solid {
        out.push(Event { step: cur.step, t: cur.t, kind: EventKind::SolidLineInTunnel, detail: "footprint on solid line".into() });
    }
    st.colliding = now_colliding;
    st.splashing = splash;
    st.on_solid = solid;
    out
}

/// Every event of a recorded frame sequence.
pub fn detect_events(scenario: &Scenario, frames: &[Frame]) -> Vec<Event> {
    let truth = scenario.rasterize(&BTreeSet::new());
    let mut st = DetectorState::default();
    frames.windows(2).flat_map(|w| detect_step(scenario, &truth, &w[0], &w[1], &mut st)).collect()
}

pub struct Env<'a> {
    pub scenario: &'a Scenario,
    pub dt: f64,
    pub step: usize,
    pub t: f64,
    pub ego: EgoState,
    pub agents: Vec<AgentState>,
    pub revealed: BTreeSet<String>,
    pending: BTreeSet<String>,
    truth: SemanticGrid,
    perceived: SemanticGrid,
    detector: DetectorState,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    pub finished: bool,
}

impl<'a> Env<'a> {
    pub fn new(scenario: &'a Scenario, dt: f64) -> Result<Self, SimError> {
        scenario.validate()?;
        let agents: Vec<AgentState> = scenario
            .agents
            .iter()
            .map(|a| AgentState {
                id: a.id.clone(),
                label: a.label.clone(),
                center: a.center,
                velocity: a.velocity,
                size: a.size,
                yaw: a.yaw,
            })
            .collect();
        let truth = scenario.rasterize(&BTreeSet::new());
        let mut env = Self {
            scenario,
            dt,
            step: 0,
            t: 0.0,
            ego: scenario.ego_init,
            agents,
            revealed: BTreeSet::new(),
            pending: BTreeSet::new(),
            perceived: truth.clone(),
            truth,
            detector: DetectorState::default(),
            frames: vec![],
            events: vec![],
            finished: false,
        };
        env.apply_script();
        env.refresh_perception();
        env.frames.push(env.frame());
        Ok(env)
    }

    /// Environment with every hidden attribute already revealed.
    pub fn fully_revealed(scenario: &'a Scenario, dt: f64) -> Result<Self, SimError> {
        let mut env = Self::new(scenario, dt)?;
        env.revealed = scenario.hidden_entries().into_iter().map(|(k, _)| k).collect();
        env.refresh_perception();
        Ok(env)
    }

    fn frame(&self) -> Frame {
        Frame { step: self.step, t: self.t, ego: self.ego, agents: self.agents.clone() }
    }

    fn refresh_perception(&mut self) {
        let suppressed: BTreeSet<String> = self
            .scenario
            .hidden_entries()
            .into_iter()
            .filter(|(k, _)| !self.revealed.contains(k))
            .filter_map(|(_, h)| match h {
                Hidden::Grid(l) => Some(l),
                _ => None,
            })
            .collect();
        self.perceived = self.scenario.rasterize(&suppressed);
    }

    pub fn truth_grid(&self) -> &SemanticGrid {
        &self.truth
    }

    pub fn progress(&self) -> f64 {
        self.scenario.progress_at(self.ego.position)
    }

    /// Current observation.
    pub fn perceive(&self) -> SceneState {
        let entries = self.scenario.hidden_entries();
        let hidden_agents: BTreeSet<&str> = entries
            .iter()
            .filter(|(k, _)| !self.revealed.contains(k))
            .filter_map(|(_, h)| match h {
                Hidden::Agent(id) => Some(id.as_str()),
                _ => None,
            })
            .collect();
        let instances = self
            .agents
            .iter()
            .filter(|a| !hidden_agents.contains(a.id.as_str()))
            .map(|a| Instance {
                instance_id: a.id.clone(),
                label: a.label.clone(),
                source: InstanceSource::Specialized,
                center: a.center,
                size: a.size,
                yaw: a.yaw,
                velocity: a.velocity,
            })
            .collect();
        let mut concepts = self.scenario.concepts.clone();
        let mut hidden = BTreeMap::new();
        for (k, h) in &entries {
            if self.revealed.contains(k) {
                if let Hidden::Concept(ck, cv) = h {
                    concepts.insert(ck.clone(), cv.clone());
                }
            } else {
                hidden.insert(k.clone(), self.scenario.hidden[self.scenario.hidden.keys().find(|x| normalize_term(x) == *k).unwrap()].clone());
            }
        }
        SceneState {
            timestamp: self.t,
            ego: self.ego,
            instances,
            grid: self.perceived.clone(),
            concepts,
            nav_command: self.scenario.nav_command,
            route: Some(self.scenario.route.name.clone()),
            user_instruction: self.scenario.user_instruction.clone(),
            hidden,
            revealed: self.revealed.clone(),
        }
    }

    /// Queue reveals for requested items that match hidden attributes.
    /// Returns the matched keys.
    pub fn request(&mut self, req: &SupplementRequest) -> Vec<String> {
        let keys: BTreeSet<String> = self.scenario.hidden_entries().into_iter().map(|(k, _)| k).collect();
        let mut hit = Vec::new();
        for item in &req.items {
            let k = normalize_term(item);
            if keys.contains(&k) && !self.revealed.contains(&k) && self.pending.insert(k.clone()) {
                hit.push(k);
            }
        }
        hit
    }

    fn apply_script(&mut self) {
        for (a, spec) in self.agents.iter_mut().zip(&self.scenario.agents) {
            if let Some(c) = spec.script.iter().rfind(|c| c.at <= self.t + 1e-9) {
                a.velocity = c.velocity;
            }
            if a.velocity[0].hypot(a.velocity[1]) > 0.1 {
                a.yaw = a.velocity[1].atan2(a.velocity[0]);
            }
        }
    }

    /// Execute the first waypoint of `selected`, move the agents, detect
    /// events and apply reveals requested on the previous observation.
    pub fn step(&mut self, selected: &Trajectory) -> Result<SceneState, SimError> {
        if self.finished {
            return Err(SimError::EpisodeFinished);
        }
        let p = selected.points.first().copied().unwrap_or_else(|| start_point(&self.ego));
        let prev = self.frame();
        self.ego = EgoState { position: p.pos(), heading: p.heading, speed: p.speed, accel: (p.speed - self.ego.speed) / self.dt };
        for a in &mut self.agents {
            a.center = extrapolate(a.center, a.velocity, 1, self.dt);
        }
        self.step += 1;
        self.t = self.step as f64 * self.dt;
        self.apply_script();
        let cur = self.frame();
        let ev = detect_step(self.scenario, &self.truth, &prev, &cur, &mut self.detector);
        self.events.extend(ev);
        self.frames.push(cur);
        if !self.pending.is_empty() {
            self.revealed.append(&mut self.pending);
            self.refresh_perception();
        }
        if self.t >= self.scenario.duration - 1e-9 || self.progress() >= 0.999 {
            self.finished = true;
        }
        Ok(self.perceive())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Knowval,
    ProgressMax,
    ScriptedReplay,
}

impl Policy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "knowval" => Some(Self::Knowval),
            "progress_max" => Some(Self::ProgressMax),
            "scripted_replay" => Some(Self::ScriptedReplay),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Knowval => "knowval",
            Self::ProgressMax => "progress_max",
            Self::ScriptedReplay => "scripted_replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SimConfig {
    pub planner: PlannerConfig,
    pub value: ValueConfig,
    pub retrieval: RetrievalConfig,
}

impl SimConfig {
    /// Copy of the config with the shared counts taken from `value`.
    pub fn synced(&self) -> Self {
        let mut c = self.clone();
        c.planner.n_t = c.value.n_t;
        c.planner.tau = c.value.tau;
        c.retrieval.n_k = c.value.n_k;
        c
    }
}

/// Graph, lexicon and compiled clause bindings shared by all episodes.
pub struct Knowledge {
    pub graph: KnowledgeGraph,
    pub lexicon: Lexicon,
    pub bindings: BTreeMap<String, ClauseBinding>,
}

impl Knowledge {
    pub fn new(graph: KnowledgeGraph, lexicon: Lexicon) -> Self {
        let bindings = compile_bindings(&graph);
        Self { graph, lexicon, bindings }
    }
}

/// Re-add, under fresh ids, the unperturbed library maneuvers that
/// diversification moved. At low speed the spreading pushes the braking
/// maneuvers into faster shapes, which would leave no way to stop.
pub fn with_fallbacks(raw: &[Trajectory], diversified: &mut Vec<Trajectory>) {
    let mut next = diversified.iter().map(|t| t.traj_id + 1).max().unwrap_or(0);
    for r in raw.iter().filter(|t| !t.maneuver_tag.contains('~')) {
        let moved = diversified
            .iter()
            .find(|d| d.traj_id == r.traj_id)
            .is_none_or(|d| d.points.iter().zip(&r.points).any(|(a, b)| (a.x - b.x).hypot(a.y - b.y) > 1e-9));
        if moved {
            diversified.push(Trajectory { traj_id: next, ..r.clone() });
            next += 1;
        }
    }
}

/// The previous plan advanced one step: its remaining waypoints plus one more
/// that holds speed and steers back to the nearest lane center.
pub fn carried_plan(prev: &Trajectory, traj_id: usize, cfg: &PlannerConfig) -> Option<Trajectory> {
    if prev.points.len() < 2 {
        return None;
    }
    let mut points = prev.points[1..].to_vec();
    let last = *points.last().expect("non-empty");
    let (a, kappa) = feedback_control(&last, nearest_lane_center(last.y, cfg), last.speed, cfg.a_comfort, cfg);
    points.push(step_state(&last, a, kappa, cfg));
    Some(Trajectory { traj_id, dt: prev.dt, points, maneuver_tag: "carry".into() })
}

/// Whether `traj` stays on the road and clear of predicted agent boxes.
pub fn admissible(scene: &SceneState, traj: &Trajectory) -> bool {
    let mut prev = start_point(&scene.ego);
    for (k, p) in traj.points.iter().enumerate() {
        for b in swept_boxes(&prev, p) {
            if b.sample_points().into_iter().any(|q| is_offroad(scene.grid.label_at(q))) {
                return false;
            }
        }
        let ego = OrientedBox::ego(p.pos(), p.heading);
        for i in &scene.instances {
            let c = extrapolate(i.center, i.velocity, k + 1, traj.dt);
            if ego.overlaps(&OrientedBox::new(c, i.size[0], i.size[1], i.yaw)) {
                return false;
            }
        }
        prev = *p;
    }
    true
}

/// Admissible candidates, or all of them if none is.
pub fn filter_candidates(scene: &SceneState, trajs: Vec<Trajectory>) -> Vec<Trajectory> {
    let kept: Vec<Trajectory> = trajs.iter().filter(|t| admissible(scene, t)).cloned().collect();
    if kept.is_empty() {
        trajs
    } else {
        kept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub ego: EgoState,
    pub selected: usize,
    pub maneuver_tag: String,
    pub total: f64,
    pub n_candidates: usize,
    pub n_admissible: usize,
    pub top_clauses: Vec<String>,
    pub supplement: Vec<String>,
    pub reveal_queued: Vec<String>,
    pub revealed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub scenario_id: String,
    pub policy: Policy,
    pub seed: u64,
    pub config_hash: String,
    pub steps: usize,
    pub collisions: usize,
    pub splash_events: usize,
    pub solid_line_crossings_in_tunnel: usize,
    pub route_progress: f64,
    pub mean_total_score: f64,
    pub trace_hash: String,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub records: Vec<StepRecord>,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    /// Candidates and the selected id at every step, for rendering.
    pub plans: Vec<(SceneState, Vec<Trajectory>, usize)>,
}

impl Episode {
    /// One JSON record per step, then one per event.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

fn scripted(env: &Env<'_>, cfg: &PlannerConfig) -> Trajectory {
    let start = start_point(&env.ego);
    let controls: Vec<(f64, f64)> = (0..cfg.horizon)
        .map(|k| env.scenario.ego_script.get(env.step + k).map_or((0.0, 0.0), |c| (c[0], c[1])))
        .collect();
    Trajectory { traj_id: 0, dt: cfg.dt, points: rollout_controls(&start, &controls, cfg), maneuver_tag: "scripted".into() }
}

/// Run one episode to completion.
pub fn run_episode(
    scenario: &Scenario,
    policy: Policy,
    seed: u64,
    cfg: &SimConfig,
    knowledge: &Knowledge,
    weights: Option<&ScorerWeights>,
    keep_plans: bool,
) -> Result<Episode, SimError> {
    let cfg = cfg.synced();
    cfg.value.validate()?;
    let pc = &cfg.planner;
    let mut env = Env::new(scenario, pc.dt)?;
    let retriever = Retriever::new(&knowledge.graph, &knowledge.lexicon, cfg.retrieval.clone());
    let mut scene = env.perceive();
    let mut previous: Option<Trajectory> = None;
    let mut records = Vec::new();
    let mut plans = Vec::new();
    let mut totals = Vec::new();
    while !env.finished {
        let retrieval = retriever.retrieve(&scene);
        let terms = crate::retrieval::scene_terms(&scene, &knowledge.lexicon);
        let model = match weights {
            Some(w) => ValueModel::Learned(w),
            None => ValueModel::Oracle { bindings: &knowledge.bindings, scene_terms: &terms },
        };
        let (cands, chosen, total, n_cands) = match policy {
            Policy::ScriptedReplay => {
                let t = scripted(&env, pc);
                let a = assess(&scene, std::slice::from_ref(&t), &retrieval.items, &model, &cfg.value, pc)?;
                (vec![t], 0, a[0].total, 1)
            }
            Policy::Knowval | Policy::ProgressMax => {
                let step_seed = derive_seed(seed, "planner", env.step as u64);
                let raw = generate_candidates(&scene, pc.n_t, pc.noise_scale, step_seed, pc)?;
                let start = start_point(&scene.ego);
                let (mut div, _) = diversify(&start, &raw, pc.tau, pc.diversify_iters, pc.diversify_step, pc)?;
                with_fallbacks(&raw, &mut div);
                if policy == Policy::Knowval {
                    let id = div.iter().map(|t| t.traj_id + 1).max().unwrap_or(0);
                    div.extend(previous.as_ref().and_then(|p| carried_plan(p, id, pc)));
                }
                let n = div.len();
                let cands = filter_candidates(&scene, div);
                let mut assessments = assess(&scene, &cands, &retrieval.items, &model, &cfg.value, pc)?;
                let chosen = if policy == Policy::Knowval {
                    let progress = |t: &Trajectory| scenario.centered_progress_m(t.final_point().pos());
                    select(&mut assessments, &cands, previous.as_ref(), Some(&progress))?
                } else {
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    for t in &cands {
                        let p = scenario.progress_at(t.final_point().pos());
                        if p > best.0 + 1e-12 || ((p - best.0).abs() <= 1e-12 && t.traj_id < best.1) {
                            best = (p, t.traj_id);
                        }
                    }
                    best.1
                };
                let total = assessments.iter().find(|a| a.traj_id == chosen).map_or(0.0, |a| a.total);
                (cands, chosen, total, n)
            }
        };
        let supplement = if policy == Policy::Knowval { retrieval.supplement.clone() } else { SupplementRequest::default() };
        let queued = env.request(&supplement);
        let sel = cands.iter().find(|t| t.traj_id == chosen).cloned().expect("chosen id is a candidate");
        records.push(StepRecord {
            step: env.step,
            t: env.t,
            ego: env.ego,
            selected: chosen,
            maneuver_tag: sel.maneuver_tag.clone(),
            total,
            n_candidates: n_cands,
            n_admissible: cands.len(),
            top_clauses: retrieval.items.iter().take(3).map(|i| i.clause_id.clone()).collect(),
            supplement: supplement.items.clone(),
            reveal_queued: queued,
            revealed: env.revealed.iter().cloned().collect(),
        });
        totals.push(total);
        if keep_plans {
            plans.push((scene.clone(), cands, chosen));
        }
        scene = env.step(&sel)?;
        previous = Some(sel);
    }
    let count = |k: EventKind| env.events.iter().filter(|e| e.kind == k).count();
    let mut episode = Episode {
        metrics: EpisodeMetrics {
            scenario_id: scenario.scenario_id.clone(),
            policy,
            seed,
            config_hash: config_hash(&cfg),
            steps: env.step,
            collisions: count(EventKind::Collision),
            splash_events: count(EventKind::Splash),
            solid_line_crossings_in_tunnel: count(EventKind::SolidLineInTunnel),
            route_progress: env.progress(),
            mean_total_score: if totals.is_empty() { 0.0 } else { totals.iter().sum::<f64>() / totals.len() as f64 },
            trace_hash: String::new(),
        },
        records,
        frames: env.frames.clone(),
        events: env.events.clone(),
        plans,
    };
    episode.metrics.trace_hash = sha256_hex(episode.trace_jsonl().as_bytes())[..16].to_string();
    Ok(episode)
}

pub const METRICS_CSV_HEADER: &str =
    "scenario_id,policy,seed,config_hash,steps,collisions,splash_events,solid_line_crossings_in_tunnel,route_progress,mean_total_score,trace_hash";

pub fn metrics_csv_row(m: &EpisodeMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{:.4},{:.4},{}",
        m.scenario_id,
        m.policy.as_str(),
        m.seed,
        m.config_hash,
        m.steps,
        m.collisions,
        m.splash_events,
        m.solid_line_crossings_in_tunnel,
        m.route_progress,
        m.mean_total_score,
        m.trace_hash
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub gammas: Vec<f64>,
    pub n_ks: Vec<usize>,
    pub n_ts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario_id: String,
    pub policy: Policy,
    pub gamma: f64,
    pub n_k: usize,
    pub n_t: usize,
    pub episodes: usize,
    pub collisions: usize,
    pub splash_events: usize,
    pub solid_line_crossings_in_tunnel: usize,
    pub mean_progress: f64,
    pub mean_total_score: f64,
}

impl SweepRow {
    pub fn violations(&self) -> usize {
        self.collisions + self.splash_events + self.solid_line_crossings_in_tunnel
    }
}

/// Every (scenario, policy, gamma, n_k, n_t) combination over all seeds, run
/// in parallel; rows come back in that nested order.
pub fn sweep(
    scenarios: &[Scenario],
    spec: &SweepSpec,
    base: &SimConfig,
    knowledge: &Knowledge,
    weights: Option<&ScorerWeights>,
) -> Result<Vec<SweepRow>, SimError> {
    let mut combos = Vec::new();
    for s in scenarios {
        for &p in &spec.policies {
            for &g in &spec.gammas {
                for &nk in &spec.n_ks {
                    for &nt in &spec.n_ts {
                        combos.push((s, p, g, nk, nt));
                    }
                }
            }
        }
    }
    let rows: Vec<Result<SweepRow, SimError>> = combos
        .par_iter()
        .map(|&(s, p, g, nk, nt)| {
            let mut cfg = base.clone();
            cfg.value.gamma = g;
            cfg.value.n_k = nk;
            cfg.value.n_t = nt;
            let mut row = SweepRow {
                scenario_id: s.scenario_id.clone(),
                policy: p,
                gamma: g,
                n_k: nk,
                n_t: nt,
                episodes: 0,
                collisions: 0,
                splash_events: 0,
                solid_line_crossings_in_tunnel: 0,
                mean_progress: 0.0,
                mean_total_score: 0.0,
            };
            for &seed in &spec.seeds {
                let m = run_episode(s, p, seed, &cfg, knowledge, weights, false)?.metrics;
                row.episodes += 1;
                row.collisions += m.collisions;
                row.splash_events += m.splash_events;
                row.solid_line_crossings_in_tunnel += m.solid_line_crossings_in_tunnel;
                row.mean_progress += m.route_progress;
                row.mean_total_score += m.mean_total_score;
            }
            let n = row.episodes.max(1) as f64;
            row.mean_progress /= n;
            row.mean_total_score /= n;
            Ok(row)
        })
        .collect();
    rows.into_iter().collect()
}

/// One `suite` row per (policy, gamma, n_k, n_t): counts summed over
/// scenarios, means weighted by episodes. Rows keep first-seen order.
pub fn suite_rows(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut out: Vec<SweepRow> = Vec::new();
    for r in rows {
        let same = |a: &SweepRow| a.policy == r.policy && a.gamma == r.gamma && a.n_k == r.n_k && a.n_t == r.n_t;
        let n = r.episodes as f64;
        match out.iter_mut().find(|a| same(a)) {
            Some(a) => {
                a.episodes += r.episodes;
                a.collisions += r.collisions;
                a.splash_events += r.splash_events;
                a.solid_line_crossings_in_tunnel += r.solid_line_crossings_in_tunnel;
                a.mean_progress += r.mean_progress * n;
                a.mean_total_score += r.mean_total_score * n;
            }
            None => out.push(SweepRow {
                scenario_id: "suite".into(),
                mean_progress: r.mean_progress * n,
                mean_total_score: r.mean_total_score * n,
                ..r.clone()
            }),
        }
    }
    for a in &mut out {
        let n = a.episodes.max(1) as f64;
        a.mean_progress /= n;
        a.mean_total_score /= n;
    }
    out
}

pub const SWEEP_CSV_HEADER: &str =
    "scenario_id,policy,gamma,n_k,n_t,episodes,collisions,splash_events,solid_line_crossings_in_tunnel,mean_progress,mean_total_score";

pub fn sweep_csv_row(r: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{:.4},{:.4}",
        r.scenario_id,
        r.policy.as_str(),
        r.gamma,
        r.n_k,
        r.n_t,
        r.episodes,
        r.collisions,
        r.splash_events,
        r.solid_line_crossings_in_tunnel,
        r.mean_progress,
        r.mean_total_score
    )
}

/// Load every `*.json` scenario in `dir`, sorted by id.
pub fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>, SimError> {
    let err = |reason: String| SimError::Load { path: dir.display().to_string(), reason };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    let mut out: Vec<Scenario> = paths.iter().map(|p| Scenario::load(p)).collect::<Result<_, _>>()?;
    out.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    Ok(out)
}

/// Look up a scenario by id or by file path.
pub fn find_scenario(dir: &Path, id_or_path: &str) -> Result<Scenario, SimError> {
    let p = Path::new(id_or_path);
    if p.extension().and_then(|e| e.to_str()) == Some("json") && p.exists() {
        return Scenario::load(p);
    }
    let all = load_scenario_dir(dir)?;
    let available = all.iter().map(|s| s.scenario_id.as_str()).collect::<Vec<_>>().join(", ");
    all.iter()
        .find(|s| s.scenario_id == id_or_path)
        .cloned()
        .ok_or(SimError::UnknownScenario { id: id_or_path.to_string(), available })
}

fn label_color(label: &str) -> &'static str {
    match label {
        "drivable" => "#d9d9d9",
        "tunnel" => "#b3b3b3",
        "water" => "#6fa8dc",
        "solid_line" => "#ffffff",
        "dashed_line" => "#f2f2f2",
        "stop_line" => "#ffffff",
        "crosswalk" => "#ffe599",
        "sidewalk" => "#c9b79c",
        _ => "#93c47d",
    }
}

/// Top-down SVG of one observation with candidate trajectories; the selected
/// one is drawn thick. One SVG unit is one decimeter, y up.
pub fn render_svg(scene: &SceneState, trajs: &[Trajectory], selected: Option<usize>) -> String {
    let g = &scene.grid;
    let s = 10.0;
    let (w, h) = (g.width as f64 * g.resolution * s, g.height as f64 * g.resolution * s);
    let tx = |x: f64| (x - g.origin[0]) * s;
    let ty = |y: f64| h - (y - g.origin[1]) * s;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    let _ = writeln!(out, r##"<rect width="{w:.0}" height="{h:.0}" fill="#93c47d"/>"##);
    let cell = g.resolution * s;
    for j in 0..g.height {
        for i in 0..g.width {
            let l = g.label(i, j);
            if l == "empty" {
                continue;
            }
            let c = g.cell_center(i, j);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}"/>"#,
                tx(c[0]) - cell / 2.0,
                ty(c[1]) - cell / 2.0,
                label_color(l)
            );
        }
    }
    let poly = |b: &OrientedBox| b.corners().iter().map(|p| format!("{:.1},{:.1}", tx(p[0]), ty(p[1]))).collect::<Vec<_>>().join(" ");
    for i in &scene.instances {
        let color = match instance_class(&i.label) {
            0 => "#cc0000",
            2 => "#7f6000",
            _ => "#1155cc",
        };
        let b = OrientedBox::new(i.center, i.size[0], i.size[1], i.yaw);
        let _ = writeln!(out, r#"<polygon points="{}" fill="{color}"><title>{}</title></polygon>"#, poly(&b), i.label);
    }
    for t in trajs {
        let mut pts = vec![format!("{:.1},{:.1}", tx(scene.ego.position[0]), ty(scene.ego.position[1]))];
        pts.extend(t.points.iter().map(|p| format!("{:.1},{:.1}", tx(p.x), ty(p.y))));
        let (width, color) = if Some(t.traj_id) == selected { (4.0, "#e69138") } else { (1.0, "#666666") };
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#, pts.join(" "));
    }
    let ego = OrientedBox::ego(scene.ego.position, scene.ego.heading);
    let _ = writeln!(out, r##"<polygon points="{}" fill="#000000"/>"##, poly(&ego));
    out.push_str("</svg>\n");
    out
}

/// Expected oracle outcome for one fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedEvaluation {
    pub conclusion: Conclusion,
    pub min_score: f64,
    pub max_score: f64,
}

/// A scene, one library maneuver and one clause whose oracle verdict is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub fixture_id: String,
    pub scenario: Scenario,
    pub maneuver: String,
    pub clause_id: String,
    pub expect: ExpectedEvaluation,
}

impl OracleFixture {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let err = |reason: String| SimError::Load { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let f: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        f.scenario.validate()?;
        Ok(f)
    }

    /// Oracle verdict of the fixture's maneuver, planned without noise from
    /// the fully revealed initial scene.
    pub fn evaluate(&self, knowledge: &Knowledge, cfg: &PlannerConfig) -> Result<RuleEvaluation, SimError> {
        let env = Env::fully_revealed(&self.scenario, cfg.dt)?;
        let scene = env.perceive();
        let cands = generate_candidates(&scene, Maneuver::LIBRARY.len(), 0.0, self.scenario.seed, cfg)?;
        let traj = cands.iter().find(|t| t.maneuver_tag == self.maneuver).ok_or_else(|| SimError::InvalidScenario {
            id: self.fixture_id.clone(),
            reason: format!("unknown maneuver `{}`", self.maneuver),
        })?;
        let terms = crate::retrieval::scene_terms(&scene, &knowledge.lexicon);
        let trace = Trace::new(&scene, traj, cfg);
        Ok(oracle_score(&trace, &self.clause_id, knowledge.bindings.get(&self.clause_id), &terms))
    }

    pub fn matches(&self, e: &RuleEvaluation) -> bool {
        e.conclusion == self.expect.conclusion && e.score >= self.expect.min_score && e.score <= self.expect.max_score
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_road(len: f64) -> MapSpec {
        MapSpec {
            origin: [-10.0, -8.0],
            width_m: len + 20.0,
            height_m: 16.0,
            resolution: 0.5,
            lanes: vec![Lane { centerline: vec![[-10.0, 0.0], [len + 10.0, 0.0]], width: 3.5 }],
            markings: vec![],
            zones: vec![],
        }
    }

    fn scenario(agents: Vec<AgentSpec>) -> Scenario {
        Scenario {
            scenario_id: "t".into(),
            description: String::new(),
            seed: 1,
            duration: 10.0,
            map: straight_road(100.0),
            concepts: BTreeMap::new(),
            agents,
            ego_init: EgoState { position: [0.0, 0.0], heading: 0.0, speed: 0.0, accel: 0.0 },
            route: RouteSpec { name: "east".into(), waypoints: vec![[0.0, 0.0], [100.0, 0.0]] },
            hidden: BTreeMap::new(),
            thresholds: EventThresholds::default(),
            nav_command: NavCommand::Keep,
            user_instruction: None,
            ego_script: vec![],
        }
    }

    fn frame(step: usize, x: f64, speed: f64, agents: Vec<AgentState>) -> Frame {
        Frame { step, t: step as f64 * 0.5, ego: EgoState { position: [x, 0.0], heading: 0.0, speed, accel: 0.0 }, agents }
    }

    fn agent(id: &str, label: &str, c: [f64; 2]) -> AgentState {
        AgentState { id: id.into(), label: label.into(), center: c, velocity: [0.0, 0.0], size: [0.6, 0.6], yaw: 0.0 }
    }

    #[test]
    fn stationary_ego_has_no_events() {
        let s = scenario(vec![]);
        let frames: Vec<Frame> = (0..20).map(|k| frame(k, 0.0, 0.0, vec![])).collect();
        assert!(detect_events(&s, &frames).is_empty());
    }

    #[test]
    fn overlap_counted_once_at_onset() {
        let s = scenario(vec![]);
        let ped = agent("p", "pedestrian", [20.0, 0.0]);
        // ego front reaches the pedestrian between steps 6 and 7
        let frames: Vec<Frame> = (0..12).map(|k| frame(k, (k as f64 * 2.5).min(18.0), 5.0, vec![ped.clone()])).collect();
        let ev = detect_events(&s, &frames);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Collision);
        assert_eq!(ev[0].step, 7);
    }

    #[test]
    fn splash_needs_speed_above_threshold() {
        let mut s = scenario(vec![]);
        s.map.zones.push(Zone { label: "water".into(), polygon: vec![[10.0, -1.75], [30.0, -1.75], [30.0, 1.75], [10.0, 1.75]] });
        let ped = agent("p", "pedestrian", [20.0, -3.5]);
        let slow: Vec<Frame> = (0..20).map(|k| frame(k, k as f64 * 1.5, 3.0, vec![ped.clone()])).collect();
        assert!(detect_events(&s, &slow).is_empty());
        let fast: Vec<Frame> = (0..10).map(|k| frame(k, k as f64 * 4.0, 8.0, vec![ped.clone()])).collect();
        let ev = detect_events(&s, &fast);
        assert_eq!(ev.iter().filter(|e| e.kind == EventKind::Splash).count(), 1);
    }

    #[test]
    fn hidden_line_revealed_one_step_after_request() {
        let mut s = scenario(vec![]);
        s.map.markings.push(Marking { kind: MarkingKind::Solid, points: vec![[0.0, 1.75], [100.0, 1.75]] });
        s.hidden.insert("solid line".into(), "grid:solid_line".into());
        let mut env = Env::new(&s, 0.5).unwrap();
        let scene = env.perceive();
        assert!(!scene.grid.present_labels().contains("solid_line"));
        assert!(env.truth_grid().present_labels().contains("solid_line"));
        let queued = env.request(&SupplementRequest { items: vec!["solid lines".into()] });
        assert_eq!(queued, vec!["solid line".to_string()]);
        let stay = Trajectory {
            traj_id: 0,
            dt: 0.5,
            points: vec![start_point(&env.ego); 6],
            maneuver_tag: "hold".into(),
        };
        let next = env.step(&stay).unwrap();
        assert!(next.grid.present_labels().contains("solid_line"));
        assert!(next.revealed.contains("solid line"));
        assert!(next.hidden.is_empty());
    }

    #[test]
    fn stepping_past_duration_fails() {
        let mut s = scenario(vec![]);
        s.duration = 1.0;
        let mut env = Env::new(&s, 0.5).unwrap();
        let stay = Trajectory { traj_id: 0, dt: 0.5, points: vec![start_point(&env.ego); 6], maneuver_tag: "hold".into() };
        env.step(&stay).unwrap();
        env.step(&stay).unwrap();
        assert!(env.finished);
        assert!(matches!(env.step(&stay), Err(SimError::EpisodeFinished)));
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = scenario(vec![]);
        s.duration = 0.0;
        assert!(s.validate().is_err());
        let mut s = scenario(vec![]);
        s.route.waypoints = vec![[0.0, 0.0], [50.0, 6.0]];
        assert!(s.validate().is_err());
        let mut s = scenario(vec![]);
        s.map.zones.push(Zone { label: "water".into(), polygon: vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]] });
        assert!(s.validate().is_err());
    }

    #[test]
    fn dashed_lines_have_gaps() {
        let mut s = scenario(vec![]);
        s.map.markings.push(Marking { kind: MarkingKind::Dashed, points: vec![[0.0, 1.75], [60.0, 1.75]] });
        let g = s.rasterize(&BTreeSet::new());
        assert_eq!(g.label_at([1.0, 1.75]), Some("dashed_line"));
        assert_eq!(g.label_at([4.0, 1.75]), Some("drivable"));
    }
}
