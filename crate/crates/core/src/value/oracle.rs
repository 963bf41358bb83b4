//! Rule engine that scores one trajectory against one clause.
//!
//! A clause is compiled into a [`ClauseBinding`]: the scene terms that make it
//! applicable and the measurable predicates it implies. Evaluation follows a
//! fixed four-step order:
//!
//! 1. no applicability term present in the scene → not applicable, 1.0;
//! 2. no predicate measurable on the trace → applicable without evidence, 0.0;
//! 3. every measured predicate within its threshold → adherence, 1.0;
//! 4. otherwise the worst violation sets the risk level and the score is the
//!    midpoint of that level's band.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geom::OrientedBox;
use crate::kgraph::{EntityCategory, KnowledgeGraph};
use crate::planner::{extrapolate, instance_class, PlannerConfig, TrajPoint, Trajectory};
use crate::verbalizer::{connected_blocks, default_radius, SceneState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Conclusion {
    NotApplicable,
    ApplicableNoEvidence,
    PerfectAdherence,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Risk {
    NA,
    Negligible,
    Low,
    Moderate,
    High,
}

impl Risk {
    /// Inclusive score band of a violation at this level.
    pub fn band(self) -> (f64, f64) {
        match self {
            Risk::NA => (1.0, 1.0),
            Risk::Negligible => (-0.2, -0.1),
            Risk::Low => (-0.4, -0.3),
            Risk::Moderate => (-0.7, -0.5),
            Risk::High => (-1.0, -0.8),
        }
    }

    pub fn midpoint(self) -> f64 {
        match self {
            Risk::NA => 1.0,
            Risk::Negligible => -0.15,
            Risk::Low => -0.35,
            Risk::Moderate => -0.6,
            Risk::High => -0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    pub traj_id: usize,
    pub clause_id: String,
    pub conclusion: Conclusion,
    pub risk: Risk,
    pub score: f64,
    pub evidence: Vec<(String, f64)>,
}

impl RuleEvaluation {
    /// Whether the score sits in the band its conclusion and risk demand.
    pub fn in_band(&self) -> bool {
        let s = self.score;
        match self.conclusion {
            Conclusion::NotApplicable | Conclusion::PerfectAdherence => s == 1.0,
            Conclusion::ApplicableNoEvidence => s == 0.0,
            Conclusion::Violation => {
                let (lo, hi) = self.risk.band();
                self.risk != Risk::NA && s >= lo && s <= hi
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateKind {
    FollowingGapS,
    DistToPedestrianM,
    SpeedInWaterMps,
    CrossesSolidLine,
    StopsAtStopLine,
    LaneChangeSignaled,
    DistToHeavyVehicleM,
    SpeedVsLimitMps,
}

impl PredicateKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::FollowingGapS => "following_gap_s",
            Self::DistToPedestrianM => "dist_to_pedestrian_m",
            Self::SpeedInWaterMps => "speed_in_water_mps",
            Self::CrossesSolidLine => "crosses_solid_line",
            Self::StopsAtStopLine => "stops_at_stop_line",
            Self::LaneChangeSignaled => "lane_change_signaled",
            Self::DistToHeavyVehicleM => "dist_to_heavy_vehicle_m",
            Self::SpeedVsLimitMps => "speed_vs_limit_mps",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Fixed(f64),
    /// Numeric scene concept, e.g. `speed_limit`.
    Concept(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub kind: PredicateKind,
    pub direction: Direction,
    pub threshold: Threshold,
    /// How far past the threshold a value must be for High, Moderate and Low
    /// risk; anything closer is Negligible.
    pub margins: [f64; 3],
    /// Risk of any violation, for boolean predicates.
    pub fixed_risk: Option<Risk>,
    /// Only water regions with a pedestrian nearby count.
    #[serde(default)]
    pub near_pedestrian: bool,
}

impl PredicateSpec {
    fn new(kind: PredicateKind, direction: Direction, threshold: f64, margins: [f64; 3]) -> Self {
        Self { kind, direction, threshold: Threshold::Fixed(threshold), margins, fixed_risk: None, near_pedestrian: false }
    }

    fn boolean(kind: PredicateKind, direction: Direction, risk: Risk) -> Self {
        Self { fixed_risk: Some(risk), ..Self::new(kind, direction, 0.5, [0.0; 3]) }
    }

    /// Risk of a measured value, or `None` if it satisfies the threshold.
    pub fn risk_of(&self, value: f64, threshold: f64) -> Option<Risk> {
        let excess = match self.direction {
            Direction::AtLeast => threshold - value,
            Direction::AtMost => value - threshold,
        };
        if excess <= 0.0 {
            return None;
        }
        if let Some(r) = self.fixed_risk {
            return Some(r);
        }
        Some(if excess > self.margins[0] {
            Risk::High
        } else if excess > self.margins[1] {
            Risk::Moderate
        } else if excess > self.margins[2] {
            Risk::Low
        } else {
            Risk::Negligible
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseBinding {
    pub clause_id: String,
    /// Scene terms that make the clause applicable; empty means always.
    pub applicability: BTreeSet<String>,
    pub predicates: Vec<PredicateSpec>,
}

/// Equipment of the ego vehicle itself; never a scene trigger.
const EGO_DEVICES: &[&str] = &["turn signal", "horn", "headlight"];
/// The ego is always in the scene, so naming it never narrows applicability.
const EGO_SUBJECT: &str = "vehicle";

/// Compile a clause and its linked entities into a binding. Returns `None`
/// when no predicate from the library applies.
pub fn compile_binding(g: &KnowledgeGraph, clause_id: &str) -> Option<ClauseBinding> {
    use Direction::*;
    use PredicateKind::*;
    let names: BTreeSet<&str> = g
        .neighbors(clause_id)
        .iter()
        .filter_map(|(n, _)| g.entities.get(n))
        .map(|e| e.name.as_str())
        .collect();
    let has = |xs: &[&str]| xs.iter().any(|x| names.contains(x));
    let mut preds = Vec::new();
    if has(&["following distance"]) {
        preds.push(PredicateSpec::new(FollowingGapS, AtLeast, 1.5, [1.0, 0.5, 0.1]));
    }
    let pedestrian = has(&["pedestrian", "child", "vulnerable road user", "crosswalk"]);
    if pedestrian {
        preds.push(PredicateSpec::new(DistToPedestrianM, AtLeast, 2.0, [1.0, 0.5, 0.2]));
    }
    if has(&["standing water"]) {
        let mut p = PredicateSpec::new(SpeedInWaterMps, AtMost, 4.0, [4.0, 2.0, 0.5]);
        p.near_pedestrian = pedestrian;
        preds.push(p);
    }
    if has(&["solid line"]) {
        preds.push(PredicateSpec::boolean(CrossesSolidLine, AtMost, Risk::High));
    }
    if has(&["stop line", "stop sign", "railroad crossing"]) {
        preds.push(PredicateSpec::new(StopsAtStopLine, AtMost, 0.5, [4.5, 1.5, 0.5]));
    }
    if has(&["turn signal"]) && has(&["lane change", "overtake", "merging", "turning"]) {
        preds.push(PredicateSpec::boolean(LaneChangeSignaled, AtLeast, Risk::Moderate));
    }
    if has(&["truck", "heavy vehicle", "bus"]) {
        preds.push(PredicateSpec::new(DistToHeavyVehicleM, AtLeast, 5.0, [3.5, 2.0, 0.5]));
    }
    if has(&["speed limit"]) {
        preds.push(PredicateSpec {
            threshold: Threshold::Concept("speed_limit".into()),
            ..PredicateSpec::new(SpeedVsLimitMps, AtMost, 0.0, [8.0, 4.0, 1.0])
        });
    }
    if has(&["minimum speed"]) {
        preds.push(PredicateSpec {
            threshold: Threshold::Concept("min_speed".into()),
            ..PredicateSpec::new(SpeedVsLimitMps, AtLeast, 0.0, [8.0, 4.0, 1.0])
        });
    }
    if preds.is_empty() {
        return None;
    }
    let applicability = g
        .neighbors(clause_id)
        .iter()
        .filter_map(|(n, _)| g.entities.get(n))
        .filter(|e| e.category != EntityCategory::DrivingManeuver && e.name != EGO_SUBJECT && !EGO_DEVICES.contains(&e.name.as_str()))
        .map(|e| e.name.clone())
        .collect();
    Some(ClauseBinding { clause_id: clause_id.to_string(), applicability, predicates: preds })
}

pub fn compile_bindings(g: &KnowledgeGraph) -> std::collections::BTreeMap<String, ClauseBinding> {
    g.clause_ids().filter_map(|c| compile_binding(g, c).map(|b| (c.to_string(), b))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub label: String,
    pub class: usize,
    /// Box at each trajectory step.
    pub boxes: Vec<OrientedBox>,
    pub current: OrientedBox,
}

/// Everything the predicates measure: the ego path and the agents' predicted
/// boxes at the same timestamps.
#[derive(Debug, Clone)]
pub struct Trace<'a> {
    pub scene: &'a SceneState,
    pub traj_id: usize,
    pub maneuver_tag: String,
    pub start: TrajPoint,
    pub points: Vec<TrajPoint>,
    pub dt: f64,
    pub agents: Vec<AgentTrack>,
    pub lane_width: f64,
    pub lane_origin: f64,
}

/// Sub-steps per trajectory step for grid contact checks.
pub const SWEEP_SUBSTEPS: usize = 4;

/// Ego boxes interpolated between `a` and `b` (excluding `a`, including `b`).
pub fn swept_boxes(a: &TrajPoint, b: &TrajPoint) -> Vec<OrientedBox> {
    (1..=SWEEP_SUBSTEPS)
        .map(|s| {
            let t = s as f64 / SWEEP_SUBSTEPS as f64;
            let yaw = a.heading + t * crate::planner::wrap_angle(b.heading - a.heading);
            OrientedBox::ego([a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)], yaw)
        })
        .collect()
}

impl<'a> Trace<'a> {
    pub fn new(scene: &'a SceneState, traj: &Trajectory, cfg: &PlannerConfig) -> Self {
        let agents = scene
            .instances
            .iter()
            .map(|i| AgentTrack {
                label: i.label.clone(),
                class: instance_class(&i.label),
                boxes: (1..=traj.points.len())
                    .map(|k| OrientedBox::new(extrapolate(i.center, i.velocity, k, traj.dt), i.size[0], i.size[1], i.yaw))
                    .collect(),
                current: OrientedBox::new(i.center, i.size[0], i.size[1], i.yaw),
            })
            .collect();
        Self {
            scene,
            traj_id: traj.traj_id,
            maneuver_tag: traj.maneuver_tag.clone(),
            start: crate::planner::start_point(&scene.ego),
            points: traj.points.clone(),
            dt: traj.dt,
            agents,
            lane_width: cfg.lane_width,
            lane_origin: cfg.lane_origin,
        }
    }

    fn ego_box(&self, k: usize) -> OrientedBox {
        let p = &self.points[k];
        OrientedBox::ego([p.x, p.y], p.heading)
    }

    /// Swept boxes over the whole horizon with the step index they belong to.
    fn sweep(&self) -> Vec<(usize, OrientedBox)> {
        let mut prev = self.start;
        let mut out = Vec::new();
        for (k, p) in self.points.iter().enumerate() {
            out.extend(swept_boxes(&prev, p).into_iter().map(|b| (k, b)));
            prev = *p;
        }
        out
    }

    /// Boxes every 0.5 m up to `reach` meters past the final pose, along the
    /// overall start-to-end direction so a last-moment swerve cannot point the
    /// look-ahead away from the road.
    fn continuation(&self, reach: f64) -> Vec<OrientedBox> {
        let Some(last) = self.points.last() else { return vec![] };
        let (dx, dy) = (last.x - self.start.x, last.y - self.start.y);
        let dir = if dx.hypot(dy) >= 1.0 { dy.atan2(dx) } else { last.heading };
        let (s, c) = dir.sin_cos();
        (1..=(reach / 0.5) as usize).map(|i| OrientedBox::ego([last.x + c * i as f64 * 0.5, last.y + s * i as f64 * 0.5], dir)).collect()
    }
}

/// Look-ahead beyond the horizon for region predicates.
const CONTINUATION_REACH_M: f64 = 40.0;
const SPLASH_RADIUS_M: f64 = 3.0;

fn measure(spec: &PredicateSpec, t: &Trace<'_>) -> Option<f64> {
    let scene = t.scene;
    let moving = |k: usize| t.points[k].speed > 0.5;
    match spec.kind {
        PredicateKind::FollowingGapS => {
            let mut best: Option<f64> = None;
            for k in 0..t.points.len() {
                let ego = t.ego_box(k);
                let (s, c) = ego.yaw.sin_cos();
                for a in t.agents.iter().filter(|a| a.class == 1 || a.class == 2) {
                    let b = a.boxes[k];
                    let d = [b.center[0] - ego.center[0], b.center[1] - ego.center[1]];
                    let lon = d[0] * c + d[1] * s;
                    let lat = -d[0] * s + d[1] * c;
                    if lon <= 0.0 || lat.abs() > t.lane_width / 2.0 {
                        continue;
                    }
                    let gap = (lon - (ego.length + b.length) / 2.0).max(0.0);
                    let v = t.points[k].speed.max(0.1);
                    let g = gap / v;
                    best = Some(best.map_or(g, |x: f64| x.min(g)));
                }
            }
            best
        }
        PredicateKind::DistToPedestrianM => {
            let peds: Vec<&AgentTrack> = t.agents.iter().filter(|a| a.class == 0).collect();
            if peds.is_empty() {
                return None;
            }
            let mut best = 99.0f64;
            for k in (0..t.points.len()).filter(|&k| moving(k)) {
                let ego = t.ego_box(k);
                for a in &peds {
                    best = best.min(ego.clearance(&a.boxes[k]));
                }
            }
            Some(best)
        }
        PredicateKind::SpeedInWaterMps => {
            let blocks: Vec<_> = connected_blocks(&scene.grid, &default_radius, None)
                .into_iter()
                .filter(|b| b.label == "water")
                .filter(|b| {
                    !spec.near_pedestrian
                        || t.agents.iter().any(|a| a.class == 0 && b.distance_to(a.current.center) <= SPLASH_RADIUS_M)
                })
                .collect();
            if blocks.is_empty() {
                return None;
            }
            let in_water = |bx: &OrientedBox| {
                bx.sample_points().into_iter().any(|p| {
                    scene.grid.label_at(p) == Some("water") && blocks.iter().any(|b| b.distance_to(p) <= 1e-9)
                })
            };
            let mut best: Option<f64> = None;
            for (k, bx) in t.sweep() {
                if in_water(&bx) {
                    let v = t.points[k].speed.max(if k == 0 { t.start.speed } else { t.points[k - 1].speed });
                    best = Some(best.map_or(v, |x: f64| x.max(v)));
                }
            }
            if best.is_none() && t.continuation(CONTINUATION_REACH_M).iter().any(in_water) {
                best = Some(t.points.last().map_or(0.0, |p| p.speed));
            }
            best
        }
        PredicateKind::CrossesSolidLine => {
            if !scene.grid.present_labels().contains("solid_line") {
                return None;
            }
            let crossed = t.sweep().iter().any(|(_, b)| b.touches_label(&scene.grid, "solid_line"));
            Some(if crossed { 1.0 } else { 0.0 })
        }
        PredicateKind::StopsAtStopLine => {
            if !scene.grid.present_labels().contains("stop_line") {
                return None;
            }
            for (k, bx) in t.sweep() {
                if t.points[k].speed < 0.1 {
                    return Some(0.0);
                }
                if bx.touches_label(&scene.grid, "stop_line") {
                    let prev = if k == 0 { t.start.speed } else { t.points[k - 1].speed };
                    return Some(prev.min(t.points[k].speed).max(0.0));
                }
            }
            if t.continuation(CONTINUATION_REACH_M).iter().any(|b| b.touches_label(&scene.grid, "stop_line")) {
                return t.points.last().map(|p| p.speed);
            }
            None
        }
        PredicateKind::LaneChangeSignaled => {
            let lane0 = t.lane_origin + ((t.start.y - t.lane_origin) / t.lane_width).round() * t.lane_width;
            let changes = t.points.iter().any(|p| (p.y - lane0).abs() > t.lane_width / 2.0);
            if !changes {
                return None;
            }
            // only deliberate offsets are announced; drifting across is not
            Some(if t.maneuver_tag.starts_with("offset") { 1.0 } else { 0.0 })
        }
        PredicateKind::DistToHeavyVehicleM => {
            let heavy: Vec<&AgentTrack> = t.agents.iter().filter(|a| a.class == 2).collect();
            if heavy.is_empty() {
                return None;
            }
            let mut best = 99.0f64;
            for k in 0..t.points.len() {
                let ego = t.ego_box(k);
                for a in &heavy {
                    best = best.min(ego.clearance(&a.boxes[k]));
                }
            }
            Some(best)
        }
        PredicateKind::SpeedVsLimitMps => match spec.direction {
            Direction::AtMost => Some(t.points.iter().map(|p| p.speed).fold(0.0, f64::max)),
            Direction::AtLeast => Some(t.points.iter().map(|p| p.speed).fold(f64::INFINITY, f64::min)),
        },
    }
}

fn threshold_of(spec: &PredicateSpec, scene: &SceneState) -> Option<f64> {
    match &spec.threshold {
        Threshold::Fixed(v) => Some(*v),
        Threshold::Concept(k) => scene.concept_f64(k),
    }
}

/// Four-step evaluation. `scene_terms` is the set of names present in the
/// scene (see [`crate::retrieval::scene_terms`]).
pub fn oracle_score(
    trace: &Trace<'_>,
    clause_id: &str,
    binding: Option<&ClauseBinding>,
    scene_terms: &BTreeSet<String>,
) -> RuleEvaluation {
    let mut eval = RuleEvaluation {
        traj_id: trace.traj_id,
        clause_id: clause_id.to_string(),
        conclusion: Conclusion::ApplicableNoEvidence,
        risk: Risk::NA,
        score: 0.0,
        evidence: vec![],
    };
    let Some(binding) = binding else {
        log::debug!("UnboundClause: {clause_id} has no measurable binding; scored as no evidence");
        return eval;
    };
    if !binding.applicability.is_empty() && binding.applicability.is_disjoint(scene_terms) {
        eval.conclusion = Conclusion::NotApplicable;
        eval.score = 1.0;
        return eval;
    }
    let mut worst: Option<Risk> = None;
    for spec in &binding.predicates {
        let Some(th) = threshold_of(spec, trace.scene) else { continue };
        let Some(v) = measure(spec, trace) else { continue };
        eval.evidence.push((spec.kind.name().to_string(), v));
        if let Some(r) = spec.risk_of(v, th) {
            worst = Some(worst.map_or(r, |w| w.max(r)));
        }
    }
    if eval.evidence.is_empty() {
        return eval;
    }
    match worst {
        None => {
            eval.conclusion = Conclusion::PerfectAdherence;
            eval.score = 1.0;
        }
        Some(r) => {
            eval.conclusion = Conclusion::Violation;
            eval.risk = r;
            eval.score = r.midpoint();
        }
    }
    eval
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn risk_mapping() {
        let p = PredicateSpec::new(PredicateKind::FollowingGapS, Direction::AtLeast, 1.5, [1.0, 0.5, 0.1]);
        assert_eq!(p.risk_of(2.0, 1.5), None);
        assert_eq!(p.risk_of(1.45, 1.5), Some(Risk::Negligible));
        assert_eq!(p.risk_of(1.2, 1.5), Some(Risk::Low));
        assert_eq!(p.risk_of(0.8, 1.5), Some(Risk::Moderate));
        assert_eq!(p.risk_of(0.2, 1.5), Some(Risk::High));
        let b = PredicateSpec::boolean(PredicateKind::CrossesSolidLine, Direction::AtMost, Risk::High);
        assert_eq!(b.risk_of(1.0, 0.5), Some(Risk::High));
        assert_eq!(b.risk_of(0.0, 0.5), None);
    }

    #[test]
    fn midpoints_sit_in_bands() {
        for r in [Risk::Negligible, Risk::Low, Risk::Moderate, Risk::High] {
            let (lo, hi) = r.band();
            assert!(r.midpoint() >= lo && r.midpoint() <= hi);
        }
    }
}
