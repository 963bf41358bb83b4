//! Candidate trajectories, diversity repulsion and constant-velocity world
//! rollout.
//!
//! Kinematics per step of length `dt` with controls `(a, kappa)`:
//! `v' = clamp(v + a dt, 0, v_max)`, `s = (v + v') dt / 2`,
//! `theta' = theta + kappa s`, and the position advances by `s` along the
//! midpoint heading `theta + kappa s / 2`. A trajectory is feasible when every
//! step satisfies `|v' - v| <= a_max dt` and `|theta' - theta| <= kappa_max s`.
//!
//! Roads run along +x; lane centers sit at `lane_origin + k * lane_width`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;
use crate::verbalizer::{ConnectedBlock, EgoState, NavCommand, SceneState};

const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("ego state outside the kinematic model: {0}")]
    InfeasibleState(String),
    #[error("trajectories have {0} and {1} points")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub dt: f64,
    pub horizon: usize,
    pub a_max: f64,
    /// Acceleration bound used by lane-keeping maneuvers.
    pub a_comfort: f64,
    pub kappa_max: f64,
    pub v_max: f64,
    /// Reference speed for speed factors when starting slower than this.
    pub v_floor: f64,
    pub lane_width: f64,
    pub lane_origin: f64,
    pub n_t: usize,
    pub noise_scale: f64,
    pub tau: f64,
    pub diversify_iters: usize,
    pub diversify_step: f64,
    /// Token width C; half is content, half positional encoding.
    pub token_dim: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            horizon: 6,
            a_max: 4.0,
            a_comfort: 2.0,
            kappa_max: 0.3,
            v_max: 30.0,
            v_floor: 3.0,
            lane_width: 3.5,
            lane_origin: 0.0,
            n_t: 20,
            noise_scale: 1.0,
            tau: 1.5,
            diversify_iters: 40,
            diversify_step: 1.0,
            token_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl TrajPoint {
    pub fn pos(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Future ego states at `dt, 2 dt, ...`; the current state is not included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub traj_id: usize,
    pub dt: f64,
    pub points: Vec<TrajPoint>,
    pub maneuver_tag: String,
}

impl Trajectory {
    pub fn final_point(&self) -> &TrajPoint {
        self.points.last().expect("trajectories have points")
    }

    pub fn max_speed(&self) -> f64 {
        self.points.iter().map(|p| p.speed).fold(0.0, f64::max)
    }

    pub fn min_speed(&self) -> f64 {
        self.points.iter().map(|p| p.speed).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Maneuver {
    Keep { factor_pct: u32 },
    OffsetLeft,
    OffsetRight,
    HardStop,
}

impl Maneuver {
    /// Base maneuver library; index 0 is the unperturbed best-progress
    /// candidate.
    pub const LIBRARY: [Maneuver; 7] = [
        Maneuver::Keep { factor_pct: 120 },
        Maneuver::Keep { factor_pct: 100 },
        Maneuver::Keep { factor_pct: 50 },
        Maneuver::Keep { factor_pct: 0 },
        Maneuver::OffsetLeft,
        Maneuver::OffsetRight,
        Maneuver::HardStop,
    ];

    pub fn tag(&self) -> String {
        match self {
            Maneuver::Keep { factor_pct } => format!("keep_{:.1}", *factor_pct as f64 / 100.0),
            Maneuver::OffsetLeft => "offset_left".into(),
            Maneuver::OffsetRight => "offset_right".into(),
            Maneuver::HardStop => "hard_stop".into(),
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let t = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI);
    t - std::f64::consts::PI
}

/// One kinematic step. Controls are clamped to the model bounds.
pub fn step_state(p: &TrajPoint, a: f64, kappa: f64, cfg: &PlannerConfig) -> TrajPoint {
    let a = a.clamp(-cfg.a_max, cfg.a_max);
    let kappa = kappa.clamp(-cfg.kappa_max, cfg.kappa_max);
    let v1 = (p.speed + a * cfg.dt).clamp(0.0, cfg.v_max.max(p.speed));
    let s = 0.5 * (p.speed + v1) * cfg.dt;
    let mid = p.heading + 0.5 * kappa * s;
    TrajPoint { x: p.x + s * mid.cos(), y: p.y + s * mid.sin(), heading: wrap_angle(p.heading + kappa * s), speed: v1 }
}

pub fn start_point(ego: &EgoState) -> TrajPoint {
    TrajPoint { x: ego.position[0], y: ego.position[1], heading: ego.heading, speed: ego.speed }
}

/// Whether every step of `traj` from `start` respects the model bounds.
pub fn is_feasible(start: &TrajPoint, traj: &Trajectory, cfg: &PlannerConfig) -> bool {
    let mut prev = *start;
    for p in &traj.points {
        if !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite() && p.speed >= -EPS) {
            return false;
        }
        if (p.speed - prev.speed).abs() > cfg.a_max * cfg.dt + 1e-7 {
            return false;
        }
        let s = 0.5 * (p.speed + prev.speed) * cfg.dt;
        if wrap_angle(p.heading - prev.heading).abs() > cfg.kappa_max * s + 1e-7 {
            return false;
        }
        prev = *p;
    }
    true
}

pub fn nearest_lane_center(y: f64, cfg: &PlannerConfig) -> f64 {
    cfg.lane_origin + ((y - cfg.lane_origin) / cfg.lane_width).round() * cfg.lane_width
}

/// Controls driving `p` toward lateral position `y_target` along +x at
/// `v_target`, with acceleration magnitude bounded by `a_lim`.
pub fn feedback_control(p: &TrajPoint, y_target: f64, v_target: f64, a_lim: f64, cfg: &PlannerConfig) -> (f64, f64) {
    let a = ((v_target - p.speed) / cfg.dt).clamp(-a_lim, a_lim);
    let v1 = (p.speed + a * cfg.dt).max(0.0);
    let s = 0.5 * (p.speed + v1) * cfg.dt;
    if s < EPS {
        return (a, 0.0);
    }
    // aim at the target line a few steps ahead so long steps do not overshoot
    let lookahead = (3.0 * s).max(8.0);
    let desired = ((y_target - p.y) / lookahead).atan().clamp(-0.3, 0.3);
    let kappa = (wrap_angle(desired - p.heading) / s).clamp(-cfg.kappa_max, cfg.kappa_max);
    (a, kappa)
}

fn controls_for(m: Maneuver, start: &TrajPoint, cfg: &PlannerConfig) -> Vec<(f64, f64)> {
    let lane = nearest_lane_center(start.y, cfg);
    let v_ref = start.speed.max(cfg.v_floor);
    let (y_target, v_target, a_lim) = match m {
        Maneuver::Keep { factor_pct } => (lane, (v_ref * factor_pct as f64 / 100.0).min(cfg.v_max), cfg.a_comfort),
        Maneuver::OffsetLeft => (lane + cfg.lane_width, start.speed.min(cfg.v_max), cfg.a_comfort),
        Maneuver::OffsetRight => (lane - cfg.lane_width, start.speed.min(cfg.v_max), cfg.a_comfort),
        Maneuver::HardStop => (lane, 0.0, cfg.a_max),
    };
    let mut p = *start;
    let mut out = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let u = feedback_control(&p, y_target, v_target, a_lim, cfg);
        p = step_state(&p, u.0, u.1, cfg);
        out.push(u);
    }
    out
}

pub fn rollout_controls(start: &TrajPoint, controls: &[(f64, f64)], cfg: &PlannerConfig) -> Vec<TrajPoint> {
    let mut p = *start;
    controls
        .iter()
        .map(|&(a, k)| {
            p = step_state(&p, a, k, cfg);
            p
        })
        .collect()
}

/// Exactly `n_t` candidates: the base library first (truncated if `n_t` is
/// smaller), then seeded control-noise variants cycling through the library.
pub fn generate_candidates(
    scene: &SceneState,
    n_t: usize,
    noise_scale: f64,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<Vec<Trajectory>, PlannerError> {
    let ego = &scene.ego;
    if !(ego.speed.is_finite() && ego.speed >= 0.0 && ego.speed <= cfg.v_max + EPS) {
        return Err(PlannerError::InfeasibleState(format!("speed {}", ego.speed)));
    }
    if !(ego.position[0].is_finite() && ego.position[1].is_finite() && ego.heading.is_finite()) {
        return Err(PlannerError::InfeasibleState("non-finite pose".into()));
    }
    if noise_scale < 0.0 || !noise_scale.is_finite() {
        return Err(PlannerError::InfeasibleState(format!("noise scale {noise_scale}")));
    }
    let start = start_point(ego);
    let library = Maneuver::LIBRARY;
    let base: Vec<Vec<(f64, f64)>> = library.iter().map(|m| controls_for(*m, &start, cfg)).collect();
    let mut rng = rng_for(seed, "planner", 0);
    let na = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(n_t);
    for id in 0..n_t {
        let b = id % library.len();
        let mut controls = base[b].clone();
        let mut tag = library[b].tag();
        if id >= library.len() {
            for u in &mut controls {
                u.0 += noise_scale * cfg.a_comfort * 0.75 * na.sample(&mut rng);
                u.1 += noise_scale * 0.02 * na.sample(&mut rng);
            }
            tag = format!("{tag}~{}", id / library.len());
        }
        out.push(Trajectory { traj_id: id, dt: cfg.dt, points: rollout_controls(&start, &controls, cfg), maneuver_tag: tag });
    }
    Ok(out)
}

/// Mean L2 distance between aligned waypoints.
pub fn pair_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, PlannerError> {
    if a.points.len() != b.points.len() {
        return Err(PlannerError::LengthMismatch(a.points.len(), b.points.len()));
    }
    if a.points.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.points.iter().zip(&b.points).map(|(p, q)| (p.x - q.x).hypot(p.y - q.y)).sum();
    Ok(sum / a.points.len() as f64)
}

pub fn diversity_penalty(trajs: &[Trajectory], tau: f64) -> Result<f64, PlannerError> {
    let mut total = 0.0;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            total += (tau - pair_distance(&trajs[i], &trajs[j])?).max(0.0);
        }
    }
    Ok(total)
}

pub fn min_pair_distance(trajs: &[Trajectory]) -> Result<f64, PlannerError> {
    let mut m = f64::INFINITY;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            m = m.min(pair_distance(&trajs[i], &trajs[j])?);
        }
    }
    Ok(m)
}

/// Feasible trajectory from `start` that tracks `target` waypoints as closely
/// as the bounds allow. Exact on trajectories produced by [`step_state`].
pub fn project_feasible(start: &TrajPoint, target: &[TrajPoint], cfg: &PlannerConfig) -> Vec<TrajPoint> {
    let mut p = *start;
    target
        .iter()
        .map(|q| {
            let (dx, dy) = (q.x - p.x, q.y - p.y);
            let s_des = dx.hypot(dy);
            let v1 = (2.0 * s_des / cfg.dt - p.speed)
                .clamp(p.speed - cfg.a_max * cfg.dt, p.speed + cfg.a_max * cfg.dt)
                .clamp(0.0, cfg.v_max.max(p.speed));
            let s = 0.5 * (p.speed + v1) * cfg.dt;
            let kappa = if s_des > EPS && s > EPS {
                let chord = dy.atan2(dx);
                (2.0 * wrap_angle(chord - p.heading) / s_des).clamp(-cfg.kappa_max, cfg.kappa_max)
            } else {
                0.0
            };
            let a = (v1 - p.speed) / cfg.dt;
            p = step_state(&p, a, kappa, cfg);
            p
        })
        .collect()
}

/// Waypoint-space repulsion of pairs closer than `tau`. Each pass moves both
/// members of every such pair apart by `step * (tau - e) / 2` (the full
/// amount when the partner is trajectory 0, which never moves), then projects
/// back onto the kinematic model. A pass that would raise the penalty is
/// retried with half the step, and skipped if it still does after a few
/// halvings, so the penalty never increases.
///
/// Returns the final set and the penalty after every pass (first entry is the
/// starting penalty).
pub fn diversify(
    start: &TrajPoint,
    trajs: &[Trajectory],
    tau: f64,
    iters: usize,
    step: f64,
    cfg: &PlannerConfig,
) -> Result<(Vec<Trajectory>, Vec<f64>), PlannerError> {
    let mut cur = trajs.to_vec();
    let mut pen = diversity_penalty(&cur, tau)?;
    let mut history = vec![pen];
    for _ in 0..iters {
        if pen <= 0.0 {
            history.push(pen);
            continue;
        }
        let n = cur.len();
        let h = cur.first().map_or(0, |t| t.points.len());
        let mut disp = vec![vec![[0.0f64; 2]; h]; n];
        for i in 0..n {
            for j in i + 1..n {
                let e = pair_distance(&cur[i], &cur[j])?;
                if e >= tau {
                    continue;
                }
                let push = step * (tau - e);
                for k in 0..h {
                    let (p, q) = (&cur[i].points[k], &cur[j].points[k]);
                    let (mut dx, mut dy) = (p.x - q.x, p.y - q.y);
                    let d = dx.hypot(dy);
                    if d < 1e-6 {
                        // coincident: separate sideways, lower id to the left
                        dx = -p.heading.sin();
                        dy = p.heading.cos();
                    } else {
                        dx /= d;
                        dy /= d;
                    }
                    let (wi, wj) = if i == 0 { (0.0, 1.0) } else { (0.5, 0.5) };
                    disp[i][k][0] += wi * push * dx;
                    disp[i][k][1] += wi * push * dy;
                    disp[j][k][0] -= wj * push * dx;
                    disp[j][k][1] -= wj * push * dy;
                }
            }
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..6 {
            let trial: Vec<Trajectory> = cur
                .iter()
                .zip(&disp)
                .map(|(t, d)| {
                    if t.traj_id == cur[0].traj_id || d.iter().all(|v| v[0] == 0.0 && v[1] == 0.0) {
                        return t.clone();
                    }
                    let target: Vec<TrajPoint> = t
                        .points
                        .iter()
                        .zip(d)
                        .map(|(p, v)| TrajPoint { x: p.x + scale * v[0], y: p.y + scale * v[1], ..*p })
                        .collect();
                    Trajectory { points: project_feasible(start, &target, cfg), ..t.clone() }
                })
                .collect();
            let trial_pen = diversity_penalty(&trial, tau)?;
            if trial_pen <= pen {
                cur = trial;
                pen = trial_pen;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            log::debug!("diversify pass made no progress at penalty {pen}");
        }
        history.push(pen);
    }
    Ok((cur, history))
}

/// Ego feature vector of width `dim`: position, velocity, acceleration,
/// heading sine/cosine, navigation one-hot, zero padding.
pub fn ego_feature(ego: &EgoState, nav: NavCommand, dim: usize) -> Vec<f64> {
    let nav_idx = match nav {
        NavCommand::Keep => 0,
        NavCommand::TurnLeft => 1,
        NavCommand::TurnRight => 2,
        NavCommand::Stop => 3,
    };
    let mut f = vec![
        ego.position[0] / 100.0,
        ego.position[1] / 10.0,
        ego.speed * ego.heading.cos() / 20.0,
        ego.speed * ego.heading.sin() / 20.0,
        ego.accel / 4.0,
        ego.heading.sin(),
        ego.heading.cos(),
    ];
    f.extend((0..4).map(|i| if i == nav_idx { 1.0 } else { 0.0 }));
    f.resize(dim, 0.0);
    f
}

/// Sinusoidal encoding of a displacement: for each axis, sine and cosine at
/// wavelengths 2, 4, ..., 2^(n) m.
pub fn pos_enc(dx: f64, dy: f64, width: usize) -> Vec<f64> {
    let freqs = width / 4;
    let mut out = Vec::with_capacity(width);
    for v in [dx, dy] {
        for i in 0..freqs {
            let w = 2.0 * std::f64::consts::PI / (2.0 * 2f64.powi(i as i32));
            out.push((w * v).sin());
            out.push((w * v).cos());
        }
    }
    out.resize(width, 0.0);
    out
}

/// Coarse class of an instance label.
pub fn instance_class(label: &str) -> usize {
    let l = label.to_lowercase();
    if ["pedestrian", "person", "child", "cyclist", "bicycle", "people"].iter().any(|k| l.contains(k)) {
        0
    } else if ["truck", "bus", "lorry", "heavy"].iter().any(|k| l.contains(k)) {
        2
    } else if ["car", "vehicle", "motorcycle"].iter().any(|k| l.contains(k)) {
        1
    } else {
        3
    }
}

fn block_class(label: &str) -> usize {
    match label {
        "water" => 0,
        "solid_line" => 1,
        "crosswalk" => 2,
        "stop_line" => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureState {
    /// `horizon + |instances| + |blocks|` rows of width C.
    pub tokens: Vec<Vec<f64>>,
    pub n_ego: usize,
    pub n_instances: usize,
    pub n_blocks: usize,
}

/// Instance positions after `k` steps of constant velocity.
pub fn extrapolate(center: [f64; 2], velocity: [f64; 2], k: usize, dt: f64) -> [f64; 2] {
    [center[0] + velocity[0] * k as f64 * dt, center[1] + velocity[1] * k as f64 * dt]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Predicted world under `traj`: ego tokens per step, one token per instance
/// at its closest approach, one per non-background block.
pub fn rollout_world(scene: &SceneState, traj: &Trajectory, blocks: &[ConnectedBlock], cfg: &PlannerConfig) -> FutureState {
    let half = cfg.token_dim / 2;
    let origin = scene.ego.position;
    let h = traj.points.len();
    let mut tokens = Vec::new();
    for (k, p) in traj.points.iter().enumerate() {
        let here = scene.grid.label_at(p.pos()).unwrap_or("empty");
        let mut c = vec![0.0; half];
        c[0] = 1.0;
        c[3] = (k + 1) as f64 / h as f64;
        c[4] = (p.x - origin[0]) / 30.0;
        c[5] = (p.y - origin[1]) / 5.0;
        c[6] = p.heading.sin();
        c[7] = p.speed / 20.0;
        c[8 + block_class(here).min(4)] = if here == "empty" || here == "drivable" { 0.0 } else { 1.0 };
        c[13] = if here == "empty" { 1.0 } else { 0.0 };
        // nearest agent of each class at this step
        for cls in 0..4 {
            let d = scene
                .instances
                .iter()
                .filter(|i| instance_class(&i.label) == cls)
                .map(|i| dist(p.pos(), extrapolate(i.center, i.velocity, k + 1, cfg.dt)))
                .fold(f64::INFINITY, f64::min);
            c[14 + cls] = (-d / 5.0).exp();
        }
        c[18] = (p.y - nearest_lane_center(origin[1], cfg)) / cfg.lane_width;
        c[19] = (p.speed - scene.ego.speed) / 10.0;
        let mut tok = c;
        tok.extend(pos_enc(p.x - origin[0], p.y - origin[1], cfg.token_dim - half));
        tokens.push(tok);
    }
    for inst in &scene.instances {
        let (mut best_k, mut best_d) = (0, f64::INFINITY);
        for (k, p) in traj.points.iter().enumerate() {
            let d = dist(p.pos(), extrapolate(inst.center, inst.velocity, k + 1, cfg.dt));
            if d < best_d {
                best_d = d;
                best_k = k;
            }
        }
        let q = extrapolate(inst.center, inst.velocity, h, cfg.dt);
        let p = traj.points.get(best_k).copied().unwrap_or_else(|| start_point(&scene.ego));
        let mut c = vec![0.0; half];
        c[1] = 1.0;
        c[3] = (best_k + 1) as f64 / h.max(1) as f64;
        c[4] = (q[0] - origin[0]) / 30.0;
        c[5] = (q[1] - origin[1]) / 5.0;
        c[6] = inst.velocity[0] / 10.0;
        c[7] = inst.velocity[1] / 10.0;
        c[8] = (-best_d / 5.0).exp();
        c[9] = p.speed / 20.0;
        c[10 + instance_class(&inst.label)] = 1.0;
        c[14] = inst.size[0] / 10.0;
        c[15] = inst.size[1] / 5.0;
        let mut tok = c;
        tok.extend(pos_enc(p.x - origin[0], p.y - origin[1], cfg.token_dim - half));
        tokens.push(tok);
    }
    let shown: Vec<&ConnectedBlock> = blocks.iter().filter(|b| b.label != "drivable" && b.label != "empty").collect();
    for b in &shown {
        let (mut best_k, mut best_d) = (0, f64::INFINITY);
        for (k, p) in traj.points.iter().enumerate() {
            let d = b.distance_to(p.pos());
            if d < best_d {
                best_d = d;
                best_k = k;
            }
        }
        let p = traj.points.get(best_k).copied().unwrap_or_else(|| start_point(&scene.ego));
        let mut c = vec![0.0; half];
        c[2] = 1.0;
        c[3] = (best_k + 1) as f64 / h.max(1) as f64;
        c[4] = (b.bbox.0[0] - origin[0]) / 30.0;
        c[5] = (b.bbox.0[1] - origin[1]) / 5.0;
        c[6] = (b.bbox.1[0] - origin[0]) / 30.0;
        c[7] = (b.bbox.1[1] - origin[1]) / 5.0;
        c[8] = (-best_d / 2.0).exp();
        c[9] = if best_d <= 0.0 { p.speed / 20.0 } else { 0.0 };
        c[10 + block_class(&b.label)] = 1.0;
        c[15] = (b.area / 50.0).min(2.0);
        let mut tok = c;
        tok.extend(pos_enc(p.x - origin[0], p.y - origin[1], cfg.token_dim - half));
        tokens.push(tok);
    }
    FutureState { n_ego: h, n_instances: scene.instances.len(), n_blocks: shown.len(), tokens }
}

/// CSV dump: `traj_id,step,x,y,heading,speed`.
pub fn trajectories_csv(trajs: &[Trajectory]) -> String {
    let mut out = String::from("traj_id,step,x,y,heading,speed\n");
    for t in trajs {
        for (k, p) in t.points.iter().enumerate() {
            out.push_str(&format!("{},{},{:.4},{:.4},{:.5},{:.4}\n", t.traj_id, k + 1, p.x, p.y, p.heading, p.speed));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verbalizer::{Instance, InstanceSource, SemanticGrid};
    use std::collections::{BTreeMap, BTreeSet};

    pub(crate) fn scene(speed: f64) -> SceneState {
        SceneState {
            timestamp: 0.0,
            ego: EgoState { position: [0.0, 0.0], heading: 0.0, speed, accel: 0.0 },
            instances: vec![],
            grid: SemanticGrid::new(10, 4, 1.0, [0.0, -2.0]),
            concepts: BTreeMap::new(),
            nav_command: NavCommand::Keep,
            route: None,
            user_instruction: None,
            hidden: BTreeMap::new(),
            revealed: BTreeSet::new(),
        }
    }

    #[test]
    fn zero_noise_gives_the_library() {
        let cfg = PlannerConfig::default();
        let s = scene(10.0);
        let c = generate_candidates(&s, Maneuver::LIBRARY.len(), 0.0, 1, &cfg).unwrap();
        let noisy = generate_candidates(&s, Maneuver::LIBRARY.len(), 1.0, 9, &cfg).unwrap();
        assert_eq!(c, noisy);
        assert_eq!(c[0].maneuver_tag, "keep_1.2");
        let start = start_point(&s.ego);
        for t in &c {
            assert!(is_feasible(&start, t, &cfg), "{}", t.maneuver_tag);
        }
    }

    #[test]
    fn stop_at_rest_stays_put() {
        let cfg = PlannerConfig::default();
        let mut s = scene(0.0);
        s.nav_command = NavCommand::Stop;
        let c = generate_candidates(&s, 20, 1.0, 3, &cfg).unwrap();
        let stop = c.iter().find(|t| t.maneuver_tag == "hard_stop").unwrap();
        assert!(stop.points.iter().all(|p| p.speed == 0.0));
    }

    #[test]
    fn seeded_candidates_are_identical() {
        let cfg = PlannerConfig::default();
        let s = scene(8.0);
        let a = generate_candidates(&s, 20, 1.0, 42, &cfg).unwrap();
        let b = generate_candidates(&s, 20, 1.0, 42, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.len(), 20);
        let start = start_point(&s.ego);
        assert!(a.iter().all(|t| is_feasible(&start, t, &cfg)));
    }

    #[test]
    fn infeasible_state_is_rejected() {
        let cfg = PlannerConfig::default();
        assert!(generate_candidates(&scene(99.0), 5, 0.0, 0, &cfg).is_err());
    }

    #[test]
    fn projection_is_exact_on_model_output() {
        let cfg = PlannerConfig::default();
        let s = scene(10.0);
        let start = start_point(&s.ego);
        for t in generate_candidates(&s, 20, 1.0, 5, &cfg).unwrap() {
            let p = project_feasible(&start, &t.points, &cfg);
            for (a, b) in p.iter().zip(&t.points) {
                assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6, "{}", t.maneuver_tag);
            }
        }
    }

    #[test]
    fn constant_velocity_agent() {
        assert_eq!(extrapolate([10.0, 0.0], [-1.0, 0.0], 4, 0.5), [8.0, 0.0]);
        let cfg = PlannerConfig::default();
        let mut s = scene(5.0);
        s.instances.push(Instance {
            instance_id: "p".into(),
            label: "pedestrian".into(),
            source: InstanceSource::Specialized,
            center: [10.0, 3.0],
            size: [0.5, 0.5],
            yaw: 0.0,
            velocity: [0.0, 0.0],
        });
        let t = &generate_candidates(&s, 1, 0.0, 0, &cfg).unwrap()[0];
        let fs = rollout_world(&s, t, &[], &cfg);
        assert_eq!(fs.tokens.len(), cfg.horizon + 1);
        assert!((fs.tokens[cfg.horizon][4] - 10.0 / 30.0).abs() < 1e-12);
        let empty = rollout_world(&scene(5.0), t, &[], &cfg);
        assert_eq!(empty.tokens.len(), cfg.horizon);
        assert!(empty.tokens.iter().all(|r| r.len() == 64 && r.iter().all(|x| x.is_finite())));
    }

    fn line(id: usize, pts: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            traj_id: id,
            dt: 0.5,
            points: pts.iter().map(|&(x, y)| TrajPoint { x, y, heading: 0.0, speed: 1.0 }).collect(),
            maneuver_tag: "hand".into(),
        }
    }

    #[test]
    fn penalty_matches_pairwise_oracle() {
        let a = line(0, &[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(diversity_penalty(&[a.clone(), a.clone()], 1.5).unwrap(), 1.5);
        let b = line(1, &[(0.0, 1.0), (1.0, 0.5)]);
        let c = line(2, &[(0.0, 3.0), (1.0, 4.0)]);
        // e(a,b) = 0.75, e(a,c) = 3.5, e(b,c) = (2 + 3.5)/2 = 2.75
        let want = (1.5f64 - 0.75).max(0.0);
        assert!((diversity_penalty(&[a.clone(), b, c], 1.5).unwrap() - want).abs() < 1e-12);
        assert!(matches!(pair_distance(&a, &line(3, &[(0.0, 0.0)])), Err(PlannerError::LengthMismatch(2, 1))));
    }

    #[test]
    fn diversify_separates_a_coincident_pair() {
        let cfg = PlannerConfig::default();
        let s = scene(10.0);
        let start = start_point(&s.ego);
        let mut c = generate_candidates(&s, 20, 1.0, 11, &cfg).unwrap();
        c[19] = Trajectory { traj_id: 19, ..c[18].clone() };
        let (out, hist) = diversify(&start, &c, 1.5, 200, 1.0, &cfg).unwrap();
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        assert!(min_pair_distance(&out).unwrap() >= 1.425, "{}", min_pair_distance(&out).unwrap());
        assert_eq!(out[0], c[0]);
        assert!(out.iter().all(|t| is_feasible(&start, t, &cfg)));
        let (same, _) = diversify(&start, &c, 1.5, 0, 1.0, &cfg).unwrap();
        assert_eq!(same, c);
    }
}
