//! Inputs of the learned scorer.
//!
//! A query row is `[clause signature (C) | trajectory encoding (C/2) | context (C)]`:
//! * clause signature: column-wise max over the clause's token embeddings;
//! * trajectory encoding: sinusoids of the mid-horizon and final displacement;
//! * context: ego feature, a numeric trajectory summary and the scene's speed
//!   concepts.

use ndarray::{Array1, Array2, Axis};

use crate::planner::{ego_feature, pos_enc, FutureState, Maneuver, PlannerConfig, Trajectory};
use crate::verbalizer::SceneState;

use super::scorer::{forward, ScorerError, ScorerWeights};

/// Column-wise max of a token matrix; `None` for a clause without tokens.
pub fn clause_signature(embedding: &Array2<f64>) -> Option<Array1<f64>> {
    if embedding.nrows() == 0 {
        return None;
    }
    Some(embedding.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b)))
}

pub fn trajectory_encoding(scene: &SceneState, traj: &Trajectory, width: usize) -> Vec<f64> {
    let o = scene.ego.position;
    let q = width / 2;
    let mid = &traj.points[(traj.points.len() - 1) / 2];
    let end = traj.final_point();
    let mut v = pos_enc(mid.x - o[0], mid.y - o[1], q);
    v.extend(pos_enc(end.x - o[0], end.y - o[1], width - q));
    v
}

pub fn context_feature(scene: &SceneState, traj: &Trajectory, cfg: &PlannerConfig, width: usize) -> Vec<f64> {
    let mut f = ego_feature(&scene.ego, scene.nav_command, 11);
    let lane0 = cfg.lane_origin + ((scene.ego.position[1] - cfg.lane_origin) / cfg.lane_width).round() * cfg.lane_width;
    let n = traj.points.len() as f64;
    let vmax = traj.max_speed();
    let vmin = traj.min_speed();
    let vend = traj.final_point().speed;
    let vmean = traj.points.iter().map(|p| p.speed).sum::<f64>() / n;
    let lat_end = (traj.final_point().y - lane0) / cfg.lane_width;
    let lat_max = traj.points.iter().map(|p| (p.y - lane0).abs()).fold(0.0, f64::max) / cfg.lane_width;
    f.extend([vmax / 20.0, vmin / 20.0, vend / 20.0, vmean / 20.0, lat_end, lat_max]);
    let base = traj.maneuver_tag.split('~').next().unwrap_or("");
    f.extend(Maneuver::LIBRARY.iter().map(|m| if m.tag() == base { 1.0 } else { 0.0 }));
    f.push(if traj.maneuver_tag.contains('~') { 1.0 } else { 0.0 });
    for key in ["speed_limit", "min_speed"] {
        match scene.concept_f64(key) {
            Some(lim) => f.extend([1.0, lim / 20.0, (vmax - lim) / 10.0, (vmin - lim) / 10.0]),
            None => f.extend([0.0; 4]),
        }
    }
    f.resize(width, 0.0);
    f
}

/// Trajectory encoding followed by the context feature: the part of a query
/// row shared by every clause.
pub fn query_tail(scene: &SceneState, traj: &Trajectory, cfg: &PlannerConfig, c: usize) -> Vec<f64> {
    let mut tail = trajectory_encoding(scene, traj, c / 2);
    tail.extend(context_feature(scene, traj, cfg, c));
    tail
}

/// Query rows for the clauses that have tokens, plus the index of each row's
/// clause.
pub fn query_rows(embeds: &[&Array2<f64>], tail: &[f64], c: usize) -> (Array2<f64>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut idx = Vec::new();
    for (j, e) in embeds.iter().enumerate() {
        if let Some(sig) = clause_signature(e) {
            let mut r = sig.to_vec();
            r.resize(c, 0.0);
            r.extend_from_slice(tail);
            rows.push(r);
            idx.push(j);
        }
    }
    let width = c + tail.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    (Array2::from_shape_vec((idx.len(), width), flat).expect("rows have equal width"), idx)
}

pub fn query_matrix(
    embeds: &[&Array2<f64>],
    scene: &SceneState,
    traj: &Trajectory,
    cfg: &PlannerConfig,
    c: usize,
) -> (Array2<f64>, Vec<usize>) {
    query_rows(embeds, &query_tail(scene, traj, cfg, c), c)
}

pub fn token_matrix(future: &FutureState) -> Array2<f64> {
    let w = future.tokens.first().map_or(0, |t| t.len());
    let flat: Vec<f64> = future.tokens.iter().flatten().copied().collect();
    Array2::from_shape_vec((future.tokens.len(), w), flat).expect("tokens have equal width")
}

/// One score per clause; tokenless clauses score 0.
pub fn learned_scores(
    w: &ScorerWeights,
    embeds: &[&Array2<f64>],
    future: &FutureState,
    scene: &SceneState,
    traj: &Trajectory,
    cfg: &PlannerConfig,
) -> Result<Vec<f64>, ScorerError> {
    let mut out = vec![0.0; embeds.len()];
    let (x, idx) = query_matrix(embeds, scene, traj, cfg, w.shape.c);
    if idx.is_empty() {
        return Ok(out);
    }
    let s = token_matrix(future);
    let y = forward(w, x.view(), s.view())?.y;
    for (k, j) in idx.into_iter().enumerate() {
        out[j] = y[k];
    }
    Ok(out)
}
