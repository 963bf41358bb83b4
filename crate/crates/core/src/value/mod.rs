//! Per-clause trajectory scoring, rank-weighted aggregation and selection.

pub mod features;
pub mod oracle;
pub mod scorer;
pub mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{rollout_world, PlannerConfig, Trajectory};
use crate::retrieval::RetrievedItem;
use crate::verbalizer::{connected_blocks, default_radius, SceneState};

pub use oracle::{ClauseBinding, Conclusion, RuleEvaluation, Risk};
pub use scorer::{ScorerShape, ScorerWeights};

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("no retrieved knowledge to aggregate")]
    EmptyScores,
    #[error("invalid value config: {0}")]
    InvalidConfig(String),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error(transparent)]
    Scorer(#[from] scorer::ScorerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueConfig {
    pub gamma: f64,
    pub n_k: usize,
    pub n_t: usize,
    pub layers: usize,
    pub tau: f64,
    pub channels: usize,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self { gamma: 0.7, n_k: 16, n_t: 20, layers: 3, tau: 1.5, channels: 64 }
    }
}

impl ValueConfig {
    pub fn validate(&self) -> Result<(), ValueError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ValueError::InvalidConfig(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.n_k == 0 || self.n_t == 0 || self.layers == 0 || self.channels < 16 || !self.channels.is_multiple_of(4) {
            return Err(ValueError::InvalidConfig("counts must be positive, channels a multiple of 4 and at least 16".into()));
        }
        if !(self.tau > 0.0) {
            return Err(ValueError::InvalidConfig(format!("tau {}", self.tau)));
        }
        Ok(())
    }

    pub fn scorer_shape(&self) -> ScorerShape {
        ScorerShape { c: self.channels, layers: self.layers }
    }
}

/// Weight of the clause at 1-based `rank`.
pub fn rank_weight(rank: usize, gamma: f64) -> f64 {
    gamma.powi(rank as i32 - 1)
}

/// Normalized rank-decayed mean of `scores` (ordered by rank).
pub fn aggregate(scores: &[f64], gamma: f64) -> Result<f64, ValueError> {
    if scores.is_empty() {
        return Err(ValueError::EmptyScores);
    }
    let mut num = 0.0;
    let mut z = 0.0;
    let mut w = 1.0;
    for s in scores {
        num += w * s;
        z += w;
        w *= gamma;
    }
    Ok(num / z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueAssessment {
    pub traj_id: usize,
    /// Clause ids in rank order.
    pub clause_ids: Vec<String>,
    pub scores: Vec<f64>,
    /// Oracle breakdown; empty for the learned scorer.
    pub evaluations: Vec<RuleEvaluation>,
    pub total: f64,
    pub selected: bool,
    /// Set when nothing was retrieved and the total defaulted to 0.
    pub knowledge_free: bool,
}

/// Mean distance between the candidate and the previously executed
/// trajectory, aligned in time (candidate step k against previous step k+1).
pub fn continuity_distance(cand: &Trajectory, prev: &Trajectory) -> f64 {
    let pairs: Vec<f64> = cand
        .points
        .iter()
        .zip(prev.points.iter().skip(1))
        .map(|(p, q)| (p.x - q.x).hypot(p.y - q.y))
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().sum::<f64>() / pairs.len() as f64
}

/// Highest total wins. Ties go to the candidate with more `progress` (when
/// given), then to the one closest to `previous`, then to the smaller id.
/// Marks the winner in `assessments` and returns its id.
pub fn select(
    assessments: &mut [ValueAssessment],
    trajs: &[Trajectory],
    previous: Option<&Trajectory>,
    progress: Option<&dyn Fn(&Trajectory) -> f64>,
) -> Result<usize, ValueError> {
    const TIE: f64 = 1e-12;
    const PROGRESS_TIE: f64 = 1e-9;
    let traj = |id: usize| trajs.iter().find(|t| t.traj_id == id);
    let cont = |id: usize| -> f64 {
        match (previous, traj(id)) {
            (Some(p), Some(t)) => continuity_distance(t, p),
            _ => 0.0,
        }
    };
    let prog = |id: usize| -> f64 {
        match (progress, traj(id)) {
            (Some(f), Some(t)) => f(t),
            _ => 0.0,
        }
    };
    let mut best: Option<usize> = None;
    for (i, a) in assessments.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let o = &assessments[b];
                let (pa, pb) = (prog(a.traj_id), prog(o.traj_id));
                let (ca, cb) = (cont(a.traj_id), cont(o.traj_id));
                if (a.total - o.total).abs() > TIE {
                    a.total > o.total
                } else if (pa - pb).abs() > PROGRESS_TIE {
                    pa > pb
                } else if (ca - cb).abs() > TIE {
                    ca < cb
                } else {
                    a.traj_id < o.traj_id
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    let b = best.ok_or(ValueError::NoCandidates)?;
    for (i, a) in assessments.iter_mut().enumerate() {
        a.selected = i == b;
    }
    Ok(assessments[b].traj_id)
}

/// Source of per-clause scores.
pub enum ValueModel<'a> {
    Oracle { bindings: &'a BTreeMap<String, ClauseBinding>, scene_terms: &'a BTreeSet<String> },
    Learned(&'a ScorerWeights),
}

/// Score every candidate against every retrieved item and aggregate.
pub fn assess(
    scene: &SceneState,
    trajs: &[Trajectory],
    items: &[RetrievedItem],
    model: &ValueModel<'_>,
    cfg: &ValueConfig,
    pcfg: &PlannerConfig,
) -> Result<Vec<ValueAssessment>, ValueError> {
    let items = &items[..items.len().min(cfg.n_k)];
    let clause_ids: Vec<String> = items.iter().map(|i| i.clause_id.clone()).collect();
    let blocks = match model {
        ValueModel::Learned(_) => connected_blocks(&scene.grid, &default_radius, Some(scene.ego.position)),
        ValueModel::Oracle { .. } => vec![],
    };
    let mut out = Vec::with_capacity(trajs.len());
    for t in trajs {
        let (scores, evaluations) = match model {
            ValueModel::Oracle { bindings, scene_terms } => {
                let trace = oracle::Trace::new(scene, t, pcfg);
                let evals: Vec<RuleEvaluation> = clause_ids
                    .iter()
                    .map(|c| oracle::oracle_score(&trace, c, bindings.get(c), scene_terms))
                    .collect();
                (evals.iter().map(|e| e.score).collect(), evals)
            }
            ValueModel::Learned(w) => {
                let future = rollout_world(scene, t, &blocks, pcfg);
                let embeds: Vec<&Array2<f64>> = items.iter().map(|i| &i.embedding).collect();
                (features::learned_scores(w, &embeds, &future, scene, t, pcfg)?, vec![])
            }
        };
        let (total, knowledge_free) = match aggregate(&scores, cfg.gamma) {
            Ok(v) => (v, false),
            Err(ValueError::EmptyScores) => (0.0, true),
            Err(e) => return Err(e),
        };
        out.push(ValueAssessment {
            traj_id: t.traj_id,
            clause_ids: clause_ids.clone(),
            scores,
            evaluations,
            total,
            selected: false,
            knowledge_free,
        });
    }
    Ok(out)
}

/// Per-clause breakdown of every candidate:
/// `traj_id,rank,clause_id,conclusion,risk,score,rank_weight,contribution,total,selected`.
/// `contribution` is the clause's share of the total.
pub fn report_csv(assessments: &[ValueAssessment], gamma: f64) -> String {
    let mut out = String::from("traj_id,rank,clause_id,conclusion,risk,score,rank_weight,contribution,total,selected\n");
    for a in assessments {
        let z: f64 = (1..=a.scores.len()).map(|r| rank_weight(r, gamma)).sum();
        for (j, (c, s)) in a.clause_ids.iter().zip(&a.scores).enumerate() {
            let w = rank_weight(j + 1, gamma);
            let (concl, risk) = match a.evaluations.get(j) {
                Some(e) => (format!("{:?}", e.conclusion), format!("{:?}", e.risk)),
                None => ("learned".to_string(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.6},{:.6},{:.6},{}",
                a.traj_id,
                j + 1,
                c,
                concl,
                risk,
                s,
                w,
                w * s / z,
                a.total,
                a.selected
            );
        }
    }
    out
}
