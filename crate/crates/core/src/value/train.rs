//! Regression training of the scorer against per-clause labels.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

use super::scorer::{forward, mse_loss_grad, ScorerError, ScorerShape, ScorerWeights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training split")]
    EmptyTrainSet,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

/// Query rows of one (scene, trajectory) pair against its future tokens, with
/// one target per row.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x: Array2<f64>,
    pub s: Array2<f64>,
    pub target: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, lr: 1e-3, min_lr: 1e-5, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    /// MSE of always predicting `baseline_value`.
    pub baseline_mse: f64,
    pub baseline_value: f64,
    /// Share of labels with magnitude at least 0.5 whose sign is matched.
    pub sign_agreement: f64,
    pub n_confident: usize,
}

fn cosine_lr(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
}

struct AdamW {
    m: ScorerWeights,
    v: ScorerWeights,
    t: i32,
}

impl AdamW {
    fn new(shape: ScorerShape) -> Self {
        Self { m: ScorerWeights::zeros(shape), v: ScorerWeights::zeros(shape), t: 0 }
    }

    fn step(&mut self, w: &mut ScorerWeights, g: &ScorerWeights, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let tensors = w.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut()).zip(g.tensors());
        for (((wt, mt), vt), gt) in tensors {
            for i in 0..wt.len() {
                mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * gt[i];
                vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * gt[i] * gt[i];
                let mhat = mt[i] / bc1;
                let vhat = vt[i] / bc2;
                wt[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * wt[i]);
            }
        }
    }
}

/// Mean squared error over all rows of all examples.
pub fn dataset_mse(w: &ScorerWeights, data: &[TrainExample]) -> Result<f64, ScorerError> {
    let parts: Vec<Result<(f64, usize), ScorerError>> = data
        .par_iter()
        .map(|e| {
            let y = forward(w, e.x.view(), e.s.view())?.y;
            let d = &y - &e.target;
            Ok((d.dot(&d), d.len()))
        })
        .collect();
    let (mut sse, mut n) = (0.0, 0);
    for p in parts {
        let (a, b) = p?;
        sse += a;
        n += b;
    }
    Ok(if n == 0 { 0.0 } else { sse / n as f64 })
}

/// AdamW with a cosine-annealed step size. Batches are shuffled from `seed`;
/// per-example gradients run in parallel and are summed in example order, so
/// the result does not depend on the thread count.
pub fn train_scorer(
    shape: ScorerShape,
    train: &[TrainExample],
    val: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<(ScorerWeights, Vec<EpochLog>), TrainError> {
    let train: Vec<&TrainExample> = train.iter().filter(|e| !e.target.is_empty()).collect();
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut w = ScorerWeights::init(shape, cfg.seed);
    let mut opt = AdamW::new(shape);
    let mut rng = rng_for(cfg.seed, "train-shuffle", 0);
    let bs = cfg.batch_size.max(1);
    let steps_per_epoch = train.len().div_ceil(bs);
    let total = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut rows = 0usize;
        let mut lr = cfg.lr;
        for batch in order.chunks(bs) {
            let grads: Vec<Result<(f64, ScorerWeights), ScorerError>> = batch
                .par_iter()
                .map(|&i| {
                    let e = train[i];
                    mse_loss_grad(&w, e.x.view(), e.s.view(), e.target.view())
                })
                .collect();
            let mut g = ScorerWeights::zeros(shape);
            let batch_rows: usize = batch.iter().map(|&i| train[i].target.len()).sum();
            for (r, &i) in grads.into_iter().zip(batch) {
                let (loss, gi) = r?;
                let n = train[i].target.len() as f64;
                sse += loss * n;
                // per-example mean gradients, reweighted to a mean over rows
                g.add_scaled(&gi, n / batch_rows as f64);
            }
            rows += batch_rows;
            lr = cosine_lr(cfg, step, total);
            opt.step(&mut w, &g, lr, cfg);
            step += 1;
        }
        let train_mse = sse / rows as f64;
        if !train_mse.is_finite() || !w.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        let val_mse = if val.is_empty() { None } else { Some(dataset_mse(&w, val)?) };
        log::info!("epoch {epoch}: lr {lr:.2e} train mse {train_mse:.5} val mse {val_mse:?}");
        logs.push(EpochLog { epoch, lr, train_mse, val_mse });
    }
    Ok((w, logs))
}

/// Error, mean baseline and sign agreement on `data`. The baseline predicts
/// `baseline_value`, normally the training-label mean.
pub fn evaluate(w: &ScorerWeights, data: &[TrainExample], baseline_value: f64) -> Result<EvalMetrics, ScorerError> {
    let preds: Vec<Result<Array1<f64>, ScorerError>> =
        data.par_iter().map(|e| Ok(forward(w, e.x.view(), e.s.view())?.y)).collect();
    let (mut n, mut se, mut ae, mut bse, mut conf, mut agree) = (0usize, 0.0, 0.0, 0.0, 0usize, 0usize);
    for (p, e) in preds.into_iter().zip(data) {
        let y = p?;
        for (yi, ti) in y.iter().zip(e.target.iter()) {
            n += 1;
            se += (yi - ti) * (yi - ti);
            ae += (yi - ti).abs();
            bse += (baseline_value - ti) * (baseline_value - ti);
            if ti.abs() >= 0.5 {
                conf += 1;
                if yi.signum() == ti.signum() {
                    agree += 1;
                }
            }
        }
    }
    let d = n.max(1) as f64;
    Ok(EvalMetrics {
        n,
        mse: se / d,
        mae: ae / d,
        baseline_mse: bse / d,
        baseline_value,
        sign_agreement: if conf == 0 { 1.0 } else { agree as f64 / conf as f64 },
        n_confident: conf,
    })
}

pub fn label_mean(data: &[TrainExample]) -> f64 {
    let (s, n) = data.iter().fold((0.0, 0usize), |(s, n), e| (s + e.target.sum(), n + e.target.len()));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
