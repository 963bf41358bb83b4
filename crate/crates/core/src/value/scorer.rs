//! Tiny cross-attention scorer.
//!
//! For one trajectory, each clause contributes a query row
//! `x = [colmax(clause embedding) | trajectory encoding | ego feature]` of width
//! `2.5 C`. Then
//!
//! ```text
//! h   = x W_in^T + b_in
//! for each layer:
//!     a   = softmax((h W_q^T)(S W_k^T)^T / sqrt(C))     (S: future-state tokens)
//!     h1  = LN1(h + (a (S W_v^T)) W_o^T)
//!     h   = LN2(h1 + gelu(h1 W_1^T + b_1) W_2^T + b_2)
//! y   = tanh(h w_head + b_head)
//! ```
//!
//! Queries attend only to the future-state tokens, never to each other.
//! GELU is the tanh approximation. Everything is f64.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"KGDW";
pub const WEIGHTS_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerShape {
    pub c: usize,
    pub layers: usize,
}

impl ScorerShape {
    pub fn input_width(&self) -> usize {
        self.c + self.c / 2 + self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerWeights {
    pub shape: ScorerShape,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub layers: Vec<LayerWeights>,
    pub w_head: Array1<f64>,
    pub b_head: Array1<f64>,
}

impl ScorerWeights {
    pub fn zeros(shape: ScorerShape) -> Self {
        let c = shape.c;
        let layer = LayerWeights {
            wq: Array2::zeros((c, c)),
            wk: Array2::zeros((c, c)),
            wv: Array2::zeros((c, c)),
            wo: Array2::zeros((c, c)),
            ln1_g: Array1::zeros(c),
            ln1_b: Array1::zeros(c),
            w1: Array2::zeros((4 * c, c)),
            b1: Array1::zeros(4 * c),
            w2: Array2::zeros((c, 4 * c)),
            b2: Array1::zeros(c),
            ln2_g: Array1::zeros(c),
            ln2_b: Array1::zeros(c),
        };
        Self {
            shape,
            w_in: Array2::zeros((c, shape.input_width())),
            b_in: Array1::zeros(c),
            layers: vec![layer; shape.layers],
            w_head: Array1::zeros(c),
            b_head: Array1::zeros(1),
        }
    }

    /// Gaussian init with std `1/sqrt(fan_in)`, unit layer-norm gains.
    pub fn init(shape: ScorerShape, seed: u64) -> Self {
        let mut w = Self::zeros(shape);
        let mut rng = rng_for(seed, "init", 0);
        let fill = |a: &mut Array2<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
            let std = 1.0 / (a.ncols() as f64).sqrt();
            let n = Normal::new(0.0, std).expect("positive std");
            a.mapv_inplace(|_| n.sample(rng));
        };
        fill(&mut w.w_in, &mut rng);
        for l in &mut w.layers {
            for m in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                fill(m, &mut rng);
            }
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
        }
        let std = 0.1 / (shape.c as f64).sqrt();
        w.w_head.mapv_inplace(|_| rng.random_range(-std..std));
        w
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![slice(&self.w_in), self.b_in.as_slice().unwrap()];
        for l in &self.layers {
            v.extend([slice(&l.wq), slice(&l.wk), slice(&l.wv), slice(&l.wo)]);
            v.extend([l.ln1_g.as_slice().unwrap(), l.ln1_b.as_slice().unwrap()]);
            v.extend([slice(&l.w1), l.b1.as_slice().unwrap(), slice(&l.w2), l.b2.as_slice().unwrap()]);
            v.extend([l.ln2_g.as_slice().unwrap(), l.ln2_b.as_slice().unwrap()]);
        }
        v.extend([self.w_head.as_slice().unwrap(), self.b_head.as_slice().unwrap()]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.w_in.as_slice_mut().unwrap(), self.b_in.as_slice_mut().unwrap()];
        for l in &mut self.layers {
            v.push(l.wq.as_slice_mut().unwrap());
            v.push(l.wk.as_slice_mut().unwrap());
            v.push(l.wv.as_slice_mut().unwrap());
            v.push(l.wo.as_slice_mut().unwrap());
            v.push(l.ln1_g.as_slice_mut().unwrap());
            v.push(l.ln1_b.as_slice_mut().unwrap());
            v.push(l.w1.as_slice_mut().unwrap());
            v.push(l.b1.as_slice_mut().unwrap());
            v.push(l.w2.as_slice_mut().unwrap());
            v.push(l.b2.as_slice_mut().unwrap());
            v.push(l.ln2_g.as_slice_mut().unwrap());
            v.push(l.ln2_b.as_slice_mut().unwrap());
        }
        v.push(self.w_head.as_slice_mut().unwrap());
        v.push(self.b_head.as_slice_mut().unwrap());
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat parameter access, in [`Self::tensors`] order.
    pub fn get(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut idx: usize, value: f64) {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = value;
                return;
            }
            idx -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn add_scaled(&mut self, other: &ScorerWeights, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Binary layout: magic, version, manifest length, JSON shape manifest,
    /// then every tensor as little-endian f64 in [`Self::tensors`] order.
    pub fn write_to(&self, w: impl Write) -> Result<(), ScorerError> {
        self.write_with_meta(w, &serde_json::Value::Null)
    }

    /// Like [`Self::write_to`], with free-form provenance (seed, config hash)
    /// stored in the manifest.
    pub fn write_with_meta(&self, mut w: impl Write, meta: &serde_json::Value) -> Result<(), ScorerError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            shape: ScorerShape,
            tensor_lengths: Vec<usize>,
            meta: &'a serde_json::Value,
        }
        let lens: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        let manifest = serde_json::to_vec(&Manifest { shape: self.shape, tensor_lengths: lens, meta })
            .map_err(|e| ScorerError::Format(e.to_string()))?;
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u32).to_le_bytes())?;
        w.write_all(&manifest)?;
        for t in self.tensors() {
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ScorerError> {
        #[derive(Deserialize)]
        struct Manifest {
            shape: ScorerShape,
            tensor_lengths: Vec<usize>,
        }
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != WEIGHTS_MAGIC {
            return Err(ScorerError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(ScorerError::Format(format!("version {version}, expected {WEIGHTS_VERSION}")));
        }
        let mlen = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut mbuf = vec![0u8; mlen];
        r.read_exact(&mut mbuf)?;
        let m: Manifest = serde_json::from_slice(&mbuf).map_err(|e| ScorerError::Format(e.to_string()))?;
        let mut w = Self::zeros(m.shape);
        let expect: Vec<usize> = w.tensors().iter().map(|t| t.len()).collect();
        if expect != m.tensor_lengths {
            return Err(ScorerError::ShapeMismatch("manifest tensor lengths disagree with shape".into()));
        }
        let mut buf = [0u8; 8];
        for t in w.tensors_mut() {
            for x in t.iter_mut() {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
        }
        Ok(w)
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let t = (k * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise layer norm; returns (output, normalized input, 1/std per row).
fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let c = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mu = row.sum() / c;
        row.mapv_inplace(|v| v - mu);
        let var = row.dot(&row) / c;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        inv[i] = r;
    }
    let y = &xhat * g + b;
    (y, xhat, inv)
}

fn layer_norm_backward(dy: &Array2<f64>, xhat: &Array2<f64>, inv: &Array1<f64>, g: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dg = (dy * xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let c = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = xhat.row(i);
        let m1 = dh.sum() / c;
        let m2 = dh.dot(&xh) / c;
        let mut out = dx.row_mut(i);
        for j in 0..dy.ncols() {
            out[j] = inv[i] * (dh[j] - m1 - xh[j] * m2);
        }
    }
    (dx, dg, db)
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

struct LayerCache {
    h_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    ctx: Array2<f64>,
    xhat1: Array2<f64>,
    inv1: Array1<f64>,
    h1: Array2<f64>,
    z1: Array2<f64>,
    gz: Array2<f64>,
    xhat2: Array2<f64>,
    inv2: Array1<f64>,
}

pub struct ForwardCache {
    x: Array2<f64>,
    layers: Vec<LayerCache>,
    h_out: Array2<f64>,
    pub y: Array1<f64>,
}

fn check_shapes(w: &ScorerWeights, x: &ArrayView2<f64>, s: &ArrayView2<f64>) -> Result<(), ScorerError> {
    if x.ncols() != w.shape.input_width() {
        return Err(ScorerError::ShapeMismatch(format!("query width {} != {}", x.ncols(), w.shape.input_width())));
    }
    if s.ncols() != w.shape.c {
        return Err(ScorerError::ShapeMismatch(format!("token width {} != {}", s.ncols(), w.shape.c)));
    }
    if s.nrows() == 0 {
        return Err(ScorerError::ShapeMismatch("no future-state tokens".into()));
    }
    Ok(())
}

/// Scores for every query row of `x` against the token matrix `s`.
pub fn forward(w: &ScorerWeights, x: ArrayView2<f64>, s: ArrayView2<f64>) -> Result<ForwardCache, ScorerError> {
    check_shapes(w, &x, &s)?;
    let scale = 1.0 / (w.shape.c as f64).sqrt();
    let mut h = x.dot(&w.w_in.t()) + &w.b_in;
    let mut caches = Vec::with_capacity(w.layers.len());
    for l in &w.layers {
        let q = h.dot(&l.wq.t());
        let k = s.dot(&l.wk.t());
        let v = s.dot(&l.wv.t());
        let mut a = q.dot(&k.t()) * scale;
        softmax_rows(&mut a);
        let ctx = a.dot(&v);
        let o = ctx.dot(&l.wo.t());
        let (h1, xhat1, inv1) = layer_norm(&(&h + &o), &l.ln1_g, &l.ln1_b);
        let z1 = h1.dot(&l.w1.t()) + &l.b1;
        let gz = z1.mapv(gelu);
        let f = gz.dot(&l.w2.t()) + &l.b2;
        let (h2, xhat2, inv2) = layer_norm(&(&h1 + &f), &l.ln2_g, &l.ln2_b);
        caches.push(LayerCache { h_in: h, q, k, v, a, ctx, xhat1, inv1, h1, z1, gz, xhat2, inv2 });
        h = h2;
    }
    let y = (h.dot(&w.w_head) + w.b_head[0]).mapv(f64::tanh);
    Ok(ForwardCache { x: x.to_owned(), layers: caches, h_out: h, y })
}

/// Gradient of `sum_i dy_i * y_i` with respect to every parameter.
pub fn backward(w: &ScorerWeights, cache: &ForwardCache, s: ArrayView2<f64>, dy: ArrayView1<f64>) -> ScorerWeights {
    let mut g = ScorerWeights::zeros(w.shape);
    let scale = 1.0 / (w.shape.c as f64).sqrt();
    let dpre: Array1<f64> = &dy * &cache.y.mapv(|t| 1.0 - t * t);
    g.w_head = cache.h_out.t().dot(&dpre);
    g.b_head[0] = dpre.sum();
    let mut dh: Array2<f64> = dpre.view().insert_axis(Axis(1)).dot(&w.w_head.view().insert_axis(Axis(0)));
    for (li, l) in w.layers.iter().enumerate().rev() {
        let c = &cache.layers[li];
        let gl = &mut g.layers[li];
        let (dr2, dg2, db2) = layer_norm_backward(&dh, &c.xhat2, &c.inv2, &l.ln2_g);
        gl.ln2_g = dg2;
        gl.ln2_b = db2;
        // r2 = h1 + gelu(z1) W2^T + b2
        gl.w2 = dr2.t().dot(&c.gz);
        gl.b2 = dr2.sum_axis(Axis(0));
        let dgz = dr2.dot(&l.w2);
        let dz1 = &dgz * &c.z1.mapv(gelu_grad);
        gl.w1 = dz1.t().dot(&c.h1);
        gl.b1 = dz1.sum_axis(Axis(0));
        let dh1 = &dr2 + &dz1.dot(&l.w1);
        let (dr1, dg1, db1) = layer_norm_backward(&dh1, &c.xhat1, &c.inv1, &l.ln1_g);
        gl.ln1_g = dg1;
        gl.ln1_b = db1;
        // r1 = h_in + (a v) Wo^T
        gl.wo = dr1.t().dot(&c.ctx);
        let dctx = dr1.dot(&l.wo);
        let da = dctx.dot(&c.v.t());
        let dv = c.a.t().dot(&dctx);
        let mut dscore = Array2::zeros(c.a.raw_dim());
        for i in 0..c.a.nrows() {
            let ar = c.a.row(i);
            let dr = da.row(i);
            let dot = ar.dot(&dr);
            let mut out = dscore.row_mut(i);
            for j in 0..c.a.ncols() {
                out[j] = ar[j] * (dr[j] - dot) * scale;
            }
        }
        let dq = dscore.dot(&c.k);
        let dk = dscore.t().dot(&c.q);
        gl.wq = dq.t().dot(&c.h_in);
        gl.wk = dk.t().dot(&s);
        gl.wv = dv.t().dot(&s);
        dh = &dr1 + &dq.dot(&l.wq);
    }
    g.w_in = dh.t().dot(&cache.x);
    g.b_in = dh.sum_axis(Axis(0));
    g
}

/// Mean squared error over the rows and its gradient.
pub fn mse_loss_grad(w: &ScorerWeights, x: ArrayView2<f64>, s: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<(f64, ScorerWeights), ScorerError> {
    let cache = forward(w, x, s)?;
    let n = target.len() as f64;
    let diff = &cache.y - &target;
    let loss = diff.dot(&diff) / n;
    let dy = diff * (2.0 / n);
    Ok((loss, backward(w, &cache, s, dy.view())))
}

/// Sum of squared errors without gradient.
pub fn sse(w: &ScorerWeights, x: ArrayView2<f64>, s: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<f64, ScorerError> {
    let y = forward(w, x, s)?.y;
    let d = &y - &target;
    Ok(d.dot(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_inputs(shape: ScorerShape, m: usize, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((m, shape.input_width()), |_| rng.random_range(-1.0..1.0));
        let s = Array2::from_shape_fn((n, shape.c), |_| rng.random_range(-1.0..1.0));
        let t = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
        (x, s, t)
    }

    /// Straight-line re-implementation with explicit loops.
    fn naive_forward(w: &ScorerWeights, x: &Array2<f64>, s: &Array2<f64>) -> Vec<f64> {
        let c = w.shape.c;
        let matvec = |m: &Array2<f64>, v: &[f64]| -> Vec<f64> {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[[i, j]] * v[j]).sum()).collect()
        };
        let ln = |v: &[f64], g: &Array1<f64>, b: &Array1<f64>| -> Vec<f64> {
            let mu = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / v.len() as f64;
            v.iter().enumerate().map(|(i, a)| g[i] * (a - mu) / (var + 1e-5).sqrt() + b[i]).collect()
        };
        let mut out = Vec::new();
        for r in 0..x.nrows() {
            let xr: Vec<f64> = x.row(r).to_vec();
            let mut h: Vec<f64> = matvec(&w.w_in, &xr).iter().zip(w.b_in.iter()).map(|(a, b)| a + b).collect();
            for l in &w.layers {
                let q = matvec(&l.wq, &h);
                let keys: Vec<Vec<f64>> = (0..s.nrows()).map(|t| matvec(&l.wk, &s.row(t).to_vec())).collect();
                let vals: Vec<Vec<f64>> = (0..s.nrows()).map(|t| matvec(&l.wv, &s.row(t).to_vec())).collect();
                let logits: Vec<f64> = keys.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt()).collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                let mut ctx = vec![0.0; c];
                for (t, v) in vals.iter().enumerate() {
                    for j in 0..c {
                        ctx[j] += e[t] / z * v[j];
                    }
                }
                let o = matvec(&l.wo, &ctx);
                let r1: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
                let h1 = ln(&r1, &l.ln1_g, &l.ln1_b);
                let z1: Vec<f64> = matvec(&l.w1, &h1).iter().zip(l.b1.iter()).map(|(a, b)| gelu(a + b)).collect();
                let f: Vec<f64> = matvec(&l.w2, &z1).iter().zip(l.b2.iter()).map(|(a, b)| a + b).collect();
                let r2: Vec<f64> = h1.iter().zip(&f).map(|(a, b)| a + b).collect();
                h = ln(&r2, &l.ln2_g, &l.ln2_b);
            }
            out.push((h.iter().zip(w.w_head.iter()).map(|(a, b)| a * b).sum::<f64>() + w.b_head[0]).tanh());
        }
        out
    }

    fn small() -> ScorerShape {
        ScorerShape { c: 8, layers: 2 }
    }

    #[test]
    fn zero_network_scores_zero() {
        let w = ScorerWeights::zeros(small());
        let (x, s, _) = random_inputs(small(), 3, 5, 1);
        let y = forward(&w, x.view(), s.view()).unwrap().y;
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_naive_forward() {
        let w = ScorerWeights::init(ScorerShape { c: 16, layers: 3 }, 7);
        let (x, s, _) = random_inputs(w.shape, 4, 6, 2);
        let y = forward(&w, x.view(), s.view()).unwrap().y;
        for (a, b) in y.iter().zip(naive_forward(&w, &x, &s)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn token_permutation_invariance() {
        let w = ScorerWeights::init(small(), 3);
        let (x, s, _) = random_inputs(small(), 2, 5, 4);
        let perm = [3, 0, 4, 1, 2];
        let sp = Array2::from_shape_fn(s.raw_dim(), |(i, j)| s[[perm[i], j]]);
        let a = forward(&w, x.view(), s.view()).unwrap().y;
        let b = forward(&w, x.view(), sp.view()).unwrap().y;
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = ScorerWeights::init(small(), 11);
        let (x, s, t) = random_inputs(small(), 3, 4, 5);
        let (_, g) = mse_loss_grad(&w, x.view(), s.view(), t.view()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let idx = rng.random_range(0..w.param_count());
            let h = 1e-5;
            let mut wp = w.clone();
            wp.set(idx, w.get(idx) + h);
            let mut wm = w.clone();
            wm.set(idx, w.get(idx) - h);
            let lp = mse_loss_grad(&wp, x.view(), s.view(), t.view()).unwrap().0;
            let lm = mse_loss_grad(&wm, x.view(), s.view(), t.view()).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.get(idx);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let w = ScorerWeights::init(small(), 1);
        let bytes = w.to_bytes();
        let r = ScorerWeights::read_from(bytes.as_slice()).unwrap();
        assert_eq!(r, w);
        assert_eq!(r.to_bytes(), bytes);
        assert!(ScorerWeights::read_from(&bytes[..20]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = ScorerWeights::zeros(small());
        let x = Array2::zeros((1, 3));
        let s = Array2::zeros((2, 8));
        assert!(matches!(forward(&w, x.view(), s.view()), Err(ScorerError::ShapeMismatch(_))));
    }
}
