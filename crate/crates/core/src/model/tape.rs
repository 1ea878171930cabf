//! Reverse-mode differentiation over row-major 2-D values.
//!
//! Every op appends a node holding its output (and whatever the backward
//! pass needs); `backward` walks the nodes in reverse and accumulates
//! gradients. Parameters are read in place from [`ModelParams`] and their
//! gradients come back in the same layout.

use std::collections::HashMap;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::gemm_acc;
use crate::rng::SeededRng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch layout of one attention call.
#[derive(Debug, Clone)]
pub struct AttnGeom {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch × k_len`; false keys are never attended to.
    pub key_valid: Vec<bool>,
}

impl AttnGeom {
    #[inline]
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_valid[b * self.k_len + j] && (!self.causal || j <= i)
    }
}

enum Op {
    Input,
    Param(usize),
    Embed { table: Var, ids: Vec<usize>, scale: f64 },
    Add(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, probs: Vec<f64>, geom: AttnGeom },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub struct Tape<'a> {
    params: &'a ModelParams,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(p) => &self.params.tensor(p).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.push(Op::Input, rows, cols, data)
    }

    /// Leaf for a named parameter; 1-D tensors become a single row.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .position(name)
            .ok_or_else(|| Error::Shape(format!("no parameter named {name}")))?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        let shape = &self.params.tensor(idx).shape;
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
            [] => (1, 1),
        };
        let v = self.push(Op::Param(idx), rows, cols, Vec::new());
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    /// Gathers rows of `table`, scaled.
    pub fn embed(&mut self, table: Var, ids: &[usize], scale: f64) -> Var {
        let (vocab, d) = self.shape(table);
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            debug_assert!(id < vocab);
            out.extend(t[id * d..(id + 1) * d].iter().map(|v| v * scale));
        }
        self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
                scale,
            },
            ids.len(),
            d,
            out,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (rows, cols) = self.shape(a);
        debug_assert_eq!((rows, cols), self.shape(b));
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), rows, cols, out)
    }

    /// `x · w + b` with `w` stored `in × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (rows, k) = self.shape(x);
        let (wk, n) = self.shape(w);
        debug_assert_eq!(k, wk);
        let bias = self.value(b);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm_acc(rows, k, n, self.value(x), (k, 1), self.value(w), (n, 1), &mut out, 1.0);
        self.push(Op::Linear { x, w, b }, rows, n, out)
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let xv = self.value(x);
        let (gv, bv) = (self.value(g), self.value(b));
        let mut out = vec![0.0; rows * cols];
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * gv[c] + bv[c];
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                g,
                b,
                xhat,
                inv_std,
            },
            rows,
            cols,
            out,
        )
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        self.push(Op::Gelu(x), rows, cols, out)
    }

    /// Inverted dropout with keep-scaling `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut SeededRng) -> Var {
        let (rows, cols) = self.shape(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.unit() < p { 0.0 } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(Op::Dropout { x, mask }, rows, cols, out)
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q` (`batch·q_len × d`), `k` and `v` (`batch·k_len × d`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, geom: AttnGeom) -> Var {
        let (_, d) = self.shape(q);
        let (bsz, lq, lk, heads) = (geom.batch, geom.q_len, geom.k_len, geom.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![0.0; bsz * lq * d];
        let mut probs = vec![0.0; bsz * heads * lq * lk];
        let mut scores = vec![0.0; lk];
        for b in 0..bsz {
            for h in 0..heads {
                for i in 0..lq {
                    let qi = &qv[(b * lq + i) * d + h * dh..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..lk {
                        if geom.allowed(b, i, j) {
                            let kj = &kv[(b * lk + j) * d + h * dh..][..dh];
                            let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                            scores[j] = s;
                            max = max.max(s);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let p = &mut probs[((b * heads + h) * lq + i) * lk..][..lk];
                    let mut sum = 0.0;
                    for j in 0..lk {
                        if geom.allowed(b, i, j) {
                            let e = (scores[j] - max).exp();
                            p[j] = e;
                            sum += e;
                        }
                    }
                    let o = &mut out[(b * lq + i) * d + h * dh..][..dh];
                    for j in 0..lk {
                        if geom.allowed(b, i, j) {
                            p[j] /= sum;
                            let vj = &vv[(b * lk + j) * d + h * dh..][..dh];
                            for (oc, vc) in o.iter_mut().zip(vj) {
                                *oc += p[j] * vc;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Op::Attention {
                q,
                k,
                v,
                probs,
                geom,
            },
            bsz * lq,
            d,
            out,
        )
    }

    /// Mean token cross-entropy over rows with a target; `None` rows are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (rows, vocab) = self.shape(logits);
        if targets.len() != rows {
            return Err(Error::Shape(format!("{} targets for {rows} rows", targets.len())));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::InvalidArgument("no non-padding targets in batch".into()));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; rows * vocab];
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= vocab {
                return Err(Error::TokenOutOfRange {
                    id: t as u32,
                    vocab,
                });
            }
            let row = &lv[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, l) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (l - max).exp();
                sum += *p;
            }
            probs[r * vocab..(r + 1) * vocab].iter_mut().for_each(|p| *p /= sum);
            total += max + sum.ln() - row[t];
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            1,
            1,
            vec![total / count as f64],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> ModelParams {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len().max(1)]);
        let mut out = self.params.zeros_like();

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    for (o, v) in out.tensor_mut(*p).data.iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::Embed { table, ids, scale } => {
                    let d = node.cols;
                    self.accumulate(&mut grads, *table, |acc| {
                        for (r, &id) in ids.iter().enumerate() {
                            for c in 0..d {
                                acc[id * d + c] += g[r * d + c] * scale;
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        self.accumulate(&mut grads, v, |acc| {
                            acc.iter_mut().zip(&g).for_each(|(x, y)| *x += y)
                        });
                    }
                }
                Op::Linear { x, w, b } => {
                    let (rows, k) = self.shape(*x);
                    let n = node.cols;
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    self.accumulate(&mut grads, *x, |acc| {
                        // dx += g · wᵀ
                        gemm_acc(rows, n, k, &g, (n, 1), wv, (1, n), acc, 1.0);
                    });
                    self.accumulate(&mut grads, *w, |acc| {
                        // dw += xᵀ · g
                        gemm_acc(k, rows, n, xv, (1, k), &g, (n, 1), acc, 1.0);
                    });
                    self.accumulate(&mut grads, *b, |acc| {
                        for r in 0..rows {
                            for (a, v) in acc.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *a += v;
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    g: gamma,
                    b,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = (node.rows, node.cols);
                    let gv = self.value(*gamma);
                    self.accumulate(&mut grads, *gamma, |acc| {
                        for r in 0..rows {
                            for c in 0..cols {
                                acc[c] += g[r * cols + c] * xhat[r * cols + c];
                            }
                        }
                    });
                    self.accumulate(&mut grads, *b, |acc| {
                        for r in 0..rows {
                            for c in 0..cols {
                                acc[c] += g[r * cols + c];
                            }
                        }
                    });
                    self.accumulate(&mut grads, *x, |acc| {
                        let mut dxhat = vec![0.0; cols];
                        for r in 0..rows {
                            let xh = &xhat[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                dxhat[c] = g[r * cols + c] * gv[c];
                            }
                            let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                            let mean_dx =
                                dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                            for c in 0..cols {
                                acc[r * cols + c] +=
                                    inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    self.accumulate(&mut grads, *x, |acc| {
                        for ((a, &v), gi) in acc.iter_mut().zip(xv).zip(&g) {
                            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            *a += gi * (0.5 * (1.0 + t) + 0.5 * v * dt);
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    self.accumulate(&mut grads, *x, |acc| {
                        for ((a, m), gi) in acc.iter_mut().zip(mask).zip(&g) {
                            *a += gi * m;
                        }
                    });
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    probs,
                    geom,
                } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, probs, geom, &g);
                    for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                        self.accumulate(&mut grads, var, |acc| {
                            acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b)
                        });
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let vocab = self.shape(*logits).1;
                    let scale = g[0] / *count as f64;
                    self.accumulate(&mut grads, *logits, |acc| {
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for c in 0..vocab {
                                acc[r * vocab + c] += scale * probs[r * vocab + c];
                            }
                            acc[r * vocab + t] -= scale;
                        }
                    });
                }
            }
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if matches!(self.nodes[v.0].op, Op::Input) {
            return;
        }
        let len = self.nodes[v.0].rows * self.nodes[v.0].cols;
        let acc = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(acc);
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        probs: &[f64],
        geom: &AttnGeom,
        g: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (_, d) = self.shape(q);
        let (bsz, lq, lk, heads) = (geom.batch, geom.q_len, geom.k_len, geom.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; lk];
        for b in 0..bsz {
            for h in 0..heads {
                for i in 0..lq {
                    let p = &probs[((b * heads + h) * lq + i) * lk..][..lk];
                    let go = &g[(b * lq + i) * d + h * dh..][..dh];
                    let mut dot = 0.0;
                    for j in 0..lk {
                        if p[j] != 0.0 || geom.allowed(b, i, j) {
                            let vj = &vv[(b * lk + j) * d + h * dh..][..dh];
                            dp[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                            dot += p[j] * dp[j];
                        } else {
                            dp[j] = 0.0;
                        }
                    }
                    let qrow = (b * lq + i) * d + h * dh;
                    for j in 0..lk {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - dot) * scale;
                        let krow = (b * lk + j) * d + h * dh;
                        for c in 0..dh {
                            dq[qrow + c] += ds * kv[krow + c];
                            dk[krow + c] += ds * qv[qrow + c];
                            dv[krow + c] += p[j] * go[c];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}
