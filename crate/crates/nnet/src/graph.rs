//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. Parameters are borrowed from a [`ParamStore`] rather than copied.
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! a scalar loss with respect to every parameter that took part in it.
//!
//! The tape is built per sequence: there is no batch dimension, so every
//! activation is a `(positions, features)` matrix.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NnetError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean attention mask; `true` blocks a (query, key) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, blocked: Vec<bool>) -> Result<Self> {
        if blocked.len() != rows * cols {
            return Err(shape_err(
                "mask",
                format!("{rows}x{cols} vs {}", blocked.len()),
            ));
        }
        Ok(Self {
            rows,
            cols,
            blocked,
        })
    }

    /// Blocks every key column whose `padding` flag is set.
    pub fn key_padding(rows: usize, padding: &[bool]) -> Self {
        let cols = padding.len();
        let blocked = (0..rows).flat_map(|_| padding.iter().copied()).collect();
        Self {
            rows,
            cols,
            blocked,
        }
    }

    /// Position `i` may attend to keys `0..=i` only.
    pub fn causal(n: usize) -> Self {
        let blocked = (0..n).flat_map(|i| (0..n).map(move |j| j > i)).collect();
        Self {
            rows: n,
            cols: n,
            blocked,
        }
    }

    /// Union of two masks of the same shape.
    pub fn or(&self, other: &Mask) -> Result<Mask> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape_err("mask", "combining masks of different shape"));
        }
        let blocked = self
            .blocked
            .iter()
            .zip(&other.blocked)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            blocked,
        })
    }

    pub fn is_blocked(&self, r: usize, c: usize) -> bool {
        self.blocked[r * self.cols + c]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Rc<Vec<f64>>),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        smoothing: f64,
        denom: f64,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<'p> Graph<'p> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Training-mode graph drawing dropout masks from `rng`.
    pub fn training(params: &'p ParamStore, dropout_rate: f64, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(params);
        if dropout_rate > 0.0 {
            g.dropout = Some((dropout_rate, rng));
        }
        g
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `a · b`, or `a · bᵀ` when `trans_b` is set.
    pub fn matmul_opt(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("({m},{k}) x ({br},{bc}) trans_b={trans_b}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul { a, b, trans_b }, t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_opt(a, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    /// Adds a length-`n` row vector to every row of an `(m, n)` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(row).len() != n {
            return Err(shape_err(
                "add_row",
                format!("({m},{n}) + {:?}", self.value(row).shape()),
            ));
        }
        let r = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (v, b) in chunk.iter_mut().zip(r) {
                *v += b;
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::AddRow(x, row), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(x, factor), t)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu(x), t)
    }

    /// Inverted dropout; the identity in evaluation mode.
    pub fn dropout(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let rate = *rate;
        let keep = 1.0 - rate;
        let factors: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&factors).map(|(v, f)| v * f).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::MulConst(x, Rc::new(factors)), t)
    }

    /// Row-wise softmax. Entries blocked by `mask` get exactly zero weight;
    /// a fully blocked row yields all zeros.
    pub fn softmax(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if let Some(mask) = mask {
            if mask.dims() != (m, n) {
                return Err(shape_err(
                    "softmax",
                    format!("mask {:?} vs ({m},{n})", mask.dims()),
                ));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let dst = &mut out[r * n..(r + 1) * n];
            let open = |c: usize| mask.is_none_or(|mk| !mk.is_blocked(r, c));
            let max = (0..n)
                .filter(|&c| open(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for c in 0..n {
                if open(c) {
                    let e = (row[c] - max).exp();
                    dst[c] = e;
                    total += e;
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::Softmax(x), t))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(shape_err("layer_norm", format!("features {n}")));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            t,
        ))
    }

    /// Gathers rows of `table` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2();
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NnetError::TokenRange { id, vocab: v });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            t,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if start + width > n {
            return Err(shape_err("slice_cols", format!("{start}+{width} > {n}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * width);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + width]);
        }
        let t = Tensor::new(vec![m, width], out)?;
        Ok(self.push(Op::SliceCols { x, start }, t))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|p| self.value(*p).dims2().0)
            .ok_or_else(|| shape_err("concat_cols", "no parts"))?;
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).dims2().1).collect();
        if parts.iter().any(|p| self.value(*p).dims2().0 != m) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Label-smoothed cross entropy of row-wise softmax(`logits`) against
    /// `targets`, summed over non-ignored rows and divided by `denom`
    /// (the non-ignored row count when `None`).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        smoothing: f64,
        denom: Option<f64>,
    ) -> Result<Var> {
        let (m, n) = self.value(logits).dims2();
        if targets.len() != m {
            return Err(shape_err(
                "cross_entropy",
                format!("{m} rows vs {} targets", targets.len()),
            ));
        }
        let active = targets.iter().filter(|&&t| Some(t) != ignore).count();
        if active == 0 {
            return Err(NnetError::AllIgnored);
        }
        let denom = denom.unwrap_or(active as f64);
        let src = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if Some(target) == ignore {
                continue;
            }
            if target >= n {
                return Err(NnetError::TokenRange {
                    id: target,
                    vocab: n,
                });
            }
            let row = &src[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mut row_loss = -(1.0 - smoothing) * (row[target] - log_z);
            if smoothing > 0.0 {
                let mean_log = row.iter().map(|v| v - log_z).sum::<f64>() / n as f64;
                row_loss -= smoothing * mean_log;
            }
            loss += row_loss;
            for c in 0..n {
                probs[r * n + c] = (row[c] - log_z).exp();
            }
        }
        let t = Tensor::scalar(loss / denom);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                smoothing,
                denom,
                probs,
            },
            t,
        ))
    }

    /// Scaled dot-product attention: `softmax(q kᵀ / √d_k) v` with blocked
    /// pairs receiving zero weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&Mask>) -> Result<Var> {
        let (_, dk) = self.value(q).dims2();
        let (kr, kc) = self.value(k).dims2();
        let (vr, _) = self.value(v).dims2();
        if kc != dk || kr != vr {
            return Err(shape_err(
                "attention",
                format!("q (_, {dk}), k ({kr},{kc}), v ({vr}, _)"),
            ));
        }
        let scores = self.matmul_opt(q, k, true)?;
        let scores = self.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = self.softmax(scores, mask)?;
        self.matmul(weights, v)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::new(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, dy),
                Op::MatMul { a, b, trans_b } => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let (m, k) = ta.dims2();
                    let n = dy.dims2().1;
                    // dA = dY · op(B)ᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        dy.data(),
                        false,
                        tb.data(),
                        !trans_b,
                        &mut da,
                        false,
                    );
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(ta.shape().to_vec(), da).unwrap(),
                    );
                    // dB = Aᵀ · dY  (or dYᵀ · A when B was transposed)
                    let mut db = vec![0.0; k * n];
                    if *trans_b {
                        gemm(n, m, k, dy.data(), true, ta.data(), false, &mut db, false);
                    } else {
                        gemm(k, m, n, ta.data(), true, dy.data(), false, &mut db, false);
                    }
                    acc(
                        &mut grads,
                        *b,
                        Tensor::new(tb.shape().to_vec(), db).unwrap(),
                    );
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::AddRow(x, row) => {
                    let (_, n) = dy.dims2();
                    let mut dr = vec![0.0; n];
                    for chunk in dy.data().chunks(n.max(1)) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    acc(&mut grads, *row, Tensor::new(shape, dr).unwrap());
                    acc(&mut grads, *x, dy);
                }
                Op::Mul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let da = dy
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(g, y)| g * y)
                        .collect();
                    let db = dy
                        .data()
                        .iter()
                        .zip(ta.data())
                        .map(|(g, x)| g * x)
                        .collect();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(ta.shape().to_vec(), da).unwrap(),
                    );
                    acc(
                        &mut grads,
                        *b,
                        Tensor::new(tb.shape().to_vec(), db).unwrap(),
                    );
                }
                Op::Scale(x, f) => {
                    let mut d = dy;
                    d.scale_in_place(*f);
                    acc(&mut grads, *x, d);
                }
                Op::MulConst(x, factors) => {
                    let mut d = dy;
                    for (g, f) in d.data_mut().iter_mut().zip(factors.iter()) {
                        *g *= f;
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    let mut d = dy;
                    for (g, v) in d.data_mut().iter_mut().zip(tx.data()) {
                        if *v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().unwrap();
                    let (m, n) = y.dims2();
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = &y.data()[r * n..(r + 1) * n];
                        let gr = &dy.data()[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            d[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(vec![m, n], d).unwrap());
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let g = self.value(*gamma);
                    let (m, n) = dy.dims2();
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = &dy.data()[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..n {
                            dgamma[c] += gr[c] * hr[c];
                            dbeta[c] += gr[c];
                            let dh = gr[c] * g.data()[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        let scale = rstd[r] / n as f64;
                        for c in 0..n {
                            let dh = gr[c] * g.data()[c];
                            dx[r * n + c] = scale * (n as f64 * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(vec![m, n], dx).unwrap());
                    acc(
                        &mut grads,
                        *gamma,
                        Tensor::new(g.shape().to_vec(), dgamma).unwrap(),
                    );
                    let bshape = self.value(*beta).shape().to_vec();
                    acc(&mut grads, *beta, Tensor::new(bshape, dbeta).unwrap());
                }
                Op::Embedding { table, ids } => {
                    let tt = self.value(*table);
                    let (_, d) = tt.dims2();
                    let mut dt = Tensor::zeros(tt.shape());
                    let buf = dt.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            buf[id * d + c] += dy.data()[r * d + c];
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::SliceCols { x, start } => {
                    let tx = self.value(*x);
                    let (m, n) = tx.dims2();
                    let w = dy.dims2().1;
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + w]
                            .copy_from_slice(&dy.data()[r * w..(r + 1) * w]);
                    }
                    acc(
                        &mut grads,
                        *x,
                        Tensor::new(tx.shape().to_vec(), dx).unwrap(),
                    );
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = dy.dims2();
                    let mut offset = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let w = tp.dims2().1;
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&dy.data()[r * n + offset..r * n + offset + w]);
                        }
                        offset += w;
                        acc(
                            &mut grads,
                            *p,
                            Tensor::new(tp.shape().to_vec(), dp).unwrap(),
                        );
                    }
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, Tensor::full(&shape, dy.item()));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    smoothing,
                    denom,
                    probs,
                } => {
                    let tl = self.value(*logits);
                    let (m, n) = tl.dims2();
                    let upstream = dy.item() / denom;
                    let mut d = vec![0.0; m * n];
                    for (r, &target) in targets.iter().enumerate() {
                        if Some(target) == *ignore {
                            continue;
                        }
                        for c in 0..n {
                            let mut q = smoothing / n as f64;
                            if c == target {
                                q += 1.0 - smoothing;
                            }
                            d[r * n + c] = upstream * (probs[r * n + c] - q);
                        }
                    }
                    acc(
                        &mut grads,
                        *logits,
                        Tensor::new(tl.shape().to_vec(), d).unwrap(),
                    );
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Scaled dot-product attention on plain tensors (evaluation only).
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (q, k, v) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = g.attention(q, k, v, mask)?;
    Ok(g.value(out).clone())
}

/// Mean cross entropy without label smoothing, on plain tensors.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], ignore: Option<usize>) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(logits.clone());
    let loss = g.cross_entropy(x, targets, ignore, 0.0, None)?;
    Ok(g.value(loss).item())
}

/// Row-wise log-softmax of a 2-D tensor.
pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let (m, n) = logits.dims2();
    let mut out = logits.data().to_vec();
    for r in 0..m {
        let row = &mut out[r * n..(r + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= log_z;
        }
    }
    Tensor::new(vec![m, n], out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn attention_single_position_returns_value_row() {
        let q = t(&[&[0.3, -1.2]]);
        let k = t(&[&[2.0, 0.5]]);
        let v = t(&[&[7.0, -3.0, 1.5]]);
        let out = attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let q = t(&[&[1.0, 2.0], &[-0.5, 0.1]]);
        let k = t(&[&[0.4, 0.4], &[0.4, 0.4], &[0.4, 0.4]]);
        let v = t(&[&[1.0, 0.0], &[2.0, 3.0], &[6.0, -3.0]]);
        let out = attention(&q, &k, &v, None).unwrap();
        for r in 0..2 {
            assert!((out.get(r, 0) - 3.0).abs() < 1e-12);
            assert!((out.get(r, 1) - 0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_by_two_by_hand() {
        // q = [[1,0],[0,1]], k = [[1,0],[1,1]], scale 1/√2
        // row 0 scores: [1, 1]/√2 -> uniform
        // row 1 scores: [0, 1]/√2 -> w1 = 1/(1+e^{1/√2})
        let q = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = t(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let v = t(&[&[2.0, 4.0], &[6.0, 8.0]]);
        let out = attention(&q, &k, &v, None).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w0 = 1.0 / (1.0 + s.exp());
        let w1 = 1.0 - w0;
        let expected = [4.0, 6.0, 2.0 * w0 + 6.0 * w1, 4.0 * w0 + 8.0 * w1];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_shape_mismatch() {
        let q = t(&[&[1.0, 0.0]]);
        let k = t(&[&[1.0, 0.0, 3.0]]);
        let v = t(&[&[1.0]]);
        assert!(matches!(
            attention(&q, &k, &v, None),
            Err(NnetError::Shape { .. })
        ));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_and_blocked_are_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(t(&[&[0.1, 5.0, -2.0], &[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]]));
        let mask = Mask::causal(3);
        let y = g.softmax(x, Some(&mask)).unwrap();
        let y = g.value(y);
        for r in 0..3 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for c in r + 1..3 {
                assert_eq!(y.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let logits = Tensor::full(&[4, 7], 0.25);
        let loss = cross_entropy(&logits, &[0, 3, 6, 2], None).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_three_class_by_hand() {
        // logits [1,2,3], target 0: -log(e/(e+e²+e³)) = ln(1+e+e²)
        let logits = t(&[&[1.0, 2.0, 3.0]]);
        let loss = cross_entropy(&logits, &[0], None).unwrap();
        let e = 1f64.exp();
        assert!((loss - (1.0 + e + e * e).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_margin_limit() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let logits = t(&[&[margin, 0.0, 0.0]]);
            let loss = cross_entropy(&logits, &[0], None).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_ignores_positions() {
        let logits = t(&[&[1.0, 2.0, 3.0], &[9.0, -4.0, 0.0]]);
        let only_first = cross_entropy(&logits, &[0, 2], Some(2)).unwrap();
        let single = cross_entropy(&t(&[&[1.0, 2.0, 3.0]]), &[0], None).unwrap();
        assert_eq!(only_first, single);
        assert!(matches!(
            cross_entropy(&logits, &[2, 2], Some(2)),
            Err(NnetError::AllIgnored)
        ));
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[&[1.0, 2.0]]));
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let zeroed = g.scale(wv, 0.0);
        let loss = g.sum(zeroed);
        let grads = g.backward(loss);
        assert!(grads.dense(w, &store).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_gradient_matches_closed_form() {
        // loss = sum(δ ⊙ (x W)) => dL/dW = xᵀ δ
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[&[0.5, -1.0], &[2.0, 0.25], &[1.0, 1.0]]));
        let x = t(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 4.0]]);
        let delta = t(&[&[0.3, -0.7], &[1.1, 2.0]]);
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let wv = g.param(w);
        let y = g.matmul(xv, wv).unwrap();
        let dv = g.input(delta.clone());
        let weighted = g.mul(y, dv).unwrap();
        let loss = g.sum(weighted);
        let grads = g.backward(loss);
        let expected = transpose(&x).matmul(&delta).unwrap();
        let got = grads.dense(w, &store);
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn transpose(x: &Tensor) -> Tensor {
        let (m, n) = x.dims2();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = x.get(r, c);
            }
        }
        Tensor::new(vec![n, m], out).unwrap()
    }
}
