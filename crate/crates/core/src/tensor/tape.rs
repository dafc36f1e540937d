//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass. Nodes are appended in evaluation
//! order, so walking the tape backwards visits every node after all of its
//! consumers. Tapes are not reused across optimizer steps.

use std::f32::consts::PI;

use super::gemm::{gemm, MatRef};
use super::tensor::{numel, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f32 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Gelu(Var),
    Relu(Var),
    Sum(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    GatherRows { src: Var, index: Vec<Option<usize>> },
    CausalWindow { x: Var, seq_len: usize, kernel: usize },
    Attention { qkv: Var, seq_len: usize, heads: usize, probs: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    needs_grad: bool,
    param: Option<String>,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (numel(&shape[..shape.len() - 1]), shape[shape.len() - 1]),
    }
}

fn gelu(x: f32) -> f32 {
    let c = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let c = (2.0 / PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable in-place softmax of one slice.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

pub(crate) fn gelu_scalar(x: f32) -> f32 {
    gelu(x)
}

/// Layer normalization of one slice, shared with the incremental decoder.
pub(crate) fn layer_norm_row(x: &[f32], gain: &[f32], bias: &[f32], out: &mut [f32]) {
    let d = x.len() as f32;
    let mean = x.iter().sum::<f32>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, needs_grad, param: None, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf holding `t`; it receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// A constant leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Var {
        self.push(shape, data, Op::Leaf, false)
    }

    /// Binds a named parameter. Trainable parameters get their gradient
    /// written back by [`Tape::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store.get(name)?;
        let v = self.leaf(t);
        if t.requires_grad {
            self.nodes[v.0].param = Some(name.to_string());
        }
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .unwrap_or_else(|_| {
                let n = &self.nodes[v.0];
                let mut t = Tensor::zeros(n.shape.clone());
                t.data_mut().copy_from_slice(&n.value);
                t
            })
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::new(self.value(a), m, k),
            MatRef::new(self.value(b), k, n),
            0.0,
            &mut out,
            n,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    /// Adds a `[d]` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(a));
        if self.shape(row) != [cols] {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(cols)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, row), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("mul {:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|&v| f64::from(v)).sum::<f64>() as f32;
        let ng = self.ng(a);
        self.push(vec![], vec![s], Op::Sum(a), ng)
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(a));
        if cols == 0 {
            return Err(Error::Shape("softmax over an empty last dimension".into()));
        }
        let mut out = self.value(a).to_vec();
        out.chunks_exact_mut(cols).for_each(softmax_in_place);
        let ng = self.ng(a);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax(a), ng))
    }

    /// Normalizes over the last dimension, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm over {:?} with gain {:?}, bias {:?}",
                self.shape(x),
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let h = (row[i] - mean) * rs;
                xhat[r * d + i] = h;
                out[r * d + i] = h * g[i] + b[i];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm { x, gain, bias, xhat, rstd },
            ng,
        ))
    }

    /// Row gather from a `[R×d]` source; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, index: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(Error::Shape(format!("gather_rows source must be 2-D, got {s:?}")));
        }
        let (n_rows, d) = (s[0], s[1]);
        let mut out = vec![0.0; index.len() * d];
        let sv = self.value(src);
        for (o, idx) in index.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= n_rows {
                    return Err(Error::Index(format!("row {i} of {n_rows}")));
                }
                out[o * d..(o + 1) * d].copy_from_slice(&sv[i * d..(i + 1) * d]);
            }
        }
        let ng = self.ng(src);
        Ok(self.push(
            vec![index.len(), d],
            out,
            Op::GatherRows { src, index: index.to_vec() },
            ng,
        ))
    }

    /// Builds the causal im2col matrix for a 1-D convolution: for each row
    /// `t` of every length-`seq_len` sequence, concatenates rows
    /// `t-kernel+1 ..= t`, with zeros before the start of the sequence.
    pub fn causal_window(&mut self, x: Var, seq_len: usize, kernel: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || seq_len == 0 || s[0] % seq_len != 0 || kernel == 0 {
            return Err(Error::Shape(format!(
                "causal_window over {s:?} with seq_len {seq_len}, kernel {kernel}"
            )));
        }
        let (rows, c) = (s[0], s[1]);
        let xv = self.value(x);
        let mut out = vec![0.0; rows * kernel * c];
        for r in 0..rows {
            let t = r % seq_len;
            for j in 0..kernel {
                let back = kernel - 1 - j;
                if t >= back {
                    let src = r - back;
                    let dst = r * kernel * c + j * c;
                    out[dst..dst + c].copy_from_slice(&xv[src * c..(src + 1) * c]);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(vec![rows, kernel * c], out, Op::CausalWindow { x, seq_len, kernel }, ng))
    }

    /// Causal multi-head self-attention over packed `[B·T × 3d]` projections
    /// (queries, keys, values side by side). Returns `[B·T × d]`.
    pub fn causal_attention(&mut self, qkv: Var, seq_len: usize, heads: usize) -> Result<Var> {
        let s = self.shape(qkv);
        if s.len() != 2 || s[1] % 3 != 0 || seq_len == 0 || s[0] % seq_len != 0 {
            return Err(Error::Shape(format!("attention over {s:?} with seq_len {seq_len}")));
        }
        let d = s[1] / 3;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("d_model {d} not divisible by {heads} heads")));
        }
        let (rows, t) = (s[0], seq_len);
        let batch = rows / t;
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let qv = self.value(qkv);
        let mut probs = vec![0.0; batch * heads * t * t];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * t * 3 * d;
                let q = MatRef::strided(&qv[base + h * hd..], t, hd, 3 * d);
                let k = MatRef::strided(&qv[base + d + h * hd..], t, hd, 3 * d);
                let v = MatRef::strided(&qv[base + 2 * d + h * hd..], t, hd, 3 * d);
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                gemm(scale, q, k.t(), 0.0, p, t);
                for i in 0..t {
                    let row = &mut p[i * t..(i + 1) * t];
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|v| *v = 0.0);
                }
                gemm(1.0, MatRef::new(p, t, t), v, 0.0, &mut out[b * t * d + h * hd..], d);
            }
        }
        let ng = self.ng(qkv);
        Ok(self.push(
            vec![rows, d],
            out,
            Op::Attention { qkv, seq_len, heads, probs },
            ng,
        ))
    }

    /// Sum over masked rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || s[0] != mask.len() {
            return Err(Error::Shape(format!(
                "cross_entropy logits {s:?} with {} targets and {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let (n, v) = (s[0], s[1]);
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0f64;
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let tgt = targets[r];
            if tgt >= v {
                return Err(Error::Index(format!("target id {tgt} outside vocabulary of {v}")));
            }
            let row = &lv[r * v..(r + 1) * v];
            let p = &mut probs[r * v..(r + 1) * v];
            p.copy_from_slice(row);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f32>().ln();
            total += f64::from(lse - row[tgt]);
            softmax_in_place(p);
        }
        let ng = self.ng(logits);
        Ok(self.push(
            vec![],
            vec![total as f32],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            ng,
        ))
    }

    fn acc(&mut self, v: Var, delta: &[f32]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            slot => *slot = Some(delta.to_vec()),
        }
    }

    fn acc_owned(&mut self, v: Var, delta: Vec<f32>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot => *slot = Some(delta),
        }
    }

    /// Back-propagates from a scalar `loss`. Leaf gradients accumulate across
    /// repeated calls; intermediate gradients are consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.ng(loss) {
            return Ok(());
        }
        self.acc(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: Vec<f32>) {
        // Ops read from `self.nodes` and write into `self.grads`; the op is
        // temporarily moved out so saved buffers can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        1.0,
                        MatRef::new(&g, m, n),
                        MatRef::new(self.value(*b), k, n).t(),
                        0.0,
                        &mut da,
                        k,
                    );
                    self.acc_owned(*a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        1.0,
                        MatRef::new(self.value(*a), m, k).t(),
                        MatRef::new(&g, m, n),
                        0.0,
                        &mut db,
                        n,
                    );
                    self.acc_owned(*b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(*a, &g);
                self.acc(*b, &g);
            }
            Op::AddRow(a, row) => {
                self.acc(*a, &g);
                if self.ng(*row) {
                    let d = self.shape(*row)[0];
                    let mut dr = vec![0.0; d];
                    for chunk in g.chunks_exact(d) {
                        dr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                    self.acc_owned(*row, dr);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let da = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    self.acc_owned(*a, da);
                }
                if self.ng(*b) {
                    let db = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    self.acc_owned(*b, db);
                }
            }
            Op::Scale(a, s) => {
                let da = g.iter().map(|x| x * s).collect();
                self.acc_owned(*a, da);
            }
            Op::Gelu(a) => {
                let da = g.iter().zip(self.value(*a)).map(|(gy, &x)| gy * gelu_grad(x)).collect();
                self.acc_owned(*a, da);
            }
            Op::Relu(a) => {
                let da = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(gy, &x)| if x > 0.0 { *gy } else { 0.0 })
                    .collect();
                self.acc_owned(*a, da);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; numel(self.shape(*a))];
                self.acc_owned(*a, da);
            }
            Op::Softmax(a) => {
                let (_, cols) = rows_cols(self.shape(*a));
                let y = &self.nodes[i].value;
                let mut da = vec![0.0; y.len()];
                for ((dx, yr), gr) in
                    da.chunks_exact_mut(cols).zip(y.chunks_exact(cols)).zip(g.chunks_exact(cols))
                {
                    let dot: f32 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..cols {
                        dx[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc_owned(*a, da);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.shape(*gain)[0];
                let rows = rstd.len();
                if self.ng(*gain) || self.ng(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                            db[j] += g[r * d + j];
                        }
                    }
                    self.acc_owned(*gain, dg);
                    self.acc_owned(*bias, db);
                }
                if self.ng(*x) {
                    let gv = self.value(*gain);
                    let mut dx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= d as f32;
                        mean_dh_h /= d as f32;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                    self.acc_owned(*x, dx);
                }
            }
            Op::GatherRows { src, index } => {
                let d = self.shape(*src)[1];
                let mut ds = vec![0.0; numel(self.shape(*src))];
                for (o, idx) in index.iter().enumerate() {
                    if let Some(r) = *idx {
                        for j in 0..d {
                            ds[r * d + j] += g[o * d + j];
                        }
                    }
                }
                self.acc_owned(*src, ds);
            }
            Op::CausalWindow { x, seq_len, kernel } => {
                let (rows, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut dx = vec![0.0; rows * c];
                for r in 0..rows {
                    let t = r % seq_len;
                    for j in 0..*kernel {
                        let back = kernel - 1 - j;
                        if t >= back {
                            let src = r - back;
                            let off = r * kernel * c + j * c;
                            for q in 0..c {
                                dx[src * c + q] += g[off + q];
                            }
                        }
                    }
                }
                self.acc_owned(*x, dx);
            }
            Op::Attention { qkv, seq_len, heads, probs } => {
                let dqkv = self.attention_backward(*qkv, *seq_len, *heads, probs, &g);
                self.acc_owned(*qkv, dqkv);
            }
            Op::CrossEntropy { logits, targets, mask, probs } => {
                let v = self.shape(*logits)[1];
                let mut dl = vec![0.0; probs.len()];
                for r in 0..targets.len() {
                    if !mask[r] {
                        continue;
                    }
                    for j in 0..v {
                        dl[r * v + j] = g[0] * probs[r * v + j];
                    }
                    dl[r * v + targets[r]] -= g[0];
                }
                self.acc_owned(*logits, dl);
            }
        }
        self.nodes[i].op = op;
    }

    fn attention_backward(
        &self,
        qkv: Var,
        t: usize,
        heads: usize,
        probs: &[f32],
        g: &[f32],
    ) -> Vec<f32> {
        let rows = self.shape(qkv)[0];
        let d = self.shape(qkv)[1] / 3;
        let hd = d / heads;
        let batch = rows / t;
        let scale = 1.0 / (hd as f32).sqrt();
        let qv = self.value(qkv);
        let mut dqkv = vec![0.0; rows * 3 * d];
        let mut dp = vec![0.0; t * t];
        for b in 0..batch {
            let base = b * t * 3 * d;
            for h in 0..heads {
                let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                let q = MatRef::strided(&qv[base + h * hd..], t, hd, 3 * d);
                let k = MatRef::strided(&qv[base + d + h * hd..], t, hd, 3 * d);
                let v = MatRef::strided(&qv[base + 2 * d + h * hd..], t, hd, 3 * d);
                let go = MatRef::strided(&g[b * t * d + h * hd..], t, hd, d);
                // dV = Pᵀ·dO
                gemm(
                    1.0,
                    MatRef::new(p, t, t).t(),
                    go,
                    0.0,
                    &mut dqkv[base + 2 * d + h * hd..],
                    3 * d,
                );
                // dP = dO·Vᵀ, then dS = P ⊙ (dP − rowsum(dP ⊙ P))
                gemm(1.0, go, v.t(), 0.0, &mut dp, t);
                for i in 0..t {
                    let pr = &p[i * t..(i + 1) * t];
                    let dr = &mut dp[i * t..(i + 1) * t];
                    let dot: f32 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                    for j in 0..t {
                        dr[j] = if j <= i { pr[j] * (dr[j] - dot) } else { 0.0 };
                    }
                }
                gemm(scale, MatRef::new(&dp, t, t), k, 0.0, &mut dqkv[base + h * hd..], 3 * d);
                gemm(
                    scale,
                    MatRef::new(&dp, t, t).t(),
                    q,
                    0.0,
                    &mut dqkv[base + d + h * hd..],
                    3 * d,
                );
            }
        }
        dqkv
    }

    /// Adds the gradients of every bound trainable parameter into `store`.
    /// Trainable parameters that were unreachable receive zeros.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.param else { continue };
            let t = store.get_mut(name)?;
            match &self.grads[i] {
                Some(g) => t.accumulate_grad(g),
                None => {
                    if t.grad.is_none() {
                        t.zero_grad();
                    }
                }
            }
        }
        Ok(())
    }
}
