use std::collections::HashMap;

use crate::gemm::gemm;
use crate::{mismatch, AdError, ParamId, ParamStore, Tensor};

/// Variance floor of layer and batch normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnGeom {
    batch: usize,
    seq: usize,
    heads: usize,
    dim: usize,
    exclude_self: bool,
}

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    Reshape(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Conv2d { x: Var, w: Var, b: Var, cols: Vec<f64>, g: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, probs: Vec<f64>, g: AttnGeom },
    BceLogits { z: Var, targets: Tensor, weights: Vec<f64>, norm: f64 },
    SquaredError { x: Var, target: Tensor, weights: Vec<f64>, norm: f64 },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// Values are computed eagerly. Nodes that depend on no leaf or parameter
/// are marked constant and receive no gradient.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    signature: u64,
}

/// Gradients of a scalar with respect to every differentiable node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients, in the order parameters were first read.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn normalize(x: &[f64], group: usize) -> (Vec<f64>, f64) {
    let n = group as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (vec![mean, var], 1.0 / (var + NORM_EPS).sqrt())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every activation pattern seen so far (ReLU signs, pooling
    /// winners). Two evaluations with equal signatures lie on the same
    /// smooth piece of the function.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    fn mix(&mut self, word: u64) {
        self.signature = (self.signature ^ word).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
    }

    fn mix_bits(&mut self, bits: impl Iterator<Item = bool>) {
        let mut word = 0u64;
        let mut n = 0;
        for b in bits {
            word = (word << 1) | u64::from(b);
            n += 1;
            if n == 64 {
                self.mix(word);
                word = 0;
                n = 0;
            }
        }
        self.mix(word ^ ((n as u64) << 56));
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_data(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        let t = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(t, op, requires_grad)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Reads a parameter; repeated reads return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var, AdError> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let req = self.req(a) || self.req(b);
        Ok(self.push_data(x.shape().to_vec(), data, node, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let req = self.req(x);
        self.push(value, Op::Affine(x, scale), req)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// Adds `b` to every row; `b` has as many elements as the last dimension of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = *xv.shape().last().unwrap_or(&0);
        if bv.len() != c {
            return Err(mismatch("add_bias", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let req = self.req(x) || self.req(b);
        Ok(self.push_data(xv.shape().to_vec(), data, Op::AddBias(x, b), req))
    }

    /// Product of `[m, k]` and `[k, n]` matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let req = self.req(a) || self.req(b);
        Ok(self.push_data(vec![m, n], out, Op::MatMul(a, b), req))
    }

    /// `x W + b` for `x: [m, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AdError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(mismatch("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let req = parts.iter().any(|&p| self.req(p));
        Ok(self.push_data(vec![rows, total], data, Op::ConcatCols(parts.to_vec()), req))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > cols {
            return Err(mismatch("slice_cols", self.shape(x), &[start, len]));
        }
        let src = self.value(x).data();
        let data = (0..rows).flat_map(|r| src[r * cols + start..r * cols + start + len].iter().copied()).collect();
        let req = self.req(x);
        Ok(self.push_data(vec![rows, len], data, Op::SliceCols { x, start }, req))
    }

    /// Row `i` of the result is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AdError> {
        let (rows, cols) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(mismatch("gather_rows", self.shape(x), &[bad]));
        }
        let src = self.value(x).data();
        let data = idx.iter().flat_map(|&i| src[i * cols..(i + 1) * cols].iter().copied()).collect();
        let req = self.req(x);
        Ok(self.push_data(vec![idx.len(), cols], data, Op::GatherRows { x, idx: idx.to_vec() }, req))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        let value = self.value(x).reshape(shape)?;
        let req = self.req(x);
        Ok(self.push(value, Op::Reshape(x), req))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        self.mix_bits(xv.data().iter().map(|&v| v > 0.0));
        let req = self.req(x);
        self.push(xv.map(|v| v.max(0.0)), Op::Relu(x), req)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let xv = self.value(x).clone();
        self.mix_bits(xv.data().iter().map(|&v| v > 0.0));
        let req = self.req(x);
        self.push(xv.map(|v| if v > 0.0 { v } else { alpha * v }), Op::LeakyRelu(x, alpha), req)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let req = self.req(x);
        self.push(value, Op::Tanh(x), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let req = self.req(x);
        self.push(value, Op::Sigmoid(x), req)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap_or(&1);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = xv.shape().to_vec();
        let req = self.req(x);
        self.push_data(shape, data, Op::Softmax(x), req)
    }

    /// Normalizes each row over the last dimension, then applies `gamma * . + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AdError> {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap_or(&0);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(mismatch("layer_norm", xv.shape(), self.shape(gamma)));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / c.max(1);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in xv.data().chunks(c) {
            let (stats, inv) = normalize(row, c);
            inv_std.push(inv);
            xhat.extend(row.iter().map(|v| (v - stats[0]) * inv));
        }
        let data = xhat.iter().enumerate().map(|(i, &h)| h * g[i % c] + b[i % c]).collect();
        let shape = xv.shape().to_vec();
        let req = self.req(x) || self.req(gamma) || self.req(beta);
        Ok(self.push_data(shape, data, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, req))
    }

    fn channel_layout(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize), AdError> {
        let s = self.shape(x);
        if s.len() < 2 || self.value(gamma).len() != s[1] || self.value(beta).len() != s[1] {
            return Err(mismatch(op, s, self.shape(gamma)));
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }

    fn batch_norm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        fixed: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, BatchNormStats), AdError> {
        let (batch, ch, inner) = self.channel_layout("batch_norm", x, gamma, beta)?;
        let xv = self.value(x).data();
        let at = |n: usize, c: usize, i: usize| (n * ch + c) * inner + i;
        let mut stats = BatchNormStats { mean: vec![0.0; ch], var: vec![0.0; ch] };
        let mut inv_std = vec![0.0; ch];
        for c in 0..ch {
            let (mean, var) = match fixed {
                Some((m, v)) => (m[c], v[c]),
                None => {
                    let vals: Vec<f64> = (0..batch).flat_map(|n| (0..inner).map(move |i| xv[at(n, c, i)])).collect();
                    let (s, _) = normalize(&vals, vals.len());
                    (s[0], s[1])
                }
            };
            stats.mean[c] = mean;
            stats.var[c] = var;
            inv_std[c] = 1.0 / (var + NORM_EPS).sqrt();
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut data = vec![0.0; xv.len()];
        for n in 0..batch {
            for c in 0..ch {
                for i in 0..inner {
                    let j = at(n, c, i);
                    xhat[j] = (xv[j] - stats.mean[c]) * inv_std[c];
                    data[j] = xhat[j] * g[c] + b[c];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let req = self.req(x) || self.req(gamma) || self.req(beta);
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats: fixed.is_none() };
        Ok((self.push_data(shape, data, op, req), stats))
    }

    /// Batch normalization over `[batch, channels, ...]` using the batch's own
    /// per-channel statistics, which are returned for running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchNormStats), AdError> {
        self.batch_norm_with(x, gamma, beta, None)
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var, AdError> {
        let ch = self.shape(x).get(1).copied().unwrap_or(0);
        if mean.len() != ch || var.len() != ch {
            return Err(mismatch("batch_norm_eval", self.shape(x), &[mean.len(), var.len()]));
        }
        self.batch_norm_with(x, gamma, beta, Some((mean, var))).map(|(v, _)| v)
    }

    /// Stride-1 convolution of `x: [B, C, H, W]` with `w: [O, C, k, k]` and
    /// bias `b: [O]`, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var, AdError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[batch, cin, h, wd], &[cout, cin2, k, k2]) = (&xs[..], &ws[..]) else {
            return Err(mismatch("conv2d", &xs, &ws));
        };
        if cin != cin2 || k != k2 || self.value(b).len() != cout || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        let (ho, wo) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
        let g = ConvGeom { batch, cin, h, w: wd, cout, k, pad, ho, wo };
        let (ckk, p) = (cin * k * k, ho * wo);
        let xv = self.value(x).data();
        let mut cols = vec![0.0; batch * ckk * p];
        for n in 0..batch {
            let cb = &mut cols[n * ckk * p..(n + 1) * ckk * p];
            for c in 0..cin {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (c * k + ki) * k + kj;
                        for oy in 0..ho {
                            let iy = (oy + ki) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox + kj) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    cb[row * p + oy * wo + ox] = xv[((n * cin + c) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let (wv, bv) = (self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; batch * cout * p];
        for n in 0..batch {
            let ob = &mut out[n * cout * p..(n + 1) * cout * p];
            for (o, chunk) in ob.chunks_mut(p).enumerate() {
                chunk.fill(bv[o]);
            }
            gemm(cout, ckk, p, wv, false, &cols[n * ckk * p..(n + 1) * ckk * p], false, ob, true);
        }
        let req = self.req(x) || self.req(w) || self.req(b);
        Ok(self.push_data(vec![batch, cout, ho, wo], out, Op::Conv2d { x, w, b, cols, g }, req))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.shape(x).to_vec();
        let [batch, ch, h, w] = s[..] else {
            return Err(mismatch("max_pool2", &s, &[]));
        };
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * ch * ho * wo);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..batch * ch {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[j] > xv[best] {
                            best = j;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        for &a in &argmax {
            self.mix(a as u64);
        }
        let req = self.req(x);
        Ok(self.push_data(vec![batch, ch, ho, wo], out, Op::MaxPool { x, argmax }, req))
    }

    /// Causal multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch * seq, dim]` with rows grouped by sequence.
    /// Position `t` attends to positions `0..=t`, or `0..t` with
    /// `exclude_self` (position 0 then outputs zeros). Heads split `dim`
    /// into equal contiguous slices.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
        exclude_self: bool,
    ) -> Result<Var, AdError> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (rows, dim) = self.value(q).dims2()?;
        if seq == 0 || rows % seq != 0 || heads == 0 || dim % heads != 0 {
            return Err(mismatch("attention", &[rows, dim], &[seq, heads]));
        }
        let g = AttnGeom { batch: rows / seq, seq, heads, dim, exclude_self };
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; g.batch * heads * seq * seq];
        let mut out = vec![0.0; rows * dim];
        for b in 0..g.batch {
            for hd in 0..heads {
                let off = hd * dh;
                for t in 0..seq {
                    let n_keys = if exclude_self { t } else { t + 1 };
                    if n_keys == 0 {
                        continue;
                    }
                    let qt = &qv[(b * seq + t) * dim + off..][..dh];
                    let pr = &mut probs[((b * heads + hd) * seq + t) * seq..][..seq];
                    let mut m = f64::NEG_INFINITY;
                    for j in 0..n_keys {
                        let kj = &kv[(b * seq + j) * dim + off..][..dh];
                        pr[j] = scale * qt.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                        m = m.max(pr[j]);
                    }
                    let mut s = 0.0;
                    for p in &mut pr[..n_keys] {
                        *p = (*p - m).exp();
                        s += *p;
                    }
                    let o = &mut out[(b * seq + t) * dim + off..][..dh];
                    for j in 0..n_keys {
                        pr[j] /= s;
                        let vj = &vv[(b * seq + j) * dim + off..][..dh];
                        for (oo, &x) in o.iter_mut().zip(vj) {
                            *oo += pr[j] * x;
                        }
                    }
                }
            }
        }
        let req = self.req(q) || self.req(k) || self.req(v);
        Ok(self.push_data(vec![rows, dim], out, Op::Attention { q, k, v, probs, g }, req))
    }

    /// Binary cross-entropy between `sigmoid(z)` and `targets`, summed with
    /// per-row `weights` and divided by `norm`.
    pub fn bce_logits(&mut self, z: Var, targets: &Tensor, weights: &[f64], norm: f64) -> Result<Var, AdError> {
        let (rows, cols) = self.value(z).dims2()?;
        if targets.shape() != self.shape(z) || weights.len() != rows {
            return Err(mismatch("bce_logits", self.shape(z), targets.shape()));
        }
        let zv = self.value(z).data();
        let mut total = 0.0;
        for r in 0..rows {
            if weights[r] == 0.0 {
                continue;
            }
            let s: f64 = (0..cols).map(|c| softplus(zv[r * cols + c]) - targets.data()[r * cols + c] * zv[r * cols + c]).sum();
            total += weights[r] * s;
        }
        let req = self.req(z);
        let op = Op::BceLogits { z, targets: targets.clone(), weights: weights.to_vec(), norm };
        Ok(self.push(Tensor::scalar(total / norm), op, req))
    }

    /// `sum_r weights[r] * ||x_r - target_r||^2 / norm` over the rows of 2-D `x`.
    pub fn squared_error(&mut self, x: Var, target: &Tensor, weights: &[f64], norm: f64) -> Result<Var, AdError> {
        let (rows, cols) = self.value(x).dims2()?;
        if target.shape() != self.shape(x) || weights.len() != rows {
            return Err(mismatch("squared_error", self.shape(x), target.shape()));
        }
        let xv = self.value(x).data();
        let total: f64 = (0..rows)
            .map(|r| weights[r] * (0..cols).map(|c| (xv[r * cols + c] - target.data()[r * cols + c]).powi(2)).sum::<f64>())
            .sum();
        let req = self.req(x);
        let op = Op::SquaredError { x, target: target.clone(), weights: weights.to_vec(), norm };
        Ok(self.push(Tensor::scalar(total / norm), op, req))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var, AdError> {
        let flat = self.reshape(x, &[1, self.value(x).len()])?;
        let t = target.reshape(&[1, target.len()])?;
        self.squared_error(flat, &t, &[1.0], target.len() as f64)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let req = self.req(x);
        self.push(Tensor::scalar(s), Op::Sum(x), req)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AdError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AdError::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.req(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let (before, rest) = grads.split_at_mut(i);
            if let Some(g) = rest[0].as_deref() {
                self.backprop(i, g, before);
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn slot<'a>(&self, before: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let n = &self.nodes[v.0];
        n.requires_grad.then(|| before[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
    }

    fn backprop(&self, i: usize, g: &[f64], before: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        macro_rules! with_grad {
            ($v:expr, |$dst:ident| $body:block) => {
                if let Some($dst) = self.slot(before, $v) {
                    $body
                }
            };
        }
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                with_grad!(*a, |d| { axpy(d, g, 1.0) });
                with_grad!(*b, |d| { axpy(d, g, 1.0) });
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |d| { axpy(d, g, 1.0) });
                with_grad!(*b, |d| { axpy(d, g, -1.0) });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                with_grad!(*a, |d| {
                    for ((o, &gg), &y) in d.iter_mut().zip(g).zip(bv) {
                        *o += gg * y;
                    }
                });
                with_grad!(*b, |d| {
                    for ((o, &gg), &x) in d.iter_mut().zip(g).zip(av) {
                        *o += gg * x;
                    }
                });
            }
            Op::Affine(x, s) => with_grad!(*x, |d| { axpy(d, g, *s) }),
            Op::AddBias(x, b) => {
                with_grad!(*x, |d| { axpy(d, g, 1.0) });
                with_grad!(*b, |d| {
                    let c = d.len();
                    for row in g.chunks(c.max(1)) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("2-D");
                let n = self.nodes[b.0].value.dims2().expect("2-D").1;
                let (av, bv) = (val(*a), val(*b));
                with_grad!(*a, |d| { gemm(m, n, k, g, false, bv, true, d, true) });
                with_grad!(*b, |d| { gemm(k, m, n, av, true, g, false, d, true) });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().expect("2-D").1;
                let mut off = 0;
                for &p in parts {
                    let (rows, c) = self.nodes[p.0].value.dims2().expect("2-D");
                    with_grad!(p, |d| {
                        for r in 0..rows {
                            axpy(&mut d[r * c..(r + 1) * c], &g[r * total + off..r * total + off + c], 1.0);
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.nodes[x.0].value.dims2().expect("2-D").1;
                let (rows, len) = node.value.dims2().expect("2-D");
                with_grad!(*x, |d| {
                    for r in 0..rows {
                        axpy(&mut d[r * cols + start..r * cols + start + len], &g[r * len..(r + 1) * len], 1.0);
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let cols = node.value.dims2().expect("2-D").1;
                with_grad!(*x, |d| {
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(&mut d[src * cols..(src + 1) * cols], &g[r * cols..(r + 1) * cols], 1.0);
                    }
                });
            }
            Op::Reshape(x) => with_grad!(*x, |d| { axpy(d, g, 1.0) }),
            Op::Relu(x) => {
                let xv = val(*x);
                with_grad!(*x, |d| {
                    for ((o, &gg), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *o += gg;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, alpha) => {
                let xv = val(*x);
                with_grad!(*x, |d| {
                    for ((o, &gg), &v) in d.iter_mut().zip(g).zip(xv) {
                        *o += if v > 0.0 { gg } else { alpha * gg };
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                with_grad!(*x, |d| {
                    for ((o, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        *o += gg * (1.0 - yy * yy);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                with_grad!(*x, |d| {
                    for ((o, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        *o += gg * yy * (1.0 - yy);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = *node.value.shape().last().unwrap_or(&1);
                with_grad!(*x, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, &gg), &yy) in dr.iter_mut().zip(gr).zip(yr) {
                            *o += yy * (gg - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let c = self.nodes[gamma.0].value.len();
                let gm = val(*gamma);
                with_grad!(*gamma, |d| {
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, &gg), &h) in d.iter_mut().zip(gr).zip(hr) {
                            *o += gg * h;
                        }
                    }
                });
                with_grad!(*beta, |d| {
                    for gr in g.chunks(c) {
                        axpy(d, gr, 1.0);
                    }
                });
                with_grad!(*x, |d| {
                    let mut dh = vec![0.0; c];
                    for (r, ((dr, gr), hr)) in d.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate() {
                        for j in 0..c {
                            dh[j] = gr[j] * gm[j];
                        }
                        norm_backward(dr, &dh, hr, inv_std[r]);
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let s = self.nodes[x.0].value.shape();
                let (batch, ch) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let at = |n: usize, c: usize| (n * ch + c) * inner;
                let gm = val(*gamma);
                with_grad!(*gamma, |d| {
                    for n in 0..batch {
                        for c in 0..ch {
                            let j = at(n, c);
                            d[c] += g[j..j + inner].iter().zip(&xhat[j..j + inner]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                with_grad!(*beta, |d| {
                    for n in 0..batch {
                        for c in 0..ch {
                            let j = at(n, c);
                            d[c] += g[j..j + inner].iter().sum::<f64>();
                        }
                    }
                });
                with_grad!(*x, |d| {
                    for c in 0..ch {
                        let idx: Vec<usize> = (0..batch).flat_map(|n| (0..inner).map(move |i| at(n, c) + i)).collect();
                        let dh: Vec<f64> = idx.iter().map(|&j| g[j] * gm[c]).collect();
                        if *batch_stats {
                            let hv: Vec<f64> = idx.iter().map(|&j| xhat[j]).collect();
                            let mut dx = vec![0.0; idx.len()];
                            norm_backward(&mut dx, &dh, &hv, inv_std[c]);
                            for (&j, v) in idx.iter().zip(dx) {
                                d[j] += v;
                            }
                        } else {
                            for (&j, v) in idx.iter().zip(dh) {
                                d[j] += v * inv_std[c];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, cols, g: geo } => {
                let ConvGeom { batch, cin, h, w: wd, cout, k, pad, ho, wo } = *geo;
                let (ckk, p) = (cin * k * k, ho * wo);
                with_grad!(*b, |d| {
                    for n in 0..batch {
                        for o in 0..cout {
                            d[o] += g[(n * cout + o) * p..(n * cout + o + 1) * p].iter().sum::<f64>();
                        }
                    }
                });
                with_grad!(*w, |d| {
                    for n in 0..batch {
                        gemm(cout, p, ckk, &g[n * cout * p..], false, &cols[n * ckk * p..], true, d, true);
                    }
                });
                let wv = val(*w);
                with_grad!(*x, |d| {
                    let mut dcols = vec![0.0; ckk * p];
                    for n in 0..batch {
                        gemm(ckk, cout, p, wv, true, &g[n * cout * p..], false, &mut dcols, false);
                        for c in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let row = (c * k + ki) * k + kj;
                                    for oy in 0..ho {
                                        let iy = (oy + ki) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for ox in 0..wo {
                                            let ix = (ox + kj) as isize - pad as isize;
                                            if ix >= 0 && ix < wd as isize {
                                                d[((n * cin + c) * h + iy as usize) * wd + ix as usize] +=
                                                    dcols[row * p + oy * wo + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => with_grad!(*x, |d| {
                for (&j, &gg) in argmax.iter().zip(g) {
                    d[j] += gg;
                }
            }),
            Op::Attention { q, k, v, probs, g: geo } => {
                let AttnGeom { batch, seq, heads, dim, exclude_self } = *geo;
                let dh = dim / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                let mut ds = vec![0.0; seq];
                for b in 0..batch {
                    for hd in 0..heads {
                        let off = hd * dh;
                        for t in 0..seq {
                            let n_keys = if exclude_self { t } else { t + 1 };
                            if n_keys == 0 {
                                continue;
                            }
                            let pr = &probs[((b * heads + hd) * seq + t) * seq..][..seq];
                            let gt = &g[(b * seq + t) * dim + off..][..dh];
                            let mut dot = 0.0;
                            for j in 0..n_keys {
                                let row = (b * seq + j) * dim + off;
                                let dp: f64 = gt.iter().zip(&vv[row..row + dh]).map(|(a, c)| a * c).sum();
                                ds[j] = dp;
                                dot += pr[j] * dp;
                                for (o, &gg) in dv[row..row + dh].iter_mut().zip(gt) {
                                    *o += pr[j] * gg;
                                }
                            }
                            let qrow = (b * seq + t) * dim + off;
                            for j in 0..n_keys {
                                let s = pr[j] * (ds[j] - dot) * scale;
                                if s == 0.0 {
                                    continue;
                                }
                                let krow = (b * seq + j) * dim + off;
                                for e in 0..dh {
                                    dq[qrow + e] += s * kv[krow + e];
                                    dk[krow + e] += s * qv[qrow + e];
                                }
                            }
                        }
                    }
                }
                with_grad!(*q, |d| { axpy(d, &dq, 1.0) });
                with_grad!(*k, |d| { axpy(d, &dk, 1.0) });
                with_grad!(*v, |d| { axpy(d, &dv, 1.0) });
            }
            Op::BceLogits { z, targets, weights, norm } => {
                let zv = val(*z);
                let cols = zv.len() / weights.len().max(1);
                with_grad!(*z, |d| {
                    for (j, o) in d.iter_mut().enumerate() {
                        let w = weights[j / cols];
                        if w != 0.0 {
                            *o += g[0] * w * (sigmoid(zv[j]) - targets.data()[j]) / norm;
                        }
                    }
                });
            }
            Op::SquaredError { x, target, weights, norm } => {
                let xv = val(*x);
                let cols = xv.len() / weights.len().max(1);
                with_grad!(*x, |d| {
                    for (j, o) in d.iter_mut().enumerate() {
                        *o += g[0] * 2.0 * weights[j / cols] * (xv[j] - target.data()[j]) / norm;
                    }
                });
            }
            Op::Sum(x) => with_grad!(*x, |d| {
                for o in d.iter_mut() {
                    *o += g[0];
                }
            }),
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Gradient through `xhat = (x - mean) * inv_std` for one normalization group.
fn norm_backward(dx: &mut [f64], dxhat: &[f64], xhat: &[f64], inv_std: f64) {
    let n = dxhat.len() as f64;
    let s1: f64 = dxhat.iter().sum();
    let s2: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
    for ((o, &d), &h) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *o += inv_std / n * (n * d - s1 - h * s2);
    }
}
