//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its forward
//! value. [`Graph::backward`] walks the tape from a scalar root in reverse
//! order and accumulates gradients only into nodes that can reach a
//! trainable leaf, so frozen sub-networks cost a forward pass and nothing
//! more.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm, MatMut, MatRef};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddTiled(Var, Var),
    Relu(Var),
    ScaledSigmoid {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Softplus(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    MeanPool {
        x: Var,
        seq: usize,
    },
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Var, Var),
    Sum(Var),
    Mean(Var),
    SquaredErrorRows {
        pred: Var,
        target: Var,
    },
    Huber {
        pred: Var,
        target: Var,
        delta: f64,
    },
    SmoothL1 {
        a: Var,
        b: Var,
        delta: f64,
    },
    CosineDistanceRows {
        a: Var,
        b: Var,
        cos: Vec<f64>,
        norm_a: Vec<f64>,
        norm_b: Vec<f64>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    BatchKl {
        student: Var,
        p: Vec<f64>,
        q: Vec<f64>,
    },
    RowKl {
        a: Var,
        b: Var,
        p: Vec<f64>,
        q: Vec<f64>,
        kl: Vec<f64>,
    },
    RowJs {
        a: Var,
        b: Var,
        p: Vec<f64>,
        q: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-column statistics of a training-mode batch normalization, used by
/// the caller to update running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance estimate.
    pub var: Vec<f64>,
}

/// Differentiation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn row_softmax(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient when `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(Error::shape(format!(
                "{what}: expected a matrix, got shape {:?}",
                t.shape()
            )));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents {k} and {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::dense(self.value(a).data(), m, k),
            MatRef::dense(self.value(b).data(), k, n),
            0.0,
            MatMut::dense(&mut out, m, n),
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "bias input")?;
        if self.value(bias).len() != n {
            return Err(Error::shape(format!(
                "bias of length {} for {n} columns",
                self.value(bias).len()
            )));
        }
        let mut out = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::AddRowBias(x, bias), ng))
    }

    /// Adds a `p x n` block to an `m x n` matrix, row `i` receiving row `i % p`.
    /// Used to add positional encodings to a batch of flattened sequences.
    pub fn add_tiled(&mut self, x: Var, block: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "tiled input")?;
        let (p, n2) = self.dims2(block, "tiled block")?;
        if n != n2 || p == 0 || m % p != 0 {
            return Err(Error::shape(format!(
                "cannot tile a {p}x{n2} block over a {m}x{n} matrix"
            )));
        }
        let mut out = self.value(x).data().to_vec();
        let blk = self.value(block).data();
        for (i, row) in out.chunks_mut(n).enumerate() {
            let r = i % p;
            for (o, bv) in row.iter_mut().zip(&blk[r * n..(r + 1) * n]) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(block);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::AddTiled(x, block), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let ng = self.ng(x);
        self.push(t, Op::Relu(x), ng)
    }

    /// `lo + (hi - lo) * sigmoid(x)`, elementwise.
    pub fn scaled_sigmoid(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).map(|v| lo + (hi - lo) * sigmoid(v));
        let ng = self.ng(x);
        self.push(t, Op::ScaledSigmoid { x, lo, hi }, ng)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self
            .value(x)
            .map(|v| if v > 30.0 { v } else { v.exp().ln_1p() });
        let ng = self.ng(x);
        self.push(t, Op::Softplus(x), ng)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` over the columns.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer norm")?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("layer norm affine width"));
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::new(&[m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Batch normalization over the rows using the batch's own statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (m, n) = self.dims2(x, "batch norm")?;
        if m < 2 {
            return Err(Error::shape("training batch norm needs at least two rows"));
        }
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("batch norm affine width"));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for row in xd.chunks(n) {
            for (mu, v) in mean.iter_mut().zip(row) {
                *mu += v;
            }
        }
        for mu in mean.iter_mut() {
            *mu /= m as f64;
        }
        for row in xd.chunks(n) {
            for j in 0..n {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= m as f64;
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let (out, xhat) = self.bn_apply(x, gamma, beta, &mean, &inv_std);
        let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let y = self.push(
            Tensor::new(&[m, n], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            ng,
        );
        Ok((
            y,
            BatchStats {
                mean,
                var: unbiased,
            },
        ))
    }

    /// Batch normalization with fixed running statistics: an affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let (m, n) = self.dims2(x, "batch norm")?;
        if self.value(gamma).len() != n
            || self.value(beta).len() != n
            || running_mean.len() != n
            || running_var.len() != n
        {
            return Err(Error::shape("batch norm width"));
        }
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let (out, xhat) = self.bn_apply(x, gamma, beta, running_mean, &inv_std);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::new(&[m, n], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            ng,
        ))
    }

    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let xd = self.value(x).data();
        let n = mean.len();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, &v) in xd.iter().enumerate() {
            let j = i % n;
            let h = (v - mean[j]) * inv_std[j];
            xhat[i] = h;
            out[i] = g[j] * h + b[j];
        }
        (out, xhat)
    }

    /// Multiplies by a precomputed mask (entries 0 or `1 / (1 - p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("dropout mask length"));
        }
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(xv.shape(), data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Dropout { x, mask }, ng))
    }

    /// Scaled dot-product attention over `batch` sequences of length `seq`,
    /// split into `heads` heads along the columns. Inputs are
    /// `(batch * seq) x d` projections; the output has the same shape with
    /// heads concatenated. Scaling is `1 / sqrt(d / heads)`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let (m, d) = self.dims2(q, "attention query")?;
        if self.value(k).shape() != [m, d] || self.value(v).shape() != [m, d] {
            return Err(Error::shape("attention q/k/v shapes differ"));
        }
        if m != batch * seq || heads == 0 || d % heads != 0 {
            return Err(Error::shape(format!(
                "attention: {m} rows for batch {batch} x seq {seq}, width {d} over {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; m * d];
        let mut scores = vec![0.0; seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * seq * d + h * dh;
                let view = |data| MatRef {
                    data,
                    offset: off,
                    rows: seq,
                    cols: dh,
                    row_stride: d,
                    col_stride: 1,
                };
                gemm(
                    scale,
                    view(qd),
                    view(kd).t(),
                    0.0,
                    MatMut::dense(&mut scores, seq, seq),
                );
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for r in 0..seq {
                    row_softmax(
                        &scores[r * seq..(r + 1) * seq],
                        &mut p[r * seq..(r + 1) * seq],
                    );
                }
                gemm(
                    1.0,
                    MatRef::dense(p, seq, seq),
                    view(vd),
                    0.0,
                    MatMut {
                        data: &mut out,
                        offset: off,
                        rows: seq,
                        cols: dh,
                        row_stride: d,
                    },
                );
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::new(&[m, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Attention weights recorded by an [`Graph::attention`] node, laid out
    /// as `batch x heads x seq x seq`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean over consecutive groups of `seq` rows: `(b * seq) x d -> b x d`.
    pub fn mean_pool(&mut self, x: Var, seq: usize) -> Result<Var> {
        let (m, d) = self.dims2(x, "mean pool")?;
        if seq == 0 || m % seq != 0 {
            return Err(Error::shape(format!(
                "{m} rows do not split into sequences of {seq}"
            )));
        }
        let b = m / seq;
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * d];
        for (i, row) in xd.chunks(d).enumerate() {
            let o = &mut out[(i / seq) * d..(i / seq + 1) * d];
            for (ov, v) in o.iter_mut().zip(row) {
                *ov += v;
            }
        }
        let inv = 1.0 / seq as f64;
        for v in out.iter_mut() {
            *v *= inv;
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[b, d], out)?, Op::MeanPool { x, seq }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice")?;
        if start >= end || end > n {
            return Err(Error::shape(format!(
                "column slice {start}..{end} of width {n}"
            )));
        }
        let w = end - start;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for row in xd.chunks(n) {
            out.extend_from_slice(&row[start..end]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[m, w], out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.dims2(a, "concat lhs")?;
        let (m2, nb) = self.dims2(b, "concat rhs")?;
        if m != m2 {
            return Err(Error::shape("concat row counts differ"));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            out.extend_from_slice(&ad[i * na..(i + 1) * na]);
            out.extend_from_slice(&bd[i * nb..(i + 1) * nb]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, na + nb], out)?, Op::ConcatCols(a, b), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean over rows of the squared Euclidean distance between rows.
    pub fn squared_error_rows(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "squared error")?;
        let rows = self.value(pred).rows();
        if self.value(pred).is_empty() {
            return Err(Error::invalid("squared error of an empty batch"));
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(
            Tensor::scalar(s / rows as f64),
            Op::SquaredErrorRows { pred, target },
            ng,
        ))
    }

    /// Mean Huber loss over all elements.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        self.same_shape(pred, target, "huber")?;
        let n = self.value(pred).len();
        if n == 0 {
            return Err(Error::invalid("huber loss of an empty batch"));
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| {
                let r = (t - p).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            })
            .sum();
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(
            Tensor::scalar(s / n as f64),
            Op::Huber {
                pred,
                target,
                delta,
            },
            ng,
        ))
    }

    /// Mean smooth-L1 loss over all elements with transition width `delta`.
    pub fn smooth_l1(&mut self, a: Var, b: Var, delta: f64) -> Result<Var> {
        self.same_shape(a, b, "smooth l1")?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::invalid("smooth l1 of empty inputs"));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| {
                let d = (x - y).abs();
                if d < delta {
                    0.5 * d * d / delta
                } else {
                    d - 0.5 * delta
                }
            })
            .sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::scalar(s / n as f64),
            Op::SmoothL1 { a, b, delta },
            ng,
        ))
    }

    /// Mean over rows of `1 - cos(a_i, b_i)`.
    pub fn cosine_distance_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "cosine distance")?;
        let (m, n) = self.dims2(a, "cosine distance")?;
        if m == 0 {
            return Err(Error::invalid("cosine distance of an empty batch"));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut cos = vec![0.0; m];
        let mut norm_a = vec![0.0; m];
        let mut norm_b = vec![0.0; m];
        for i in 0..m {
            let (ra, rb) = (&ad[i * n..(i + 1) * n], &bd[i * n..(i + 1) * n]);
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::degenerate(format!(
                    "zero vector in row {i}: angle undefined"
                )));
            }
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            cos[i] = dot / (na * nb);
            norm_a[i] = na;
            norm_b[i] = nb;
        }
        let loss = cos.iter().map(|c| 1.0 - c).sum::<f64>() / m as f64;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CosineDistanceRows {
                a,
                b,
                cos,
                norm_a,
                norm_b,
            },
            ng,
        ))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "l2 normalize")?;
        let xd = self.value(x).data();
        let mut norms = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr == 0.0 {
                return Err(Error::degenerate(format!("zero vector in row {i}")));
            }
            norms[i] = nr;
            for j in 0..n {
                out[i * n + j] = row[j] / nr;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[m, n], out)?,
            Op::L2NormalizeRows { x, norms },
            ng,
        ))
    }

    /// `KL(softmax(teacher) || softmax(student))`, the softmax taken across
    /// the batch axis. `teacher` is a fixed target.
    pub fn batch_kl(&mut self, teacher: &[f64], student: Var) -> Result<Var> {
        let n = self.value(student).len();
        if n != teacher.len() {
            return Err(Error::shape("teacher and student batch sizes differ"));
        }
        if n < 2 {
            return Err(Error::degenerate(
                "a batch of one prediction is a degenerate distribution",
            ));
        }
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        row_softmax(teacher, &mut p);
        row_softmax(self.value(student).data(), &mut q);
        let kl = kl_sum(&p, &q);
        let ng = self.ng(student);
        Ok(self.push(Tensor::scalar(kl), Op::BatchKl { student, p, q }, ng))
    }

    /// Mean over rows of `KL(softmax(a_i) || softmax(b_i))`.
    pub fn row_kl(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row kl")?;
        let (m, n) = self.dims2(a, "row kl")?;
        let (p, q) = self.row_softmaxes(a, b, m, n);
        let kl: Vec<f64> = (0..m)
            .map(|i| kl_sum(&p[i * n..(i + 1) * n], &q[i * n..(i + 1) * n]))
            .collect();
        let loss = kl.iter().sum::<f64>() / m as f64;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(loss), Op::RowKl { a, b, p, q, kl }, ng))
    }

    /// Mean over rows of the Jensen-Shannon divergence of the row softmaxes.
    pub fn row_js(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row js")?;
        let (m, n) = self.dims2(a, "row js")?;
        let (p, q) = self.row_softmaxes(a, b, m, n);
        let mut total = 0.0;
        for (pi, qi) in p.iter().zip(&q) {
            let mi = 0.5 * (pi + qi);
            total += 0.5 * pi * (pi / mi).ln() + 0.5 * qi * (qi / mi).ln();
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::RowJs { a, b, p, q },
            ng,
        ))
    }

    fn row_softmaxes(&self, a: Var, b: Var, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; m * n];
        let mut q = vec![0.0; m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..m {
            row_softmax(&ad[i * n..(i + 1) * n], &mut p[i * n..(i + 1) * n]);
            row_softmax(&bd[i * n..(i + 1) * n], &mut q[i * n..(i + 1) * n]);
        }
        (p, q)
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward needs a scalar root"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            self.propagate(i, &g, &mut grads);
            if is_leaf {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if let Some(b) = self.buf(grads, v) {
            for (i, x) in b.iter_mut().enumerate() {
                *x += f(i);
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if let Some(da) = self.buf(grads, *a) {
                    gemm(
                        1.0,
                        MatRef::dense(g, m, n),
                        MatRef::dense(self.value(*b).data(), k, n).t(),
                        1.0,
                        MatMut::dense(da, m, k),
                    );
                }
                if let Some(db) = self.buf(grads, *b) {
                    gemm(
                        1.0,
                        MatRef::dense(self.value(*a).data(), m, k).t(),
                        MatRef::dense(g, m, n),
                        1.0,
                        MatMut::dense(db, k, n),
                    );
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |j| g[j]);
                self.acc(grads, *b, |j| g[j]);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |j| g[j]);
                self.acc(grads, *b, |j| -g[j]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |j| g[j] * bv[j]);
                self.acc(grads, *b, |j| g[j] * av[j]);
            }
            Op::Scale(a, c) => self.acc(grads, *a, |j| g[j] * c),
            Op::AddRowBias(x, bias) => {
                self.acc(grads, *x, |j| g[j]);
                let n = self.value(*bias).len();
                if let Some(db) = self.buf(grads, *bias) {
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
            Op::AddTiled(x, block) => {
                self.acc(grads, *x, |j| g[j]);
                let blen = self.value(*block).len();
                if let Some(db) = self.buf(grads, *block) {
                    for chunk in g.chunks(blen) {
                        for (d, v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let o = out.data();
                self.acc(grads, *x, |j| if o[j] > 0.0 { g[j] } else { 0.0 });
            }
            Op::ScaledSigmoid { x, lo, hi } => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |j| {
                    let s = sigmoid(xv[j]);
                    g[j] * (hi - lo) * s * (1.0 - s)
                });
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |j| g[j] * sigmoid(xv[j]));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gamma).len();
                let gm = self.value(*gamma).data();
                if let Some(dg) = self.buf(grads, *gamma) {
                    for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if let Some(dbeta) = self.buf(grads, *beta) {
                    for gr in g.chunks(n) {
                        for j in 0..n {
                            dbeta[j] += gr[j];
                        }
                    }
                }
                if let Some(dx) = self.buf(grads, *x) {
                    let nf = n as f64;
                    for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dxh = gr[j] * gm[j];
                            s1 += dxh;
                            s2 += dxh * xr[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..n {
                            let dxh = gr[j] * gm[j];
                            dx[r * n + j] += inv / nf * (nf * dxh - s1 - xr[j] * s2);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let n = self.value(*gamma).len();
                let m = g.len() / n;
                let gm = self.value(*gamma).data();
                let mut sum_g = vec![0.0; n];
                let mut sum_gx = vec![0.0; n];
                for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * xr[j];
                    }
                }
                if let Some(dg) = self.buf(grads, *gamma) {
                    for j in 0..n {
                        dg[j] += sum_gx[j];
                    }
                }
                if let Some(db) = self.buf(grads, *beta) {
                    for j in 0..n {
                        db[j] += sum_g[j];
                    }
                }
                if let Some(dx) = self.buf(grads, *x) {
                    let mf = m as f64;
                    for idx in 0..g.len() {
                        let j = idx % n;
                        let scale = gm[j] * inv_std[j];
                        dx[idx] += if *batch_stats {
                            scale / mf * (mf * g[idx] - sum_g[j] - xhat[idx] * sum_gx[j])
                        } else {
                            scale * g[idx]
                        };
                    }
                }
            }
            Op::Dropout { x, mask } => self.acc(grads, *x, |j| g[j] * mask[j]),
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => self.attention_backward(g, grads, *q, *k, *v, *batch, *seq, *heads, probs),
            Op::MeanPool { x, seq } => {
                let d = out.cols();
                let inv = 1.0 / *seq as f64;
                self.acc(grads, *x, |j| {
                    let (r, c) = (j / d, j % d);
                    g[(r / seq) * d + c] * inv
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |j| g[j]),
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let w = out.cols();
                if let Some(dx) = self.buf(grads, *x) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (c, v) in gr.iter().enumerate() {
                            dx[r * n + start + c] += v;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let na = self.value(*a).cols();
                let nb = self.value(*b).cols();
                let w = na + nb;
                self.acc(grads, *a, |j| g[(j / na) * w + j % na]);
                self.acc(grads, *b, |j| g[(j / nb) * w + na + j % nb]);
            }
            Op::Sum(x) => self.acc(grads, *x, |_| g[0]),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |_| g[0] / n);
            }
            Op::SquaredErrorRows { pred, target } => {
                let rows = self.value(*pred).rows() as f64;
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                self.acc(grads, *pred, |j| g[0] * 2.0 * (p[j] - t[j]) / rows);
                self.acc(grads, *target, |j| -g[0] * 2.0 * (p[j] - t[j]) / rows);
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let n = p.len() as f64;
                let d = |j: usize| {
                    let r = p[j] - t[j];
                    if r.abs() <= *delta {
                        r
                    } else {
                        delta * r.signum()
                    }
                };
                self.acc(grads, *pred, |j| g[0] * d(j) / n);
                self.acc(grads, *target, |j| -g[0] * d(j) / n);
            }
            Op::SmoothL1 { a, b, delta } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let n = av.len() as f64;
                let d = |j: usize| {
                    let r = av[j] - bv[j];
                    if r.abs() < *delta {
                        r / delta
                    } else {
                        r.signum()
                    }
                };
                self.acc(grads, *a, |j| g[0] * d(j) / n);
                self.acc(grads, *b, |j| -g[0] * d(j) / n);
            }
            Op::CosineDistanceRows {
                a,
                b,
                cos,
                norm_a,
                norm_b,
            } => {
                let n = self.value(*a).cols();
                let m = cos.len() as f64;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |j| {
                    let r = j / n;
                    let dc =
                        bv[j] / (norm_a[r] * norm_b[r]) - cos[r] * av[j] / (norm_a[r] * norm_a[r]);
                    -g[0] * dc / m
                });
                self.acc(grads, *b, |j| {
                    let r = j / n;
                    let dc =
                        av[j] / (norm_a[r] * norm_b[r]) - cos[r] * bv[j] / (norm_b[r] * norm_b[r]);
                    -g[0] * dc / m
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let n = out.cols();
                let y = out.data();
                let dots: Vec<f64> = y
                    .chunks(n)
                    .zip(g.chunks(n))
                    .map(|(yr, gr)| yr.iter().zip(gr).map(|(a, b)| a * b).sum())
                    .collect();
                self.acc(grads, *x, |j| {
                    let r = j / n;
                    (g[j] - y[j] * dots[r]) / norms[r]
                });
            }
            Op::BatchKl { student, p, q } => {
                self.acc(grads, *student, |j| g[0] * (q[j] - p[j]));
            }
            Op::RowKl { a, b, p, q, kl } => {
                let n = self.value(*a).cols();
                let m = kl.len() as f64;
                self.acc(grads, *a, |j| {
                    let r = j / n;
                    g[0] * p[j] * ((p[j] / q[j]).ln() - kl[r]) / m
                });
                self.acc(grads, *b, |j| g[0] * (q[j] - p[j]) / m);
            }
            Op::RowJs { a, b, p, q } => {
                let n = self.value(*a).cols();
                let m = (p.len() / n) as f64;
                let ga: Vec<f64> = p
                    .iter()
                    .zip(q)
                    .map(|(pi, qi)| 0.5 * (pi / (0.5 * (pi + qi))).ln())
                    .collect();
                let gb: Vec<f64> = p
                    .iter()
                    .zip(q)
                    .map(|(pi, qi)| 0.5 * (qi / (0.5 * (pi + qi))).ln())
                    .collect();
                let through_softmax = |probs: &[f64], gl: &[f64]| -> Vec<f64> {
                    let mut res = vec![0.0; probs.len()];
                    for (r, (pr, gr)) in probs.chunks(n).zip(gl.chunks(n)).enumerate() {
                        let mean: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            res[r * n + c] = pr[c] * (gr[c] - mean);
                        }
                    }
                    res
                };
                let da = through_softmax(p, &ga);
                let db = through_softmax(q, &gb);
                self.acc(grads, *a, |j| g[0] * da[j] / m);
                self.acc(grads, *b, |j| g[0] * db[j] / m);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: &[f64],
    ) {
        let (m, d) = (batch * seq, self.value(q).cols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut dq = vec![0.0; m * d];
        let mut dk = vec![0.0; m * d];
        let mut dv = vec![0.0; m * d];
        let mut dp = vec![0.0; seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * seq * d + h * dh;
                let view = |data| MatRef {
                    data,
                    offset: off,
                    rows: seq,
                    cols: dh,
                    row_stride: d,
                    col_stride: 1,
                };
                let mut_view = |data| MatMut {
                    data,
                    offset: off,
                    rows: seq,
                    cols: dh,
                    row_stride: d,
                };
                let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                gemm(
                    1.0,
                    view(g),
                    view(vd).t(),
                    0.0,
                    MatMut::dense(&mut dp, seq, seq),
                );
                for r in 0..seq {
                    let pr = &p[r * seq..(r + 1) * seq];
                    let dr = &mut dp[r * seq..(r + 1) * seq];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (dv_, pv) in dr.iter_mut().zip(pr) {
                        *dv_ = pv * (*dv_ - dot);
                    }
                }
                gemm(
                    scale,
                    MatRef::dense(&dp, seq, seq),
                    view(kd),
                    1.0,
                    mut_view(&mut dq),
                );
                gemm(
                    scale,
                    MatRef::dense(&dp, seq, seq).t(),
                    view(qd),
                    1.0,
                    mut_view(&mut dk),
                );
                gemm(
                    1.0,
                    MatRef::dense(p, seq, seq).t(),
                    view(g),
                    1.0,
                    mut_view(&mut dv),
                );
            }
        }
        self.acc(grads, q, |j| dq[j]);
        self.acc(grads, k, |j| dk[j]);
        self.acc(grads, v, |j| dv[j]);
    }
}

fn kl_sum(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_gradient_is_outer_products() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 2], &[1.0, 2.0]), true);
        let b = g.leaf(t(&[2, 1], &[3.0, 4.0]), true);
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        assert_eq!(g.value(s).item(), 11.0);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = g.constant(t(&[2], &[5.0, 6.0]));
        let p = g.mul(a, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap(), &[5.0, 6.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]), true);
        let b = g.leaf(Tensor::zeros(&[2, 3]), true);
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        let c = g.leaf(Tensor::zeros(&[3]), true);
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn batch_kl_rejects_single_prediction() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::scalar(1.0), true);
        assert!(matches!(g.batch_kl(&[1.0], s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cosine_rejects_zero_rows() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 2], &[0.0, 0.0]), true);
        let b = g.leaf(t(&[1, 2], &[1.0, 0.0]), true);
        assert!(matches!(
            g.cosine_distance_rows(a, b),
            Err(Error::Degenerate(_))
        ));
    }
}
