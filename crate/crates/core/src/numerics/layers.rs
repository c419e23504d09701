//! Layer descriptors. Each layer owns only [`ParamId`]s; the tensors live
//! in the model's [`ParameterSet`] and are read through a [`Bound`] at
//! forward time.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::functional::sinusoidal_positional_encoding;
use super::graph::{BatchStats, Graph, Var};
use super::params::{Bound, ParamId, ParameterSet};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Momentum of the batch-norm running estimates.
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode.
///
/// `training` selects batch statistics in batch normalization; dropout is
/// applied only when training *and* a mask generator is present.
pub struct Ctx<'r> {
    pub training: bool,
    rng: Option<&'r mut ChaCha8Rng>,
    bn_updates: Vec<(ParamId, ParamId, BatchStats)>,
}

impl<'r> Ctx<'r> {
    pub fn eval() -> Self {
        Self {
            training: false,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        Self {
            training: true,
            rng: Some(rng),
            bn_updates: Vec::new(),
        }
    }

    /// Training-mode normalization with dropout disabled; used for
    /// gradient checks, which need a smooth deterministic objective.
    pub fn train_without_dropout() -> Self {
        Self {
            training: true,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    fn dropout_mask(&mut self, len: usize, rate: f64) -> Option<Vec<f64>> {
        if !self.training || rate <= 0.0 {
            return None;
        }
        let rng = self.rng.as_mut()?;
        let keep = 1.0 / (1.0 - rate);
        Some(
            (0..len)
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect(),
        )
    }

    /// Running-statistic updates collected during a training forward pass.
    pub fn take_bn_updates(&mut self) -> Vec<(ParamId, ParamId, BatchStats)> {
        core::mem::take(&mut self.bn_updates)
    }
}

/// Folds collected batch statistics into running estimates.
pub fn apply_bn_updates(ps: &mut ParameterSet, updates: Vec<(ParamId, ParamId, BatchStats)>) {
    for (mean_id, var_id, stats) in updates {
        for (r, b) in ps.value_mut(mean_id).data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in ps.value_mut(var_id).data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

pub fn dropout(g: &mut Graph, ctx: &mut Ctx<'_>, x: Var, rate: f64) -> Result<Var> {
    match ctx.dropout_mask(g.value(x).len(), rate) {
        Some(mask) => g.dropout(x, mask),
        None => Ok(x),
    }
}

/// Splits each row of a `batch x width` matrix into `tokens` contiguous
/// patches, giving a `(batch * tokens) x (width / tokens)` matrix.
pub fn patches(g: &mut Graph, x: Var, batch: usize, width: usize, tokens: usize) -> Result<Var> {
    if tokens == 0 || !width.is_multiple_of(tokens) {
        return Err(Error::config(format!(
            "{tokens} tokens do not divide width {width}"
        )));
    }
    g.reshape(x, &[batch * tokens, width / tokens])
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        ps: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add_xavier(&format!("{name}.weight"), in_dim, out_dim, rng);
        let b = ps.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add_row_bias(y, p.var(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParameterSet, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.add(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: ps.add(&format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(ps: &mut ParameterSet, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.add(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: ps.add(&format!("{name}.beta"), Tensor::zeros(&[dim])),
            running_mean: ps.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[dim])),
            running_var: ps.add_buffer(&format!("{name}.running_var"), Tensor::full(&[dim], 1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if ctx.training {
            let (y, stats) = g.batch_norm_train(x, p.var(self.gamma), p.var(self.beta))?;
            ctx.bn_updates
                .push((self.running_mean, self.running_var, stats));
            Ok(y)
        } else {
            let mean = g.value(p.var(self.running_mean)).clone();
            let var = g.value(p.var(self.running_var)).clone();
            g.batch_norm_eval(
                x,
                p.var(self.gamma),
                p.var(self.beta),
                mean.data(),
                var.data(),
            )
        }
    }
}

/// Fully connected hidden layer: linear, ReLU, batch normalization, dropout.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub linear: Linear,
    pub norm: BatchNorm,
    pub dropout: f64,
}

impl DenseBlock {
    pub fn new<R: Rng>(
        ps: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            linear: Linear::new(ps, &format!("{name}.linear"), in_dim, out_dim, rng),
            norm: BatchNorm::new(ps, &format!("{name}.bn"), out_dim),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.linear.forward(g, p, x)?;
        let h = g.relu(h);
        let h = self.norm.forward(g, p, ctx, h)?;
        dropout(g, ctx, h, self.dropout)
    }
}

/// Stack of [`DenseBlock`]s followed by a plain linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Vec<DenseBlock>,
    pub out: Linear,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new<R: Rng>(
        ps: &mut ParameterSet,
        name: &str,
        widths: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(
                "an MLP needs at least input and output widths",
            ));
        }
        let n = widths.len();
        let hidden = (0..n - 2)
            .map(|i| {
                DenseBlock::new(
                    ps,
                    &format!("{name}.{i}"),
                    widths[i],
                    widths[i + 1],
                    dropout,
                    rng,
                )
            })
            .collect();
        let out = Linear::new(
            ps,
            &format!("{name}.out"),
            widths[n - 2],
            widths[n - 1],
            rng,
        );
        Ok(Self { hidden, out })
    }

    pub fn in_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.out.in_dim, |b| b.linear.in_dim)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.hidden {
            h = block.forward(g, p, ctx, h)?;
        }
        self.out.forward(g, p, h)
    }
}

/// Shape of one transformer encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayerConfig {
    pub model_dim: usize,
    pub head_count: usize,
    pub per_head_dim: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
}

impl EncoderLayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_count == 0 || self.head_count * self.per_head_dim != self.model_dim {
            return Err(Error::config(format!(
                "{} heads x {} per head does not match model width {}",
                self.head_count, self.per_head_dim, self.model_dim
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("feed-forward width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub cfg: EncoderLayerConfig,
}

impl MultiHeadSelfAttention {
    pub fn new<R: Rng>(
        ps: &mut ParameterSet,
        name: &str,
        cfg: EncoderLayerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(Self {
            query: Linear::new(ps, &format!("{name}.q"), d, d, rng),
            key: Linear::new(ps, &format!("{name}.k"), d, d, rng),
            value: Linear::new(ps, &format!("{name}.v"), d, d, rng),
            output: Linear::new(ps, &format!("{name}.o"), d, d, rng),
            cfg,
        })
    }

    /// `x` is `(batch * seq) x model_dim`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        let (rows, d) = match g.value(x).shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape(format!("attention input shape {s:?}"))),
        };
        if d != self.cfg.model_dim || rows != batch * seq {
            return Err(Error::shape(format!(
                "attention input {rows}x{d}, expected {}x{}",
                batch * seq,
                self.cfg.model_dim
            )));
        }
        let q = self.query.forward(g, p, x)?;
        let k = self.key.forward(g, p, x)?;
        let v = self.value.forward(g, p, x)?;
        let a = g.attention(q, k, v, batch, seq, self.cfg.head_count)?;
        self.output.forward(g, p, a)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadSelfAttention,
    pub norm1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm2: LayerNorm,
    pub cfg: EncoderLayerConfig,
}

impl EncoderLayer {
    pub fn new<R: Rng>(
        ps: &mut ParameterSet,
        name: &str,
        cfg: EncoderLayerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(Self {
            attention: MultiHeadSelfAttention::new(ps, &format!("{name}.attn"), cfg, rng)?,
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), d),
            ffn_in: Linear::new(ps, &format!("{name}.ffn1"), d, cfg.ffn_dim, rng),
            ffn_out: Linear::new(ps, &format!("{name}.ffn2"), cfg.ffn_dim, d, rng),
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), d),
            cfg,
        })
    }

    /// Post-norm layout: `LN(x + MHSA(x))`, then `LN(h + FFN(h))`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        x: Var,
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        let a = self.attention.forward(g, p, x, batch, seq)?;
        let a = dropout(g, ctx, a, self.cfg.dropout_rate)?;
        let h = g.add(x, a)?;
        let h = self.norm1.forward(g, p, h)?;
        let f = self.ffn_in.forward(g, p, h)?;
        let f = g.relu(f);
        let f = self.ffn_out.forward(g, p, f)?;
        let f = dropout(g, ctx, f, self.cfg.dropout_rate)?;
        let o = g.add(h, f)?;
        self.norm2.forward(g, p, o)
    }
}

/// Stack of encoder layers with a fixed sinusoidal position table.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub positions: Tensor,
}

impl Encoder {
    pub fn new<R: Rng>(
        ps: &mut ParameterSet,
        name: &str,
        depth: usize,
        seq: usize,
        cfg: EncoderLayerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(ps, &format!("{name}.layer{i}"), cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            positions: sinusoidal_positional_encoding(seq, cfg.model_dim)?,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.positions.rows()
    }

    /// Adds position codes to `tokens` (`(batch * seq) x d`) and runs every
    /// layer. Returns each layer's output in order.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        tokens: Var,
        batch: usize,
    ) -> Result<Vec<Var>> {
        let seq = self.seq_len();
        let pe = g.constant(self.positions.clone());
        let mut h = g.add_tiled(tokens, pe)?;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = layer.forward(g, p, ctx, h, batch, seq)?;
            outs.push(h);
        }
        Ok(outs)
    }
}
