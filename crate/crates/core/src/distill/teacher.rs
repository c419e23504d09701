use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::config::TeacherConfig;
use super::Forward;
use crate::numerics::layers::{patches, Encoder, Linear};
use crate::numerics::{
    rng, Bound, Ctx, Graph, ParameterSet, Tensor, Var, SALINITY_MAX, SALINITY_MIN,
};
use crate::{Error, Result};

/// Frozen teacher outputs on a fixed input set: one prediction per row and
/// one mean-pooled activation matrix per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub preds: Vec<f64>,
    pub features: Vec<Tensor>,
}

/// Transformer regressor over laboratory latent embeddings.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub cfg: TeacherConfig,
    pub params: ParameterSet,
    embed: Linear,
    encoder: Encoder,
    head: Linear,
}

/// Logit placing the scaled-sigmoid output at `y`.
pub(crate) fn output_logit(y: f64) -> f64 {
    let u = ((y - SALINITY_MIN) / (SALINITY_MAX - SALINITY_MIN)).clamp(1e-6, 1.0 - 1e-6);
    (u / (1.0 - u)).ln()
}

impl TeacherModel {
    pub fn new(cfg: &TeacherConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r: ChaCha8Rng = rng::stream(seed, rng::streams::INIT);
        let mut ps = ParameterSet::new();
        let patch = cfg.input_dim / cfg.tokens;
        let embed = Linear::new(&mut ps, "teacher.embed", patch, cfg.model_dim, &mut r);
        let encoder = Encoder::new(
            &mut ps,
            "teacher.enc",
            cfg.layers,
            cfg.tokens,
            cfg.layer(),
            &mut r,
        )?;
        let head = Linear::new(&mut ps, "teacher.head", cfg.model_dim, 1, &mut r);
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            embed,
            encoder,
            head,
        })
    }

    /// Starts the output at `y` (typically the training label mean) so the
    /// sigmoid does not begin saturated at mid-range.
    pub fn init_output(&mut self, y: f64) {
        self.params.value_mut(self.head.b).data_mut()[0] = output_logit(y);
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ctx: &mut Ctx<'_>, x: Var) -> Result<Forward> {
        let (b, d) = (g.value(x).rows(), g.value(x).cols());
        if d != self.cfg.input_dim {
            return Err(Error::shape(alloc::format!(
                "teacher expects {} inputs, got {d}",
                self.cfg.input_dim
            )));
        }
        let t = patches(g, x, b, d, self.cfg.tokens)?;
        let e = self.embed.forward(g, p, t)?;
        let outs = self.encoder.forward(g, p, ctx, e, b)?;
        let features = outs
            .into_iter()
            .map(|o| g.mean_pool(o, self.cfg.tokens))
            .collect::<Result<Vec<_>>>()?;
        let z = self.head.forward(g, p, *features.last().expect("layers"))?;
        let pred = g.scaled_sigmoid(z, SALINITY_MIN, SALINITY_MAX);
        Ok(Forward { pred, features })
    }

    /// Eval-mode predictions and pooled activations.
    pub fn targets(&self, rows: &Tensor) -> Result<TeacherTargets> {
        let mut preds = Vec::with_capacity(rows.rows());
        let mut feats: Vec<Vec<f64>> = alloc::vec![Vec::new(); self.cfg.layers];
        super::for_chunks(rows, |chunk| {
            let mut g = Graph::new();
            let p = self.params.bind_constant(&mut g);
            let x = g.constant(chunk);
            let f = self.forward(&mut g, &p, &mut Ctx::eval(), x)?;
            preds.extend_from_slice(g.value(f.pred).data());
            for (acc, v) in feats.iter_mut().zip(&f.features) {
                acc.extend_from_slice(g.value(*v).data());
            }
            Ok(())
        })?;
        let n = rows.rows();
        let features = feats
            .into_iter()
            .map(|v| Tensor::new(&[n, self.cfg.model_dim], v))
            .collect::<Result<Vec<_>>>()?;
        Ok(TeacherTargets { preds, features })
    }

    pub fn predict(&self, rows: &Tensor) -> Result<Vec<f64>> {
        Ok(self.targets(rows)?.preds)
    }
}
