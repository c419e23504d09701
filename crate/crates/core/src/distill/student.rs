use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::config::{StudentConfig, StudentInputs};
use super::teacher::output_logit;
use super::Forward;
use crate::numerics::layers::{Encoder, Linear};
use crate::numerics::{
    rng, Bound, Ctx, Graph, ParamId, ParameterSet, Tensor, Var, SALINITY_MAX, SALINITY_MIN,
};
use crate::spectra::Standardizer;
use crate::{Error, Result};

/// Transformer regressor over `[spectral embedding; ancillary]` rows.
///
/// Each of the `tokens` sequence positions carries one patch of the
/// spectral embedding next to the (standardized) ancillary vector; a
/// learned projection lifts that to the model width.
#[derive(Clone, Debug)]
pub struct StudentModel {
    pub cfg: StudentConfig,
    pub params: ParameterSet,
    proj: Option<Linear>,
    encoder: Encoder,
    head: Linear,
    anc_mean: ParamId,
    anc_scale: ParamId,
}

impl StudentModel {
    pub fn new(cfg: &StudentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r: ChaCha8Rng = rng::stream(seed, rng::streams::INIT);
        let mut ps = ParameterSet::new();
        let proj = match cfg.inputs {
            StudentInputs::HsiOnly => None,
            _ => Some(Linear::new(
                &mut ps,
                "student.proj",
                cfg.patch() + cfg.ancillary_dim,
                cfg.model_dim,
                &mut r,
            )),
        };
        let encoder = Encoder::new(
            &mut ps,
            "student.enc",
            cfg.layers,
            cfg.tokens,
            cfg.layer(),
            &mut r,
        )?;
        let head = Linear::new(&mut ps, "student.head", cfg.model_dim, 1, &mut r);
        let anc_mean = ps.add_buffer("student.anc.mean", Tensor::zeros(&[cfg.ancillary_dim]));
        let anc_scale = ps.add_buffer("student.anc.scale", Tensor::full(&[cfg.ancillary_dim], 1.0));
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            proj,
            encoder,
            head,
            anc_mean,
            anc_scale,
        })
    }

    pub fn init_output(&mut self, y: f64) {
        self.params.value_mut(self.head.b).data_mut()[0] = output_logit(y);
    }

    /// Fits the ancillary standardizer on the trailing columns of training rows.
    pub fn fit_ancillary(&mut self, rows: &Tensor) -> Result<()> {
        self.check_width(rows.cols())?;
        let s = self.cfg.spectral_dim;
        let anc: Vec<f64> = (0..rows.rows())
            .flat_map(|i| rows.row(i)[s..].to_vec())
            .collect();
        let st = Standardizer::fit(&anc, self.cfg.ancillary_dim)?;
        *self.params.value_mut(self.anc_mean) = Tensor::new(&[self.cfg.ancillary_dim], st.mean)?;
        *self.params.value_mut(self.anc_scale) = Tensor::new(&[self.cfg.ancillary_dim], st.scale)?;
        Ok(())
    }

    fn check_width(&self, d: usize) -> Result<()> {
        if d != self.cfg.input_dim() {
            return Err(Error::shape(alloc::format!(
                "student expects {} inputs, got {d}",
                self.cfg.input_dim()
            )));
        }
        Ok(())
    }

    /// Token matrix `(batch * tokens) x width` for input rows.
    pub fn tokens(&self, rows: &Tensor) -> Result<Tensor> {
        self.check_width(rows.cols())?;
        let c = &self.cfg;
        let (s, pw) = (c.spectral_dim, c.patch());
        let mean = self.params.value(self.anc_mean).data();
        let scale = self.params.value(self.anc_scale).data();
        let width = match c.inputs {
            StudentInputs::HsiOnly => c.model_dim,
            _ => pw + c.ancillary_dim,
        };
        let mut out = Vec::with_capacity(rows.rows() * c.tokens * width);
        for i in 0..rows.rows() {
            let row = rows.row(i);
            let anc: Vec<f64> = row[s..]
                .iter()
                .zip(mean)
                .zip(scale)
                .map(|((v, m), k)| (v - m) / k)
                .collect();
            for t in 0..c.tokens {
                let patch = &row[t * pw..(t + 1) * pw];
                match c.inputs {
                    StudentInputs::Full => {
                        out.extend_from_slice(patch);
                        out.extend_from_slice(&anc);
                    }
                    StudentInputs::AncillaryOnly => {
                        out.extend(core::iter::repeat_n(0.0, pw));
                        out.extend_from_slice(&anc);
                    }
                    StudentInputs::HsiOnly => {
                        for _ in 0..c.model_dim / pw {
                            out.extend_from_slice(patch);
                        }
                    }
                }
            }
        }
        Tensor::new(&[rows.rows() * c.tokens, width], out)
    }

    /// Forward pass from a token matrix built by [`StudentModel::tokens`].
    pub fn forward_tokens(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        tokens: Var,
    ) -> Result<Forward> {
        let b = g.value(tokens).rows() / self.cfg.tokens;
        let h = match &self.proj {
            Some(l) => l.forward(g, p, tokens)?,
            None => tokens,
        };
        let outs = self.encoder.forward(g, p, ctx, h, b)?;
        let features = outs
            .into_iter()
            .map(|o| g.mean_pool(o, self.cfg.tokens))
            .collect::<Result<Vec<_>>>()?;
        let z = self.head.forward(g, p, *features.last().expect("layers"))?;
        let pred = g.scaled_sigmoid(z, SALINITY_MIN, SALINITY_MAX);
        Ok(Forward { pred, features })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        rows: &Tensor,
    ) -> Result<Forward> {
        let t = g.constant(self.tokens(rows)?);
        self.forward_tokens(g, p, ctx, t)
    }

    pub fn predict(&self, rows: &Tensor) -> Result<Vec<f64>> {
        let mut preds = Vec::with_capacity(rows.rows());
        super::for_chunks(rows, |chunk| {
            let mut g = Graph::new();
            let p = self.params.bind_constant(&mut g);
            let f = self.forward(&mut g, &p, &mut Ctx::eval(), &chunk)?;
            preds.extend_from_slice(g.value(f.pred).data());
            Ok(())
        })?;
        Ok(preds)
    }
}
