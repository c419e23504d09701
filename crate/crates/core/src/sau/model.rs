use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::config::SauConfig;
use crate::numerics::layers::{patches, Encoder, LayerNorm, Linear, Mlp};
use crate::numerics::{rng, Bound, Ctx, Graph, ParamId, ParameterSet, Tensor, Var};
use crate::spectra::{drop_bands, minmax_normalize, FtirSpectrum, SatelliteSpectrum, Standardizer};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    Ftir,
    Satellite,
}

/// Loss weight: learned through a softplus, or a fixed value.
#[derive(Clone, Copy, Debug)]
enum Weight {
    Learned(ParamId),
    Fixed(ParamId),
}

fn inverse_softplus(y: f64) -> f64 {
    // ln(e^y - 1), stable for large y
    y + (-(-y).exp_m1()).ln()
}

#[derive(Clone, Debug)]
struct Refiner {
    embed: Linear,
    encoder: Encoder,
    out: Linear,
    tokens: usize,
}

#[derive(Clone, Debug)]
pub struct SauModel {
    pub cfg: SauConfig,
    pub params: ParameterSet,
    ftir_enc: Mlp,
    sat_enc: Mlp,
    refiner: Option<Refiner>,
    proj: Linear,
    norm: LayerNorm,
    ftir_dec: Mlp,
    sat_dec: Mlp,
    alpha: Weight,
    beta: Weight,
    ftir_scaler: (ParamId, ParamId),
    sat_scaler: (ParamId, ParamId),
}

// The refinement residual starts as the identity. Its pooled output is
// nearly input-independent at random init, and would otherwise give both
// paths a shared component before any training.
fn zeroed(l: Linear, ps: &mut ParameterSet) -> Linear {
    for id in [l.w, l.b] {
        let shape = ps.value(id).shape().to_vec();
        *ps.value_mut(id) = Tensor::zeros(&shape);
    }
    l
}

fn weight(ps: &mut ParameterSet, name: &str, init: f64, learnable: bool) -> Weight {
    if learnable && init > 0.0 {
        Weight::Learned(ps.add(
            &format!("loss.{name}_raw"),
            Tensor::scalar(inverse_softplus(init)),
        ))
    } else {
        Weight::Fixed(ps.add_buffer(&format!("loss.{name}"), Tensor::scalar(init)))
    }
}

impl SauModel {
    /// Parameter name prefixes of the two encoder stacks.
    pub const FTIR_ENCODER: &'static str = "ftir.enc.";
    pub const SAT_ENCODER: &'static str = "sat.enc.";

    pub fn new(cfg: &SauConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r: ChaCha8Rng = rng::stream(seed, rng::streams::INIT);
        let mut ps = ParameterSet::new();
        let ftir_enc = Mlp::new(&mut ps, "ftir.enc", &cfg.ftir_widths(), cfg.dropout, &mut r)?;
        let sat_enc = Mlp::new(&mut ps, "sat.enc", &cfg.sat_widths(), cfg.dropout, &mut r)?;
        let refiner = if cfg.refine {
            let lc = cfg.refine_layer();
            let patch = cfg.latent_dim / cfg.refine_tokens;
            Some(Refiner {
                embed: Linear::new(&mut ps, "shared.refine.embed", patch, lc.model_dim, &mut r),
                encoder: Encoder::new(
                    &mut ps,
                    "shared.refine",
                    cfg.refine_layers,
                    cfg.refine_tokens,
                    lc,
                    &mut r,
                )?,
                out: zeroed(
                    Linear::new(
                        &mut ps,
                        "shared.refine.out",
                        lc.model_dim,
                        cfg.latent_dim,
                        &mut r,
                    ),
                    &mut ps,
                ),
                tokens: cfg.refine_tokens,
            })
        } else {
            None
        };
        let proj = Linear::new(
            &mut ps,
            "shared.proj",
            cfg.latent_dim,
            cfg.latent_dim,
            &mut r,
        );
        let norm = LayerNorm::new(&mut ps, "shared.norm", cfg.latent_dim);
        let rev = |w: Vec<usize>| w.into_iter().rev().collect::<Vec<_>>();
        let ftir_dec = Mlp::new(
            &mut ps,
            "ftir.dec",
            &rev(cfg.ftir_widths()),
            cfg.dropout,
            &mut r,
        )?;
        let sat_dec = Mlp::new(
            &mut ps,
            "sat.dec",
            &rev(cfg.sat_widths()),
            cfg.dropout,
            &mut r,
        )?;
        let alpha = weight(&mut ps, "alpha", cfg.alpha_init, cfg.learnable_weights);
        let beta = weight(&mut ps, "beta", cfg.beta_init, cfg.learnable_weights);
        let scaler = |ps: &mut ParameterSet, name: &str, n: usize| {
            (
                ps.add_buffer(&format!("{name}.scaler.mean"), Tensor::zeros(&[n])),
                ps.add_buffer(&format!("{name}.scaler.scale"), Tensor::full(&[n], 1.0)),
            )
        };
        let ftir_scaler = scaler(&mut ps, "ftir", cfg.ftir_bands);
        let sat_scaler = scaler(&mut ps, "sat", cfg.sat_bands);
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            ftir_enc,
            sat_enc,
            refiner,
            proj,
            norm,
            ftir_dec,
            sat_dec,
            alpha,
            beta,
            ftir_scaler,
            sat_scaler,
        })
    }

    /// Fits the per-band input standardizers on training rows (already
    /// built by [`SauModel::ftir_rows`] and [`SauModel::sat_rows`]).
    pub fn fit_scalers(&mut self, ftir_rows: &Tensor, sat_rows: &Tensor) -> Result<()> {
        for (rows, (m, s), n) in [
            (ftir_rows, self.ftir_scaler, self.cfg.ftir_bands),
            (sat_rows, self.sat_scaler, self.cfg.sat_bands),
        ] {
            let st = Standardizer::fit(rows.data(), n)?;
            *self.params.value_mut(m) = Tensor::new(&[n], st.mean)?;
            *self.params.value_mut(s) = Tensor::new(&[n], st.scale)?;
        }
        Ok(())
    }

    /// Raw laboratory absorbance rows.
    pub fn ftir_rows(spectra: &[&FtirSpectrum]) -> Result<Tensor> {
        let n = spectra.first().map_or(0, |s| s.absorbance.len());
        let mut data = Vec::with_capacity(spectra.len() * n);
        for s in spectra {
            s.validate()?;
            data.extend_from_slice(&s.absorbance);
        }
        Tensor::new(&[spectra.len(), n], data)
    }

    /// Satellite rows after band dropping and per-spectrum min-max scaling.
    pub fn sat_rows(&self, spectra: &[&SatelliteSpectrum]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(spectra.len() * self.cfg.sat_bands);
        for s in spectra {
            let kept = if s.reflectance.len() == self.cfg.sat_bands {
                (*s).clone()
            } else {
                drop_bands(s, &self.cfg.drop_bands)?
            };
            let v = minmax_normalize(&kept.reflectance)?;
            if v.len() != self.cfg.sat_bands {
                return Err(Error::shape(format!(
                    "satellite rows have {} bands, encoder expects {}",
                    v.len(),
                    self.cfg.sat_bands
                )));
            }
            data.extend(v);
        }
        Tensor::new(&[spectra.len(), self.cfg.sat_bands], data)
    }

    /// Applies the path's standardizer to raw rows.
    pub fn standardize(&self, rows: &Tensor, path: Path) -> Result<Tensor> {
        let (m, s) = match path {
            Path::Ftir => self.ftir_scaler,
            Path::Satellite => self.sat_scaler,
        };
        let n = self.in_dim(path);
        if rows.shape().len() != 2 || rows.cols() != n {
            return Err(Error::shape(format!(
                "{path:?} path expects {n} bands, got shape {:?}",
                rows.shape()
            )));
        }
        let st = Standardizer {
            mean: self.params.value(m).data().to_vec(),
            scale: self.params.value(s).data().to_vec(),
        };
        let mut out = rows.clone();
        st.transform_in_place(out.data_mut());
        Ok(out)
    }

    pub fn in_dim(&self, path: Path) -> usize {
        match path {
            Path::Ftir => self.cfg.ftir_bands,
            Path::Satellite => self.cfg.sat_bands,
        }
    }

    /// Path encoder followed by the shared stage: standardized rows in,
    /// layer-normalized latent out.
    pub fn latent(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        x: Var,
        path: Path,
    ) -> Result<Var> {
        let batch = g.value(x).rows();
        if g.value(x).cols() != self.in_dim(path) {
            return Err(Error::shape(format!(
                "{path:?} path expects {} bands, got {}",
                self.in_dim(path),
                g.value(x).cols()
            )));
        }
        let enc = match path {
            Path::Ftir => &self.ftir_enc,
            Path::Satellite => &self.sat_enc,
        };
        // a frozen encoder runs in inference mode so its running
        // statistics stay fixed too
        let h = if self.params.get(enc.out.w).trainable {
            enc.forward(g, p, ctx, x)?
        } else {
            enc.forward(g, p, &mut Ctx::eval(), x)?
        };
        let h = match &self.refiner {
            Some(rf) => {
                let t = patches(g, h, batch, self.cfg.latent_dim, rf.tokens)?;
                let e = rf.embed.forward(g, p, t)?;
                let outs = rf.encoder.forward(g, p, ctx, e, batch)?;
                let last = *outs
                    .last()
                    .ok_or_else(|| Error::config("refinement stage has no layers"))?;
                let pooled = g.mean_pool(last, rf.tokens)?;
                let delta = rf.out.forward(g, p, pooled)?;
                g.add(h, delta)?
            }
            None => h,
        };
        let z = self.proj.forward(g, p, h)?;
        self.norm.forward(g, p, z)
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        z: Var,
        path: Path,
    ) -> Result<Var> {
        match path {
            Path::Ftir => self.ftir_dec.forward(g, p, ctx, z),
            Path::Satellite => self.sat_dec.forward(g, p, ctx, z),
        }
    }

    /// `(alpha, beta)` on the graph.
    pub fn loss_weights(&self, g: &mut Graph, p: &Bound) -> (Var, Var) {
        let mut w = |w: Weight| match w {
            Weight::Learned(id) => g.softplus(p.var(id)),
            Weight::Fixed(id) => p.var(id),
        };
        (w(self.alpha), w(self.beta))
    }

    fn weight_value(&self, w: Weight) -> f64 {
        match w {
            Weight::Learned(id) => {
                let x = self.params.value(id).item();
                x.max(0.0) + (-x.abs()).exp().ln_1p()
            }
            Weight::Fixed(id) => self.params.value(id).item(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.weight_value(self.alpha)
    }

    pub fn beta(&self) -> f64 {
        self.weight_value(self.beta)
    }

    /// Eval-mode latent embeddings of standardized rows, in chunks.
    pub fn encode_standardized(&self, rows: &Tensor, path: Path) -> Result<Tensor> {
        let n = rows.rows();
        let d = rows.cols();
        let mut out = Vec::with_capacity(n * self.cfg.latent_dim);
        for start in (0..n).step_by(256) {
            let end = (start + 256).min(n);
            let chunk = Tensor::new(&[end - start, d], rows.data()[start * d..end * d].to_vec())?;
            let mut g = Graph::new();
            let p = self.params.bind_constant(&mut g);
            let x = g.constant(chunk);
            let z = self.latent(&mut g, &p, &mut Ctx::eval(), x, path)?;
            out.extend_from_slice(g.value(z).data());
        }
        Tensor::new(&[n, self.cfg.latent_dim], out)
    }

    /// Eval-mode embeddings of raw rows (standardized internally).
    pub fn encode(&self, rows: &Tensor, path: Path) -> Result<Tensor> {
        self.encode_standardized(&self.standardize(rows, path)?, path)
    }

    /// Reinitializes the shared projection to zero, which makes every
    /// pre-normalization latent zero.
    pub fn zero_projection(&mut self) {
        for id in [self.proj.w, self.proj.b] {
            let shape = self.params.value(id).shape().to_vec();
            *self.params.value_mut(id) = Tensor::zeros(&shape);
        }
    }

    /// Freezes or thaws every tensor under `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        self.params.set_trainable_prefix(prefix, trainable)
    }

    pub fn learnable_weight_ids(&self) -> Vec<ParamId> {
        [self.alpha, self.beta]
            .into_iter()
            .filter_map(|w| match w {
                Weight::Learned(id) => Some(id),
                Weight::Fixed(_) => None,
            })
            .collect()
    }
}
