use alloc::format;

use super::config::AlignmentKind;
use super::model::{Path, SauModel};
use crate::numerics::{Bound, Ctx, Graph, Var};
use crate::{Error, Result};

/// `1 - cos(u, v)`; undefined for a zero vector.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::degenerate(
            "cosine distance with a zero vector: angle undefined",
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// `alpha * mean_i ||x_i - xhat_i||^2`.
pub fn recon_loss(g: &mut Graph, x: Var, xhat: Var, alpha: Var) -> Result<Var> {
    let e = g.squared_error_rows(xhat, x)?;
    g.mul(alpha, e)
}

/// `beta * mean_i d(zf_i, zs_i)` for the configured divergence.
pub fn align_loss(
    g: &mut Graph,
    zf: Var,
    zs: Var,
    beta: Var,
    kind: AlignmentKind,
    l2_normalize: bool,
) -> Result<Var> {
    let d = match kind {
        AlignmentKind::Cosine => {
            let (a, b) = if l2_normalize {
                (g.l2_normalize_rows(zf)?, g.l2_normalize_rows(zs)?)
            } else {
                (zf, zs)
            };
            g.cosine_distance_rows(a, b)?
        }
        AlignmentKind::Kl => g.row_kl(zf, zs)?,
        AlignmentKind::Js => g.row_js(zf, zs)?,
    };
    g.mul(beta, d)
}

/// Graph handles of the loss decomposition.
#[derive(Clone, Copy, Debug)]
pub struct SauLossParts {
    pub total: Var,
    pub recon: Var,
    /// Present when a satellite batch was supplied.
    pub align: Option<Var>,
}

/// Reconstruction of the laboratory rows plus, when paired satellite rows
/// are given, alignment of the two latents and the auxiliary satellite
/// decoder error. The auxiliary decoder reads a detached latent so it
/// never steers the satellite encoder.
pub fn sau_total_loss(
    g: &mut Graph,
    p: &Bound,
    ctx: &mut Ctx<'_>,
    model: &SauModel,
    ftir: Var,
    sat: Option<Var>,
) -> Result<SauLossParts> {
    let (alpha, beta) = model.loss_weights(g, p);
    let zf = model.latent(g, p, ctx, ftir, Path::Ftir)?;
    let xf = model.decode(g, p, ctx, zf, Path::Ftir)?;
    let mut recon = recon_loss(g, ftir, xf, alpha)?;
    let Some(sat) = sat else {
        return Ok(SauLossParts {
            total: recon,
            recon,
            align: None,
        });
    };
    let zs = model.latent(g, p, ctx, sat, Path::Satellite)?;
    let align = align_loss(g, zf, zs, beta, model.cfg.alignment, model.cfg.l2_normalize)?;
    if model.cfg.aux_decoder {
        let detached = g.constant(g.value(zs).clone());
        let xs = model.decode(g, p, ctx, detached, Path::Satellite)?;
        let aux = recon_loss(g, sat, xs, alpha)?;
        recon = g.add(recon, aux)?;
    }
    let total = g.add(recon, align)?;
    Ok(SauLossParts {
        total,
        recon,
        align: Some(align),
    })
}
