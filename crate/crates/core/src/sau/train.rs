use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::loss::{cosine_distance, sau_total_loss};
use super::model::{Path, SauModel};
use crate::numerics::{Bound, Ctx, Graph, ParameterSet, Tensor, Var};
use crate::pipeline::{run_schedule, Objective, TrainLog, TrainSchedule, Validation};
use crate::{Error, Result};

/// Standardized, row-aligned laboratory and satellite inputs of paired
/// samples.
#[derive(Clone, Debug)]
pub struct AlignData {
    pub train_ftir: Tensor,
    pub train_sat: Tensor,
    pub val_ftir: Tensor,
    pub val_sat: Tensor,
}

/// Eval-mode mean of `1 - cos` between the two views of each pair.
pub fn mean_pair_cosine_distance(model: &SauModel, ftir: &Tensor, sat: &Tensor) -> Result<f64> {
    if ftir.rows() != sat.rows() || ftir.rows() == 0 {
        return Err(Error::shape(
            "paired inputs must be nonempty and row-aligned",
        ));
    }
    let zf = model.encode_standardized(ftir, Path::Ftir)?;
    let zs = model.encode_standardized(sat, Path::Satellite)?;
    let mut total = 0.0;
    for i in 0..zf.rows() {
        total += cosine_distance(zf.row(i), zs.row(i))?;
    }
    Ok(total / zf.rows() as f64)
}

/// Eval-mode mean squared reconstruction norm of standardized rows.
pub fn recon_error(model: &SauModel, rows: &Tensor, path: Path) -> Result<f64> {
    let mut total = 0.0;
    for start in (0..rows.rows()).step_by(256) {
        let end = (start + 256).min(rows.rows());
        let idx: Vec<usize> = (start..end).collect();
        let chunk = rows.gather_rows(&idx);
        let mut g = Graph::new();
        let p = model.params.bind_constant(&mut g);
        let x = g.constant(chunk);
        let mut ctx = Ctx::eval();
        let z = model.latent(&mut g, &p, &mut ctx, x, path)?;
        let xhat = model.decode(&mut g, &p, &mut ctx, z, path)?;
        let e = g.squared_error_rows(xhat, x)?;
        total += g.value(e).item() * (end - start) as f64;
    }
    Ok(total / rows.rows().max(1) as f64)
}

struct Pretrain<'a> {
    model: &'a mut SauModel,
    train: &'a Tensor,
    val: &'a Tensor,
}

impl Objective for Pretrain<'_> {
    fn params(&self) -> &ParameterSet {
        &self.model.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.model.params
    }
    fn train_len(&self) -> usize {
        self.train.rows()
    }
    fn term_names(&self) -> Vec<String> {
        vec!["recon".into(), "alpha".into()]
    }
    fn validation_names(&self) -> Vec<String> {
        vec!["val_recon".into()]
    }
    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        batch: &[usize],
    ) -> Result<(Var, Vec<f64>)> {
        let x = g.constant(self.train.gather_rows(batch));
        let parts = sau_total_loss(g, p, ctx, self.model, x, None)?;
        Ok((
            parts.total,
            vec![g.value(parts.recon).item(), self.model.alpha()],
        ))
    }
    fn validate(&self) -> Result<Validation> {
        let e = recon_error(self.model, self.val, Path::Ftir)?;
        Ok(Validation {
            score: e,
            columns: vec![e],
        })
    }
}

struct Align<'a> {
    model: &'a mut SauModel,
    data: &'a AlignData,
}

impl Objective for Align<'_> {
    fn params(&self) -> &ParameterSet {
        &self.model.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.model.params
    }
    fn train_len(&self) -> usize {
        self.data.train_ftir.rows()
    }
    fn term_names(&self) -> Vec<String> {
        vec![
            "recon".into(),
            "align".into(),
            "total".into(),
            "alpha".into(),
            "beta".into(),
        ]
    }
    fn validation_names(&self) -> Vec<String> {
        vec!["val_cosine".into(), "val_recon".into()]
    }
    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        batch: &[usize],
    ) -> Result<(Var, Vec<f64>)> {
        let f = g.constant(self.data.train_ftir.gather_rows(batch));
        let s = g.constant(self.data.train_sat.gather_rows(batch));
        let parts = sau_total_loss(g, p, ctx, self.model, f, Some(s))?;
        let align = parts.align.map_or(0.0, |a| g.value(a).item());
        let terms = vec![
            g.value(parts.recon).item(),
            align,
            g.value(parts.total).item(),
            self.model.alpha(),
            self.model.beta(),
        ];
        Ok((parts.total, terms))
    }
    fn validate(&self) -> Result<Validation> {
        let cos = mean_pair_cosine_distance(self.model, &self.data.val_ftir, &self.data.val_sat)?;
        let recon = recon_error(self.model, &self.data.val_ftir, Path::Ftir)?;
        Ok(Validation {
            score: cos,
            columns: vec![cos, recon],
        })
    }
}

fn thaw(model: &mut SauModel) {
    for p in model.params.iter_mut().filter(|p| !p.buffer) {
        p.trainable = true;
    }
}

/// Reconstruction-only training of the laboratory path and the shared
/// stage; the satellite path and the alignment weight stay fixed.
/// Inputs are standardized laboratory rows.
pub fn pretrain_ftir(
    model: &mut SauModel,
    train: &Tensor,
    val: &Tensor,
    schedule: &TrainSchedule,
) -> Result<TrainLog> {
    thaw(model);
    model.set_trainable("sat.", false);
    model.set_trainable("loss.beta", false);
    let log = run_schedule(&mut Pretrain { model, train, val }, schedule);
    thaw(model);
    log
}

/// Joint training on pairs with the laboratory encoder frozen (by
/// default). Early stopping follows the held-out pair cosine distance.
pub fn finetune_align(
    model: &mut SauModel,
    data: &AlignData,
    schedule: &TrainSchedule,
) -> Result<TrainLog> {
    if data.train_ftir.rows() != data.train_sat.rows()
        || data.val_ftir.rows() != data.val_sat.rows()
    {
        return Err(Error::shape("paired inputs are not row-aligned"));
    }
    if data.train_ftir.rows() == 0 || data.val_ftir.rows() == 0 {
        return Err(Error::invalid(
            "alignment needs nonempty training and held-out pairs",
        ));
    }
    thaw(model);
    if model.cfg.freeze_ftir_in_alignment {
        model.set_trainable(SauModel::FTIR_ENCODER, false);
    }
    let log = run_schedule(&mut Align { model, data }, schedule);
    thaw(model);
    log
}
