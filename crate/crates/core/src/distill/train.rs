use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::DistillWeights;
use super::loss::{composite_loss, feature_distill_loss, term_values};
use super::student::StudentModel;
use super::teacher::{TeacherModel, TeacherTargets};
use crate::numerics::{Bound, Ctx, Graph, ParameterSet, Tensor, Var};
use crate::pipeline::{evaluate, run_schedule, Objective, TrainLog, TrainSchedule, Validation};
use crate::{Error, Result};

/// Labeled teacher inputs (laboratory latent embeddings).
#[derive(Clone, Debug)]
pub struct TeacherData {
    pub train_x: Tensor,
    pub train_y: Vec<f64>,
    pub val_x: Tensor,
    pub val_y: Vec<f64>,
}

/// Labeled student input rows, with frozen teacher outputs for the rows
/// that have a paired laboratory spectrum.
#[derive(Clone, Debug)]
pub struct StudentData {
    pub train_x: Tensor,
    pub train_y: Vec<f64>,
    /// Row-aligned with `train_x`; rows with `paired[i] == false` carry
    /// placeholder values that are never read.
    pub teacher: Option<TeacherTargets>,
    pub paired: Vec<bool>,
    pub val_x: Tensor,
    pub val_y: Vec<f64>,
}

fn check_rows(x: &Tensor, y: &[f64], what: &str) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::shape(alloc::format!(
            "{what}: {} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid(alloc::format!("{what} is empty")));
    }
    Ok(())
}

fn validation(preds: &[f64], labels: &[f64]) -> Result<Validation> {
    let m = evaluate(preds, labels)?;
    Ok(Validation {
        score: m.mae,
        columns: vec![m.mae, m.r2, m.rmse],
    })
}

fn metric_names() -> Vec<String> {
    vec!["val_mae".into(), "val_r2".into(), "val_rmse".into()]
}

fn label_column(y: &[f64], idx: &[usize]) -> Result<Tensor> {
    Tensor::new(&[idx.len(), 1], idx.iter().map(|&i| y[i]).collect())
}

struct TeacherFit<'a> {
    model: &'a mut TeacherModel,
    data: &'a TeacherData,
    delta: f64,
}

impl Objective for TeacherFit<'_> {
    fn params(&self) -> &ParameterSet {
        &self.model.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.model.params
    }
    fn train_len(&self) -> usize {
        self.data.train_y.len()
    }
    fn term_names(&self) -> Vec<String> {
        vec!["huber".into()]
    }
    fn validation_names(&self) -> Vec<String> {
        metric_names()
    }
    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        batch: &[usize],
    ) -> Result<(Var, Vec<f64>)> {
        let x = g.constant(self.data.train_x.gather_rows(batch));
        let f = self.model.forward(g, p, ctx, x)?;
        let y = g.constant(label_column(&self.data.train_y, batch)?);
        let l = g.huber(f.pred, y, self.delta)?;
        Ok((l, vec![g.value(l).item()]))
    }
    fn validate(&self) -> Result<Validation> {
        validation(&self.model.predict(&self.data.val_x)?, &self.data.val_y)
    }
}

/// Huber regression on laboratory embeddings; the best checkpoint by
/// validation MAE is kept.
pub fn train_teacher(
    model: &mut TeacherModel,
    data: &TeacherData,
    huber_delta: f64,
    schedule: &TrainSchedule,
) -> Result<TrainLog> {
    check_rows(&data.train_x, &data.train_y, "teacher training set")?;
    check_rows(&data.val_x, &data.val_y, "teacher validation set")?;
    run_schedule(
        &mut TeacherFit {
            model,
            data,
            delta: huber_delta,
        },
        schedule,
    )
}

struct StudentFit<'a> {
    model: &'a mut StudentModel,
    data: &'a StudentData,
    weights: &'a DistillWeights,
    /// Token matrix of every training row, built once.
    tokens: Tensor,
}

impl StudentFit<'_> {
    fn batch_tokens(&self, batch: &[usize]) -> Tensor {
        let t = self.model.cfg.tokens;
        let idx: Vec<usize> = batch.iter().flat_map(|&i| i * t..(i + 1) * t).collect();
        self.tokens.gather_rows(&idx)
    }
}

/// `rows.len() x n` 0/1 matrix picking `rows` out of an `n`-row batch.
fn selector(rows: &[usize], n: usize) -> Tensor {
    let mut s = Tensor::zeros(&[rows.len(), n]);
    for (r, &c) in rows.iter().enumerate() {
        s.data_mut()[r * n + c] = 1.0;
    }
    s
}

impl Objective for StudentFit<'_> {
    fn params(&self) -> &ParameterSet {
        &self.model.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.model.params
    }
    fn train_len(&self) -> usize {
        self.data.train_y.len()
    }
    fn term_names(&self) -> Vec<String> {
        vec!["task".into(), "feature".into(), "kl".into(), "total".into()]
    }
    fn validation_names(&self) -> Vec<String> {
        metric_names()
    }
    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        batch: &[usize],
    ) -> Result<(Var, Vec<f64>)> {
        let tok = g.constant(self.batch_tokens(batch));
        let f = self.model.forward_tokens(g, p, ctx, tok)?;
        let y = g.constant(label_column(&self.data.train_y, batch)?);
        let task = g.huber(f.pred, y, self.weights.huber_delta)?;
        let (mut feature, mut kl) = (None, None);
        if let (true, Some(t)) = (self.weights.uses_teacher(), &self.data.teacher) {
            let pos: Vec<usize> = (0..batch.len())
                .filter(|&i| self.data.paired[batch[i]])
                .collect();
            let rows: Vec<usize> = pos.iter().map(|&i| batch[i]).collect();
            if !pos.is_empty() {
                let pick = |g: &mut Graph, v: Var| -> Result<Var> {
                    if pos.len() == batch.len() {
                        Ok(v)
                    } else {
                        let s = g.constant(selector(&pos, batch.len()));
                        g.matmul(s, v)
                    }
                };
                let sf = f.features[..3.min(f.features.len())]
                    .iter()
                    .map(|&v| pick(g, v))
                    .collect::<Result<Vec<_>>>()?;
                let tf: Vec<Var> = t
                    .features
                    .iter()
                    .map(|m| g.constant(m.gather_rows(&rows)))
                    .collect();
                feature = Some(feature_distill_loss(
                    g,
                    &sf,
                    &tf,
                    &self.weights.layer_weights,
                    self.weights.smooth_l1_delta,
                )?);
                if pos.len() >= 2 {
                    let sp = pick(g, f.pred)?;
                    let tp: Vec<f64> = rows.iter().map(|&i| t.preds[i]).collect();
                    kl = Some(g.batch_kl(&tp, sp)?);
                }
            }
        }
        let total = composite_loss(g, task, feature, kl, self.weights)?;
        let terms = term_values(g, task, feature, kl, total);
        Ok((total, terms))
    }
    fn validate(&self) -> Result<Validation> {
        validation(&self.model.predict(&self.data.val_x)?, &self.data.val_y)
    }
}

/// Trains the student on the composite objective. Teacher outputs are
/// fixed inputs here, so no gradient can reach the teacher.
pub fn train_student(
    model: &mut StudentModel,
    data: &StudentData,
    weights: &DistillWeights,
    schedule: &TrainSchedule,
) -> Result<TrainLog> {
    weights.validate()?;
    check_rows(&data.train_x, &data.train_y, "student training set")?;
    check_rows(&data.val_x, &data.val_y, "student validation set")?;
    if data.paired.len() != data.train_y.len() {
        return Err(Error::shape("pairing mask does not cover the training set"));
    }
    if let Some(t) = &data.teacher {
        if t.preds.len() != data.train_y.len()
            || t.features.iter().any(|f| f.rows() != data.train_y.len())
        {
            return Err(Error::shape(
                "teacher targets are not row-aligned with the training set",
            ));
        }
        if t.features.len() != weights.layer_weights.len() || model.cfg.layers < t.features.len() {
            return Err(Error::shape(
                "teacher layers, student layers, and layer weights disagree",
            ));
        }
        if t.features.iter().any(|f| f.cols() > model.cfg.model_dim) {
            return Err(Error::shape("teacher features are wider than the student"));
        }
    } else if weights.uses_teacher() {
        return Err(Error::config(
            "distillation weights are set but no teacher targets were given",
        ));
    }
    let tokens = model.tokens(&data.train_x)?;
    run_schedule(
        &mut StudentFit {
            model,
            data,
            weights,
            tokens,
        },
        schedule,
    )
}

/// Student rows for which `teacher_inputs` holds a paired laboratory
/// embedding (`None` rows get no distillation signal).
pub fn teacher_targets(
    teacher: &TeacherModel,
    inputs: &[Option<&[f64]>],
) -> Result<(TeacherTargets, Vec<bool>)> {
    let d = teacher.cfg.input_dim;
    let paired: Vec<bool> = inputs.iter().map(Option::is_some).collect();
    let mut data = Vec::with_capacity(inputs.len() * d);
    for r in inputs {
        match r {
            Some(v) if v.len() == d => data.extend_from_slice(v),
            Some(v) => {
                return Err(Error::shape(alloc::format!(
                    "teacher input of width {}",
                    v.len()
                )))
            }
            None => data.extend(core::iter::repeat_n(0.0, d)),
        }
    }
    let t = teacher.targets(&Tensor::new(&[inputs.len(), d], data)?)?;
    Ok((t, paired))
}
