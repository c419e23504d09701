//! The three distillation terms and their weighted sum. Plain functions
//! take slices; the `graph_*` forms build the same values on a tape.

use alloc::vec;
use alloc::vec::Vec;

use super::config::DistillWeights;
use crate::numerics::{softmax, Graph, Var};
use crate::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("loss inputs have different lengths"));
    }
    if a.is_empty() {
        return Err(Error::invalid("loss of an empty batch"));
    }
    Ok(())
}

/// Mean Huber loss: `r²/2` inside `delta`, `delta (|r| - delta/2)` outside.
pub fn huber_loss(y: &[f64], yhat: &[f64], delta: f64) -> Result<f64> {
    check_pair(y, yhat)?;
    let s: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let r = (a - b).abs();
            if r <= delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            }
        })
        .sum();
    Ok(s / y.len() as f64)
}

/// Mean smooth-L1: `d²/(2 delta)` inside `delta`, `|d| - delta/2` outside.
pub fn smooth_l1(a: &[f64], b: &[f64], delta: f64) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d < delta {
                0.5 * d * d / delta
            } else {
                d - 0.5 * delta
            }
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `sum p ln(p/q)`; zero-probability terms of `p` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum())
}

/// KL between the batch softmaxes of teacher and student predictions.
pub fn kl_output_loss(teacher: &[f64], student: &[f64]) -> Result<f64> {
    check_pair(teacher, student)?;
    if teacher.len() < 2 {
        return Err(Error::degenerate(
            "a batch of one prediction is a degenerate distribution",
        ));
    }
    kl_divergence(&softmax(teacher)?, &softmax(student)?)
}

/// Weighted layer mean of per-layer smooth-L1 values.
pub fn feature_distill_value(per_layer: &[f64], w: &[f64]) -> Result<f64> {
    if per_layer.len() != w.len() || w.is_empty() {
        return Err(Error::shape("layer count does not match the layer weights"));
    }
    Ok(per_layer.iter().zip(w).map(|(l, w)| l * w).sum::<f64>() / w.len() as f64)
}

/// `(1/L) sum_l w_l SmoothL1(student_l[:, :dims], teacher_l)` on the tape.
/// Student activations wider than `dims` are sliced to the leading columns.
pub fn feature_distill_loss(
    g: &mut Graph,
    student: &[Var],
    teacher: &[Var],
    w: &[f64],
    delta: f64,
) -> Result<Var> {
    if student.len() != w.len() || teacher.len() != w.len() || w.is_empty() {
        return Err(Error::shape(alloc::format!(
            "{} student layers, {} teacher layers, {} weights",
            student.len(),
            teacher.len(),
            w.len()
        )));
    }
    let mut total: Option<Var> = None;
    for ((&s, &t), &wl) in student.iter().zip(teacher).zip(w) {
        let dims = g.value(t).cols();
        let s = if g.value(s).cols() > dims {
            g.slice_cols(s, 0, dims)?
        } else {
            s
        };
        let l = g.smooth_l1(s, t, delta)?;
        let l = g.scale(l, wl);
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    let total = total.expect("nonempty");
    Ok(g.scale(total, 1.0 / w.len() as f64))
}

/// `alpha task + beta feature + gamma kl`. Absent terms count as zero.
pub fn composite_loss(
    g: &mut Graph,
    task: Var,
    feature: Option<Var>,
    kl: Option<Var>,
    w: &DistillWeights,
) -> Result<Var> {
    let mut total = g.scale(task, w.alpha);
    for (term, c) in [(feature, w.beta), (kl, w.gamma)] {
        if let Some(t) = term {
            let t = g.scale(t, c);
            total = g.add(total, t)?;
        }
    }
    Ok(total)
}

/// Plain weighted sum, the recomposition oracle for [`composite_loss`].
pub fn composite_value(task: f64, feature: f64, kl: f64, w: &DistillWeights) -> f64 {
    w.alpha * task + w.beta * feature + w.gamma * kl
}

/// Values of each term, for logging.
pub fn term_values(
    g: &Graph,
    task: Var,
    feature: Option<Var>,
    kl: Option<Var>,
    total: Var,
) -> Vec<f64> {
    let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item());
    vec![
        g.value(task).item(),
        v(feature),
        v(kl),
        g.value(total).item(),
    ]
}
