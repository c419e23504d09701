//! Reverse-mode gradients against central finite differences.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParameterSet};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step, scaled by `max(1, |x|)`.
    pub step: f64,
    /// Tensors larger than this are probed at a seeded random subset.
    pub max_probes_per_tensor: usize,
    /// Denominator floor of the relative error, scaled by `max(1, |loss|)`.
    /// Keeps near-zero components from dividing round-off by round-off.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_probes_per_tensor: 12,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub trainable: bool,
    /// `(flat index, reverse-mode value, finite-difference value)`.
    /// Frozen tensors report their analytic gradient with no probe.
    pub probes: Vec<(usize, f64, f64)>,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

fn eval<F>(model_fn: &F, params: &ParameterSet) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let root = model_fn(&mut g, &bound)?;
    Ok(g.value(root).item())
}

/// Compares reverse-mode gradients of the scalar produced by `model_fn`
/// against central differences for every trainable tensor of `params`.
///
/// `model_fn` must be deterministic (no dropout) and smooth at the probe
/// point.
pub fn gradient_check<F>(
    model_fn: F,
    params: &ParameterSet,
    tol: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let root = model_fn(&mut g, &bound)?;
    let loss = g.value(root).item();
    if !loss.is_finite() {
        return Err(Error::degenerate("non-finite loss at the probe point"));
    }
    let grads = g.backward(root)?;
    let floor = opts.abs_floor * loss.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    let mut overall: f64 = 0.0;

    for (id, p) in params.iter() {
        let analytic: Vec<f64> = match grads.get(bound.var(id)) {
            Some(gv) => gv.to_vec(),
            None => alloc::vec![0.0; p.value.len()],
        };
        if !p.trainable {
            tensors.push(TensorCheck {
                name: p.name.clone(),
                trainable: false,
                probes: analytic
                    .iter()
                    .enumerate()
                    .take(opts.max_probes_per_tensor)
                    .map(|(i, a)| (i, *a, 0.0))
                    .collect(),
                max_rel_error: 0.0,
            });
            continue;
        }
        let n = p.value.len();
        let indices: Vec<usize> = if n <= opts.max_probes_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_probes_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut probes = Vec::with_capacity(indices.len());
        let mut worst: f64 = 0.0;
        for i in indices {
            let x0 = p.value.data()[i];
            let h = opts.step * x0.abs().max(1.0);
            probe.value_mut(id).data_mut()[i] = x0 + h;
            let fp = eval(&model_fn, &probe)?;
            probe.value_mut(id).data_mut()[i] = x0 - h;
            let fm = eval(&model_fn, &probe)?;
            probe.value_mut(id).data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            probes.push((i, a, numeric));
        }
        overall = overall.max(worst);
        tensors.push(TensorCheck {
            name: p.name.clone(),
            trainable: true,
            probes,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        loss,
        tensors,
        max_rel_error: overall,
        tol,
    })
}
