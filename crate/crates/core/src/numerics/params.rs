use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Index of a tensor inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub trainable: bool,
    /// Non-learned state (running statistics, fixed scalers). Never trained.
    pub buffer: bool,
}

/// Named tensors with gradient buffers and per-tensor trainable flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Param>,
}

/// Graph variables for every tensor of a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, value: Tensor, trainable: bool, buffer: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let grad = vec![0.0; value.len()];
        self.params.push(Param {
            name: String::from(name),
            value,
            grad,
            trainable,
            buffer,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, value, true, false)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, value, false, true)
    }

    /// Xavier-uniform `fan_in x fan_out` weight.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..a))
            .collect();
        self.add(name, Tensor::new(&[fan_in, fan_out], data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar values over trainable, non-buffer tensors.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Sets the trainable flag of every non-buffer tensor whose name starts
    /// with `prefix`. Returns how many tensors matched.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for p in self
            .params
            .iter_mut()
            .filter(|p| !p.buffer && p.name.starts_with(prefix))
        {
            p.trainable = trainable;
            n += 1;
        }
        n
    }

    /// Places every tensor on `g`. Trainable tensors become gradient leaves,
    /// the rest constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    g.leaf(p.value.clone(), true)
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Places every tensor on `g` as a constant, for inference.
    pub fn bind_constant(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect();
        Bound { vars }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds the tape gradients of every bound trainable tensor into its buffer.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if !p.trainable {
                continue;
            }
            if let Some(gv) = grads.get(v) {
                for (acc, x) in p.grad.iter_mut().zip(gv) {
                    *acc += x;
                }
            }
        }
    }

    /// Euclidean norm over all trainable gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// SHA-256 over names, shapes, and value bits of tensors whose names
    /// start with `prefix` (empty prefix: all tensors).
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies values of all tensors with matching names from `other`,
    /// checking shapes. Tensors absent from `other` are an error.
    pub fn load_from(&mut self, other: &ParameterSet) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .find(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    src.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds_and_grad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::new();
        let id = ps.add_xavier("w", 10, 20, &mut rng);
        let a = (6.0f64 / 30.0).sqrt();
        assert!(ps.value(id).data().iter().all(|v| v.abs() < a));
        assert_eq!(ps.get(id).grad.len(), ps.value(id).len());
    }

    #[test]
    fn frozen_tensors_are_constants() {
        let mut ps = ParameterSet::new();
        let a = ps.add("enc.w", Tensor::scalar(2.0));
        let b = ps.add("dec.w", Tensor::scalar(3.0));
        assert_eq!(ps.set_trainable_prefix("enc.", false), 1);
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let y = g.mul(bound.var(a), bound.var(b)).unwrap();
        let grads = g.backward(y).unwrap();
        ps.accumulate(&bound, &grads);
        assert_eq!(ps.get(a).grad, vec![0.0]);
        assert_eq!(ps.get(b).grad, vec![2.0]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut ps = ParameterSet::new();
        let a = ps.add("a", Tensor::scalar(1.0));
        ps.add("b", Tensor::scalar(1.0));
        let before = ps.checksum("a");
        let all = ps.checksum("");
        ps.value_mut(a).data_mut()[0] = 1.5;
        assert_ne!(before, ps.checksum("a"));
        assert_ne!(all, ps.checksum(""));
    }
}
