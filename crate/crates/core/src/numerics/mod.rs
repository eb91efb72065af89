//! Dense tensors, reverse-mode autodiff and the Adam optimizer.

mod graph;
mod kernels;
mod optim;
mod real;
mod tensor;

pub use graph::{log_softmax, softmax_axis, Grads, Graph, Var, NORM_EPS};
pub use optim::{AdamConfig, OptimizerState};
pub use real::Real;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    /// Registers a tensor and returns its id.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.entries.push((name.into(), tensor));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.entries[id].1
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.entries[id].1
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].0
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}

/// Eager matrix product of two 2-D tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (va, vb) = (g.leaf(a), g.leaf(b));
    let out = g.matmul(va, vb, false)?;
    Ok(g.tensor(out))
}

/// Eager softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.shape().len() {
        return Err(Error::invalid(format!("softmax axis {axis} for rank {}", x.shape().len())));
    }
    Tensor::new(x.shape().to_vec(), softmax_axis(x.data(), x.shape(), axis)?)
}

/// Eager RMS normalization over the last axis.
pub fn rms_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (vx, vg) = (g.leaf(x), g.leaf(gain));
    let out = g.rms_norm(vx, vg)?;
    Ok(g.tensor(out))
}

/// Eager mean cross-entropy of `logits[n×V]` against `targets`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize], ignore: usize) -> Result<T> {
    let mut g = Graph::new();
    let v = g.leaf(logits);
    let out = g.cross_entropy(v, targets, ignore)?;
    Ok(g.value(out)[0])
}
