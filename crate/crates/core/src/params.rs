//! Uniform access to the tensors of a parameter set.

use alloc::string::String;
use alloc::vec::Vec;

use crate::adam::{adam_step, AdamState};
use crate::error::Result;
use crate::tensor::Tensor;

/// A fixed, ordered collection of named tensors. Gradients of a parameter
/// set are represented by a value of the same type.
pub trait ParamSet {
    /// Visits every tensor as `(key, tensor)` in canonical order.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor));

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, t| out.push(t));
        out
    }

    fn keys(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |k, _| out.push(k));
        out
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

pub fn adam_update<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) -> Result<()> {
    let g = grads.tensors();
    adam_step(&mut params.tensors_mut(), &g, state, lr)
}

pub fn new_adam<P: ParamSet>(params: &P, config: crate::adam::AdamConfig) -> AdamState {
    AdamState::new(params.tensors(), config)
}
