//! Dense tensors, a define-by-run reverse-mode tape, feedforward networks and
//! the Adam optimizer.

mod adam;
mod graph;
mod mlp;
mod tensor;

use std::collections::BTreeMap;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{xavier_init, BoundMlp, Layer, Mlp};
pub use tensor::Tensor;

/// A collection of named trainable tensors.
pub trait Parameters {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    /// Sum of squares of every parameter entry.
    fn sum_squares(&self) -> f64 {
        let mut s = 0.0;
        self.visit_params("", &mut |_, t| s += t.sum_squares());
        s
    }
}

impl Parameters for BTreeMap<String, Tensor> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (k, v) in self {
            f(&format!("{prefix}{k}"), v);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (k, v) in self.iter_mut() {
            f(&format!("{prefix}{k}"), v);
        }
    }
}
