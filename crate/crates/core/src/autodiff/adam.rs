use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use super::Parameters;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment accumulators are created lazily, keyed
/// by parameter name, with the parameter's shape.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter visited by `params`. Each
    /// parameter needs a gradient of identical shape in `grads`.
    pub fn step(&mut self, params: &mut dyn Parameters, grads: &Gradients) -> Result<()> {
        // validate before mutating anything
        let mut problem = None;
        params.visit_params("", &mut |name, p| {
            if problem.is_some() {
                return;
            }
            match grads.get(name) {
                None => problem = Some(Error::Dimension(format!("no gradient for `{name}`"))),
                Some(g) if g.shape() != p.shape() => {
                    problem = Some(Error::Shape {
                        op: "adam_step",
                        detail: format!("`{name}`: param {:?}, grad {:?}", p.shape(), g.shape()),
                    })
                }
                _ => {}
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let moments = &mut self.moments;
        params.visit_params_mut("", &mut |name, p| {
            let g = &grads[name];
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

/// Functional form: returns updated copies of `params`.
pub fn adam_step(
    state: &mut AdamState,
    params: &BTreeMap<String, Tensor>,
    grads: &Gradients,
) -> Result<BTreeMap<String, Tensor>> {
    if params.len() != grads.len() {
        return shape_err(
            "adam_step",
            format!("{} params but {} gradients", params.len(), grads.len()),
        );
    }
    let mut out = params.clone();
    state.step(&mut out, grads)?;
    Ok(out)
}
