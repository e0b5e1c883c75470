use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Feedforward network: tanh on hidden layers, identity on the output layer,
/// optionally summed with a linear bypass from input to output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    bypass: Option<Tensor>,
}

/// Xavier-initialized network without bypass, seeded deterministically.
pub fn xavier_init(widths: &[usize], seed: u64) -> Result<Mlp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::xavier(widths, false, &mut rng)
}

fn xavier_matrix<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_parts_unchecked(vec![fan_in, fan_out], data)
}

impl Mlp {
    /// Weights uniform on `±√(6/(fan_in+fan_out))`, biases zero. The bypass,
    /// when enabled, is initialized with the same rule.
    pub fn xavier<R: Rng + ?Sized>(widths: &[usize], bypass: bool, rng: &mut R) -> Result<Mlp> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "network needs input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("zero width in {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: xavier_matrix(w[0], w[1], rng),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        let bypass = bypass.then(|| xavier_matrix(widths[0], widths[widths.len() - 1], rng));
        Ok(Mlp {
            widths: widths.to_vec(),
            layers,
            bypass,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn bypass(&self) -> Option<&Tensor> {
        self.bypass.as_ref()
    }

    pub fn has_bypass(&self) -> bool {
        self.bypass.is_some()
    }

    /// Number of scalar parameters.
    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }

    /// Multiplies the output layer and the bypass by `factor`.
    pub fn scale_output(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("at least one layer");
        for t in [&mut last.weight, &mut last.bias].into_iter().chain(self.bypass.as_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Sets every weight, bias and bypass entry to zero.
    pub fn zero_out(&mut self) {
        self.visit_params_mut("", &mut |_, t| t.data_mut().fill(0.0));
    }

    /// Registers the weights in `g`, as parameters named `{prefix}l{i}.w`,
    /// `{prefix}l{i}.b` and `{prefix}bypass` when `trainable`, otherwise as
    /// constants.
    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundMlp> {
        let leaf = |g: &mut Graph, name: String, t: &Tensor| -> Result<Var> {
            if trainable {
                g.param(&name, t.clone())
            } else {
                Ok(g.constant(t.clone()))
            }
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let w = leaf(g, format!("{prefix}l{i}.w"), &l.weight)?;
            let b = leaf(g, format!("{prefix}l{i}.b"), &l.bias)?;
            layers.push((w, b));
        }
        let bypass = match &self.bypass {
            Some(t) => Some(leaf(g, format!("{prefix}bypass"), t)?),
            None => None,
        };
        Ok(BoundMlp { layers, bypass })
    }

    /// Evaluates the network on a single input vector.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, "", false)?;
        let xv = g.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
        let y = bound.apply(&mut g, xv)?;
        Ok(g.value(y).data().to_vec())
    }
}

impl Parameters for Mlp {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("{prefix}l{i}.w"), &l.weight);
            f(&format!("{prefix}l{i}.b"), &l.bias);
        }
        if let Some(t) = &self.bypass {
            f(&format!("{prefix}bypass"), t);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("{prefix}l{i}.w"), &mut l.weight);
            f(&format!("{prefix}l{i}.b"), &mut l.bias);
        }
        if let Some(t) = &mut self.bypass {
            f(&format!("{prefix}bypass"), t);
        }
    }
}

/// Network weights registered in a particular graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    bypass: Option<Var>,
}

impl BoundMlp {
    /// Applies the network to `x` (rows are samples).
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = g.affine(h, *w, *b)?;
            if i != last {
                h = g.tanh(h)?;
            }
        }
        if let Some(p) = self.bypass {
            let lin = g.matmul(x, p)?;
            h = g.add(h, lin)?;
        }
        Ok(h)
    }
}
