//! Random stable linear innovation-form systems
//! `x⁺ = A x + B u + K e`, `y = C x + e` (single input, single output).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{KoopmanModel, MatrixFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    /// Row-major `n × n`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub c: Vec<f64>,
}

impl LinearSystem {
    /// `A` is Gaussian rescaled to the given spectral radius; `B` and `C`
    /// are unit-norm Gaussian vectors. `K` is zero unless `with_noise_gain`.
    pub fn random<R: Rng + ?Sized>(n: usize, radius: f64, with_noise_gain: bool, rng: &mut R) -> Result<Self> {
        if n == 0 || !(0.0..1.0).contains(&radius) {
            return Err(Error::Config(format!(
                "need n ≥ 1 and radius in [0, 1), got n={n}, radius={radius}"
            )));
        }
        let a = loop {
            let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
            let rho = m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
            if rho > 1e-3 {
                break m * (radius / rho);
            }
        };
        let unit = |rng: &mut R| {
            let v = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
            let norm = v.norm();
            (v / norm).as_slice().to_vec()
        };
        let b = unit(rng);
        let c = unit(rng);
        let k = if with_noise_gain { unit(rng) } else { vec![0.0; n] };
        let a = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|ij| a[ij]).collect();
        Ok(LinearSystem { a, b, k, c })
    }

    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// Output sequence from the zero state.
    pub fn simulate(&self, u: &[f64], e: &[f64]) -> Vec<f64> {
        let n = self.order();
        let mut x = vec![0.0; n];
        let mut out = Vec::with_capacity(u.len());
        for (&uk, &ek) in u.iter().zip(e) {
            out.push(x.iter().zip(&self.c).map(|(a, b)| a * b).sum::<f64>() + ek);
            let next: Vec<f64> = (0..n)
                .map(|i| {
                    let row = &self.a[i * n..(i + 1) * n];
                    row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + self.b[i] * uk + self.k[i] * ek
                })
                .collect();
            x = next;
        }
        out
    }

    /// The same system as a linear Koopman model (`K` linear when nonzero).
    pub fn to_model(&self) -> Result<KoopmanModel> {
        let n = self.order();
        let col = |v: &[f64]| Tensor::matrix(n, 1, v.to_vec());
        let k = if self.k.iter().all(|&v| v == 0.0) {
            MatrixFunction::None
        } else {
            MatrixFunction::Linear { matrix: col(&self.k)? }
        };
        KoopmanModel::from_parts(
            Tensor::matrix(n, n, self.a.clone())?,
            Tensor::matrix(1, n, self.c.clone())?,
            false,
            MatrixFunction::Linear { matrix: col(&self.b)? },
            k,
            1,
        )
    }
}
