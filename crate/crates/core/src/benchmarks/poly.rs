//! Autonomous polynomial system with an exact three-dimensional lifting:
//! `x₁⁺ = a x₁`, `x₂⁺ = b x₂ − c x₁²`, observables `[x₁, x₂, x₁²]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySystem {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for PolySystem {
    fn default() -> Self {
        PolySystem {
            a: 0.99,
            b: 0.9,
            c: 0.9,
        }
    }
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

impl PolySystem {
    pub fn step(&self, x: &[f64]) -> Result<[f64; 2]> {
        check_len("x", x, 2)?;
        Ok([self.a * x[0], self.b * x[1] - self.c * x[0] * x[0]])
    }

    /// Lifted transition matrix acting on `[x₁, x₂, x₁²]`.
    pub fn lifted_a(&self) -> Tensor {
        let PolySystem { a, b, c } = *self;
        Tensor::matrix(3, 3, vec![a, 0.0, 0.0, 0.0, b, -c, 0.0, 0.0, a * a]).expect("finite")
    }

    /// Output matrix selecting the two original states.
    pub fn lifted_c() -> Tensor {
        Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).expect("finite")
    }

    pub fn trajectory(&self, x0: [f64; 2], steps: usize) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut x = x0;
        out.push(x);
        for _ in 0..steps {
            x = self.step(&x).expect("two states");
            out.push(x);
        }
        out
    }

    /// Lifted trajectory from an arbitrary (possibly non-compliant) `z0`.
    pub fn lifted_trajectory(&self, z0: [f64; 3], steps: usize) -> Vec<[f64; 3]> {
        let a = self.lifted_a();
        let mut out = Vec::with_capacity(steps + 1);
        let mut z = z0;
        out.push(z);
        for _ in 0..steps {
            let next = Tensor::vector(z.to_vec())
                .matmul(&a.transpose().expect("matrix"))
                .expect("3×3");
            z = [next.data()[0], next.data()[1], next.data()[2]];
            out.push(z);
        }
        out
    }
}

pub fn poly_step(sys: &PolySystem, x: &[f64]) -> Result<[f64; 2]> {
    sys.step(x)
}

pub fn poly_lift(x: &[f64]) -> Result<[f64; 3]> {
    check_len("x", x, 2)?;
    Ok([x[0], x[1], x[0] * x[0]])
}

pub fn poly_lifted_a(sys: &PolySystem) -> Tensor {
    sys.lifted_a()
}

/// Initial state uniform on `[-1, 1]²`.
pub fn random_initial<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_step() {
        let x = PolySystem::default().step(&[1.0, 1.0]).unwrap();
        assert_eq!(x[0], 0.99);
        assert!(x[1].abs() < 1e-15);
    }

    #[test]
    fn lift_squares_first_state() {
        assert_eq!(poly_lift(&[2.0, 3.0]).unwrap(), [2.0, 3.0, 4.0]);
        assert!(poly_lift(&[1.0]).is_err());
    }

    #[test]
    fn lifting_commutes_with_step() {
        let sys = PolySystem::default();
        let a = sys.lifted_a();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x = random_initial(&mut rng);
            let lhs = poly_lift(&sys.step(&x).unwrap()).unwrap();
            let z = poly_lift(&x).unwrap();
            for (i, l) in lhs.iter().enumerate() {
                let rhs: f64 = (0..3).map(|j| a.get(i, j) * z[j]).sum();
                assert!((l - rhs).abs() < 1e-12);
            }
        }
    }
}
