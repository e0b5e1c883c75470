//! Structural diagnostics of lifted models: linear observability rank,
//! spectral radius and the compliant-surface residual of the polynomial
//! benchmark.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    /// Number of stacked blocks `C, CA, …, CA^{n−1}`.
    pub n: usize,
    pub rank: usize,
    pub n_z: usize,
    pub full_rank: bool,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

pub fn to_dmatrix(t: &Tensor) -> Result<DMatrix<f64>> {
    let (r, c) = t
        .dims2()
        .ok_or_else(|| Error::Dimension(format!("expected a matrix, got shape {:?}", t.shape())))?;
    Ok(DMatrix::from_row_slice(r, c, t.data()))
}

/// `[C; CA; …; CA^{n−1}]`
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A must be square, got {}×{}", a.nrows(), a.ncols())));
    }
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "C has {} columns but A is {}×{}",
            c.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::Config("observability needs n ≥ 1".into()));
    }
    let (p, nz) = (c.nrows(), a.nrows());
    let mut out = DMatrix::zeros(n * p, nz);
    let mut block = c.clone();
    for i in 0..n {
        out.view_mut((i * p, 0), (p, nz)).copy_from(&block);
        block = &block * a;
    }
    Ok(out)
}

/// Numerical rank of a matrix with cutoff `max(rows, cols)·σ_max·1e-12`.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, Vec<f64>, f64) {
    if m.is_empty() {
        return (0, vec![], 0.0);
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let tol = m.nrows().max(m.ncols()) as f64 * sv[0] * 1e-12;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    (rank, sv, tol)
}

pub fn observability_rank(a: &Tensor, c: &Tensor, n: usize) -> Result<ObservabilityReport> {
    let (a, c) = (to_dmatrix(a)?, to_dmatrix(c)?);
    let obs = observability_matrix(&a, &c, n)?;
    let (rank, singular_values, tolerance) = numerical_rank(&obs);
    Ok(ObservabilityReport {
        n,
        rank,
        n_z: a.nrows(),
        full_rank: rank == a.nrows(),
        singular_values,
        tolerance,
    })
}

/// `Ψ(z) = z₁² − z₃`
pub fn compliance_residual(z: &[f64]) -> Result<f64> {
    if z.len() < 3 {
        return Err(Error::Dimension(format!(
            "compliance residual needs at least 3 coordinates, got {}",
            z.len()
        )));
    }
    Ok(z[0] * z[0] - z[2])
}

pub fn spectral_radius_of(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A must be square, got {}×{}", a.nrows(), a.ncols())));
    }
    Ok(a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Tensor) -> Result<f64> {
    spectral_radius_of(&to_dmatrix(a)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::PolySystem;

    #[test]
    fn identity_dynamics_hide_second_state() {
        let a = Tensor::identity(2);
        let c = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        for n in 1..5 {
            let r = observability_rank(&a, &c, n).unwrap();
            assert_eq!(r.rank, 1);
            assert!(!r.full_rank);
        }
    }

    #[test]
    fn rotation_is_observable_in_two_steps() {
        let (s, co) = 0.3f64.sin_cos();
        let a = Tensor::matrix(2, 2, vec![co, -s, s, co]).unwrap();
        let c = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(observability_rank(&a, &c, 2).unwrap().rank, 2);
        assert_eq!(observability_rank(&a, &c, 1).unwrap().rank, 1);
    }

    #[test]
    fn full_output_is_observable_at_once() {
        let a = Tensor::matrix(3, 3, (0..9).map(|i| i as f64 * 0.1).collect()).unwrap();
        let r = observability_rank(&a, &Tensor::identity(3), 1).unwrap();
        assert_eq!(r.rank, 3);
        assert!(r.full_rank);
    }

    #[test]
    fn dimension_errors() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(observability_rank(&a, &Tensor::identity(2), 1).is_err());
        assert!(observability_rank(&Tensor::identity(2), &Tensor::identity(3), 1).is_err());
        assert!(observability_rank(&Tensor::identity(2), &Tensor::identity(2), 0).is_err());
        assert!(spectral_radius(&a).is_err());
    }

    #[test]
    fn residual_examples() {
        assert_eq!(compliance_residual(&[2.0, 5.0, 4.0]).unwrap(), 0.0);
        assert_eq!(compliance_residual(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(compliance_residual(&[1.0, 7.0, 0.0]).unwrap(), 1.0);
        assert!(compliance_residual(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let d = Tensor::matrix(2, 2, vec![0.5, 0.0, 0.0, -0.9]).unwrap();
        assert!((spectral_radius(&d).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(spectral_radius(&Tensor::zeros(&[3, 3])).unwrap(), 0.0);
        let poly = PolySystem::default().lifted_a();
        assert!((spectral_radius(&poly).unwrap() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn poly_lifting_with_state_outputs() {
        // the x₁² observable feeds x₂, so it shows up at n = 2
        let a = PolySystem::default().lifted_a();
        let c = PolySystem::lifted_c();
        assert_eq!(observability_rank(&a, &c, 1).unwrap().rank, 2);
        assert_eq!(observability_rank(&a, &c, 2).unwrap().rank, 3);
    }
}
