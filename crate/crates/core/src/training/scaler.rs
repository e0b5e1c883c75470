use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{Error, Result};

/// Per-channel affine standardization of inputs and outputs, fitted on the
/// training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Scaler {
    pub fn fit(series: &Series) -> Result<Self> {
        let (u_mean, u_std) = series.u_stats();
        let (y_mean, y_std) = series.y_stats();
        for (what, std) in [("u", &u_std), ("y", &y_std)] {
            if let Some(i) = std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
                return Err(Error::Data(format!("channel {what}{i} is constant and cannot be standardized")));
            }
        }
        Ok(Scaler {
            u_mean,
            u_std,
            y_mean,
            y_std,
        })
    }

    pub fn identity(n_u: usize, n_y: usize) -> Self {
        Scaler {
            u_mean: vec![0.0; n_u],
            u_std: vec![1.0; n_u],
            y_mean: vec![0.0; n_y],
            y_std: vec![1.0; n_y],
        }
    }

    pub fn n_u(&self) -> usize {
        self.u_mean.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_mean.len()
    }

    pub fn scale_u(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.u_mean.iter().zip(&self.u_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn scale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.y_mean.iter().zip(&self.y_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn unscale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.y_mean.iter().zip(&self.y_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn scale_series(&self, s: &Series) -> Result<Series> {
        if s.n_u() != self.n_u() || s.n_y() != self.n_y() {
            return Err(Error::Dimension(format!(
                "scaler is for {} inputs and {} outputs, series has {} and {}",
                self.n_u(),
                self.n_y(),
                s.n_u(),
                s.n_y()
            )));
        }
        let u = (0..s.len()).flat_map(|k| self.scale_u(s.u_at(k))).collect();
        let y = (0..s.len()).flat_map(|k| self.scale_y(s.y_at(k))).collect();
        Series::new(s.n_u(), s.n_y(), u, y)
    }
}
