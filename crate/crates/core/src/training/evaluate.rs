//! Free-run and one-step-ahead evaluation with the NRMS metric.

use serde::{Deserialize, Serialize};

use super::identified::IdentifiedModel;
use crate::autodiff::{Graph, Tensor};
use crate::benchmarks::{WhEmbedding, WhState};
use crate::data::{Dataset, Series};
use crate::encoder::LagWindow;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Encode the first window, then run with zero innovation.
    Simulation,
    /// Correct the state with every measured output.
    OneStep,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Simulation => "simulation",
            EvalMode::OneStep => "one_step",
        }
    }
}

/// Anything that produces output predictions for a series after an
/// initial window of `lag` samples.
pub trait StatePredictor {
    fn lag(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    /// Predictions `ŷ_k` for `k = lag..series.len()`, in data units.
    fn predict(&self, series: &Series, mode: EvalMode) -> Result<Vec<Vec<f64>>>;
}

/// Mean over output channels of `RMS(ŷ − y) / σ_y`, both taken over the
/// samples `k ≥ skip`; `σ_y` is the population standard deviation.
/// `y_hat[i]` is the prediction of `y[skip + i]`.
pub fn nrms(y_hat: &[Vec<f64>], y: &[Vec<f64>], skip: usize) -> Result<f64> {
    if y.len() <= skip + 1 {
        return Err(Error::Data(format!(
            "{} samples leave fewer than two after skipping {skip}",
            y.len()
        )));
    }
    let y = &y[skip..];
    if y_hat.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} evaluated samples",
            y_hat.len(),
            y.len()
        )));
    }
    let n_y = y[0].len();
    if n_y == 0 || y.iter().chain(y_hat).any(|r| r.len() != n_y) {
        return Err(Error::Dimension("prediction and output channels disagree".into()));
    }
    let count = y.len() as f64;
    let mut total = 0.0;
    for c in 0..n_y {
        let mean = y.iter().map(|r| r[c]).sum::<f64>() / count;
        let var = y.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / count;
        if var <= 0.0 {
            return Err(Error::Data(format!("output y{c} is constant; NRMS is undefined")));
        }
        let mse = y.iter().zip(y_hat).map(|(a, b)| (b[c] - a[c]).powi(2)).sum::<f64>() / count;
        total += (mse / var).sqrt();
    }
    Ok(total / n_y as f64)
}

fn check_series(p: &dyn StatePredictor, series: &Series) -> Result<()> {
    if series.n_u() != p.n_u() || series.n_y() != p.n_y() {
        return Err(Error::Dimension(format!(
            "predictor expects {} inputs and {} outputs, data has {} and {}",
            p.n_u(),
            p.n_y(),
            series.n_u(),
            series.n_y()
        )));
    }
    if series.len() < p.lag() + 2 {
        return Err(Error::Data(format!(
            "series of {} samples is too short for lag {}",
            series.len(),
            p.lag()
        )));
    }
    Ok(())
}

/// NRMS of `p` on `series`, skipping the first `lag` samples.
pub fn evaluate(p: &dyn StatePredictor, series: &Series, mode: EvalMode) -> Result<f64> {
    check_series(p, series)?;
    let y_hat = p.predict(series, mode)?;
    nrms(&y_hat, &series.y_rows(), p.lag())
}

impl StatePredictor for IdentifiedModel {
    fn lag(&self) -> usize {
        self.encoder.lag()
    }

    fn n_u(&self) -> usize {
        self.model.n_u()
    }

    fn n_y(&self) -> usize {
        self.model.n_y()
    }

    fn predict(&self, series: &Series, mode: EvalMode) -> Result<Vec<Vec<f64>>> {
        check_series(self, series)?;
        let scaled = self.scaler.scale_series(series)?;
        let lag = self.lag();
        let z0 = self.encoder.encode(&LagWindow::from_series(&scaled, lag, lag)?)?;
        let mut g = Graph::new();
        let m = self.model.bind(&mut g, "", false)?;
        let mut z = g.constant(Tensor::matrix(1, z0.len(), z0)?);
        let zero_e = g.constant(Tensor::zeros(&[1, self.n_y()]));
        let mut out = Vec::with_capacity(series.len() - lag);
        for k in lag..series.len() {
            let u = g.constant(Tensor::matrix(1, self.n_u(), scaled.u_at(k).to_vec())?);
            let y_hat = match mode {
                EvalMode::Simulation => {
                    let y_hat = m.output(&mut g, z)?;
                    z = m.step(&mut g, z, u, zero_e)?;
                    y_hat
                }
                EvalMode::OneStep => {
                    let y = g.constant(Tensor::matrix(1, self.n_y(), scaled.y_at(k).to_vec())?);
                    let (next, y_hat, _) = m.innovation_step(&mut g, z, u, y)?;
                    z = next;
                    y_hat
                }
            };
            out.push(self.scaler.unscale_y(g.value(y_hat).data()));
        }
        Ok(out)
    }
}

/// The exact lifted Wiener-Hammerstein model used as a predictor. Each
/// series is assumed to start at rest; the initial lifted state is obtained
/// by running the exact innovation predictor over the first `lag` samples.
#[derive(Clone, Debug)]
pub struct WhOracle {
    pub embedding: WhEmbedding,
    pub lag: usize,
}

impl StatePredictor for WhOracle {
    fn lag(&self) -> usize {
        self.lag
    }

    fn n_u(&self) -> usize {
        1
    }

    fn n_y(&self) -> usize {
        1
    }

    fn predict(&self, series: &Series, mode: EvalMode) -> Result<Vec<Vec<f64>>> {
        check_series(self, series)?;
        let emb = &self.embedding;
        let mut z = emb.lift(&WhState::default());
        let mut out = Vec::with_capacity(series.len() - self.lag);
        for k in 0..series.len() {
            let (u, y) = (series.u_at(k)[0], series.y_at(k)[0]);
            let y_hat = emb.output(&z);
            let e = if k < self.lag || mode == EvalMode::OneStep {
                y - y_hat
            } else {
                0.0
            };
            if k >= self.lag {
                out.push(vec![y_hat]);
            }
            z = emb.step(&z, u, e);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitNrms {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Against the noise-free test outputs, when the dataset has them.
    pub test_clean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lag: usize,
    pub simulation: SplitNrms,
    pub one_step: SplitNrms,
}

pub fn evaluate_split_set(p: &dyn StatePredictor, ds: &Dataset, mode: EvalMode) -> Result<SplitNrms> {
    Ok(SplitNrms {
        train: evaluate(p, &ds.train, mode)?,
        val: evaluate(p, &ds.val, mode)?,
        test: evaluate(p, &ds.test, mode)?,
        test_clean: ds
            .test_clean
            .as_ref()
            .map(|s| evaluate(p, s, mode))
            .transpose()?,
    })
}

pub fn evaluate_dataset(p: &dyn StatePredictor, ds: &Dataset) -> Result<EvalReport> {
    Ok(EvalReport {
        lag: p.lag(),
        simulation: evaluate_split_set(p, ds, EvalMode::Simulation)?,
        one_step: evaluate_split_set(p, ds, EvalMode::OneStep)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{default_wh_system, generate_siso, SplitLengths};

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let y = col(&[1.0, 3.0, 2.0, 5.0]);
        assert_eq!(nrms(&y, &y, 0).unwrap(), 0.0);
    }

    #[test]
    fn mean_prediction_scores_one() {
        let y = col(&[1.0, 2.0, 4.0, 8.0, 5.0]);
        let mean = col(&[4.0; 5]);
        assert!((nrms(&mean, &y, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_value() {
        // y = [0, 1, 2, 3, 4], ŷ = y + [1, -1, 0, 0, 2]: mse = 6/5, var = 2
        let y = col(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let yh = col(&[1.0, 0.0, 2.0, 3.0, 6.0]);
        let expected = (1.2f64 / 2.0).sqrt();
        assert!((nrms(&yh, &y, 0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn skipped_prefix_is_ignored() {
        let y = col(&[1e6, -1e6, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let yh = col(&[1.0, 0.0, 2.0, 3.0, 6.0]);
        let expected = (1.2f64 / 2.0).sqrt();
        assert!((nrms(&yh, &y, 2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_output_is_an_error() {
        let y = col(&[2.0; 5]);
        assert!(nrms(&y, &y, 0).is_err());
        assert!(nrms(&y[..1], &y[..1], 0).is_err());
    }

    #[test]
    fn exact_oracle_reproduces_noiseless_data() {
        let ds = generate_siso(
            &default_wh_system(),
            SplitLengths {
                train: 200,
                val: 100,
                test: 300,
            },
            None,
            2,
        )
        .unwrap();
        let oracle = WhOracle {
            embedding: WhEmbedding::new(&default_wh_system()).unwrap(),
            lag: 12,
        };
        for mode in [EvalMode::Simulation, EvalMode::OneStep] {
            assert!(evaluate(&oracle, &ds.test, mode).unwrap() < 1e-9);
        }
    }

    #[test]
    fn noisy_oracle_one_step_error_is_the_noise() {
        let sys = default_wh_system();
        let ds = generate_siso(
            &sys,
            SplitLengths {
                train: 2000,
                val: 100,
                test: 2000,
            },
            Some(20.0),
            3,
        )
        .unwrap();
        let oracle = WhOracle {
            embedding: WhEmbedding::new(&sys).unwrap(),
            lag: 12,
        };
        let y_hat = oracle.predict(&ds.test, EvalMode::OneStep).unwrap();
        let resid: Vec<f64> = y_hat
            .iter()
            .enumerate()
            .map(|(i, p)| ds.test.y_at(i + 12)[0] - p[0])
            .collect();
        let rms = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        let sigma = ds.provenance.sigma_e;
        assert!((rms / sigma - 1.0).abs() < 0.1, "{rms} vs {sigma}");
    }
}
