use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linear::LinearSystem;
use super::poly::{random_initial, PolySystem};
use super::wh::WhSystem;
use crate::data::{Dataset, Provenance, Series};
use crate::error::{Error, Result};

/// Single-input single-output system driven by an input and an innovation
/// sequence, started from rest.
pub trait SisoSystem {
    fn name(&self) -> &str;
    fn simulate(&self, u: &[f64], e: &[f64]) -> Vec<f64>;
}

impl SisoSystem for WhSystem {
    fn name(&self) -> &str {
        "wh"
    }

    fn simulate(&self, u: &[f64], e: &[f64]) -> Vec<f64> {
        WhSystem::simulate(self, u, e)
    }
}

impl SisoSystem for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }

    fn simulate(&self, u: &[f64], e: &[f64]) -> Vec<f64> {
        LinearSystem::simulate(self, u, e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLengths {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitLengths {
    fn default() -> Self {
        SplitLengths {
            train: 12000,
            val: 4000,
            test: 4000,
        }
    }
}

impl SplitLengths {
    pub fn as_array(&self) -> [usize; 3] {
        [self.train, self.val, self.test]
    }
}

fn population_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Innovation standard deviation giving `10·log10(var(y_clean)/σ²) = snr_db`.
pub fn noise_std_for_snr(clean: &[f64], snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
    }
    if clean.is_empty() {
        return Err(Error::Data("cannot calibrate noise on an empty signal".into()));
    }
    let var = population_var(clean);
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::Data(
            "noise-free output has zero variance; the requested SNR is unreachable".into(),
        ));
    }
    Ok((var / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// `10·log10(var(clean)/var(noise))`.
pub fn empirical_snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (population_var(clean) / population_var(noise)).log10()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Inputs uniform on `[-1, 1]`, one independent realization per split.
/// Split `i` draws its input from stream `2i` and its noise from stream
/// `2i + 1` of the seeded generator. The noise level is calibrated on a
/// noise-free run with the training inputs. When noise is present a clean
/// test split with the same inputs is included.
pub fn generate_siso(
    sys: &dyn SisoSystem,
    lens: SplitLengths,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<Dataset> {
    let inputs: Vec<Vec<f64>> = lens
        .as_array()
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut r = stream(seed, 2 * i as u64);
            (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
        })
        .collect();
    let sigma_e = match snr_db {
        None => 0.0,
        Some(snr) => {
            let pilot = sys.simulate(&inputs[0], &vec![0.0; inputs[0].len()]);
            noise_std_for_snr(&pilot, snr)?
        }
    };
    let normal = Normal::new(0.0, sigma_e).map_err(|e| Error::Config(e.to_string()))?;
    let mut splits = Vec::with_capacity(3);
    for (i, u) in inputs.iter().enumerate() {
        let mut r = stream(seed, 2 * i as u64 + 1);
        let e: Vec<f64> = if sigma_e > 0.0 {
            (0..u.len()).map(|_| normal.sample(&mut r)).collect()
        } else {
            vec![0.0; u.len()]
        };
        splits.push(Series::new(1, 1, u.clone(), sys.simulate(u, &e))?);
    }
    let test_clean = if sigma_e > 0.0 {
        let u = &inputs[2];
        Some(Series::new(1, 1, u.clone(), sys.simulate(u, &vec![0.0; u.len()]))?)
    } else {
        None
    };
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Dataset::new(
        train,
        val,
        test,
        test_clean,
        Provenance {
            system: sys.name().to_string(),
            seed,
            snr_db,
            sigma_e,
        },
    )
}

/// Noise-free autonomous trajectories of the polynomial system, one per
/// split, each started from a random state. Outputs are both states.
pub fn generate_poly(sys: &PolySystem, lens: SplitLengths, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |n: usize| {
        let x0 = random_initial(&mut rng);
        let traj = sys.trajectory(x0, n.saturating_sub(1));
        Series::new(0, 2, vec![], traj.iter().take(n).flatten().copied().collect())
    };
    let train = make(lens.train)?;
    let val = make(lens.val)?;
    let test = make(lens.test)?;
    Dataset::new(
        train,
        val,
        test,
        None,
        Provenance {
            system: "poly".into(),
            seed,
            snr_db: None,
            sigma_e: 0.0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::default_wh_system;

    fn small() -> SplitLengths {
        SplitLengths {
            train: 3000,
            val: 500,
            test: 500,
        }
    }

    #[test]
    fn noiseless_generation_is_reproducible() {
        let sys = default_wh_system();
        let a = generate_siso(&sys, small(), None, 3).unwrap();
        let b = generate_siso(&sys, small(), None, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.test_clean.is_none());
        assert_eq!(a.provenance.sigma_e, 0.0);
        let c = generate_siso(&sys, small(), None, 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn calibrated_noise_hits_target_snr() {
        let sys = default_wh_system();
        let ds = generate_siso(&sys, SplitLengths::default(), Some(20.0), 0).unwrap();
        let clean = sys.simulate(ds.train.u_data(), &vec![0.0; 12000]);
        // regenerate the innovation from its stream
        let mut r = stream(0, 1);
        let normal = Normal::new(0.0, ds.provenance.sigma_e).unwrap();
        let e: Vec<f64> = (0..12000).map(|_| normal.sample(&mut r)).collect();
        assert_eq!(sys.simulate(ds.train.u_data(), &e), ds.train.y_data());
        let snr = empirical_snr_db(&clean, &e);
        assert!((snr - 20.0).abs() < 0.5, "{snr}");
    }

    #[test]
    fn clean_test_shares_inputs() {
        let sys = default_wh_system();
        let ds = generate_siso(&sys, small(), Some(10.0), 1).unwrap();
        let clean = ds.test_clean.as_ref().unwrap();
        assert_eq!(clean.u_data(), ds.test.u_data());
        assert_ne!(clean.y_data(), ds.test.y_data());
        assert_eq!(ds.boundaries(), [3000, 3500]);
    }

    #[test]
    fn input_and_noise_streams_are_independent() {
        // changing the SNR changes only the noise, never the inputs
        let sys = default_wh_system();
        let a = generate_siso(&sys, small(), Some(5.0), 9).unwrap();
        let b = generate_siso(&sys, small(), Some(30.0), 9).unwrap();
        let c = generate_siso(&sys, small(), None, 9).unwrap();
        assert_eq!(a.train.u_data(), b.train.u_data());
        assert_eq!(a.train.u_data(), c.train.u_data());
        assert!(a.train.u_data().iter().all(|u| (-1.0..1.0).contains(u)));
    }

    #[test]
    fn flat_output_cannot_be_calibrated() {
        assert!(noise_std_for_snr(&[1.0; 10], 10.0).is_err());
        assert!(noise_std_for_snr(&[1.0, 2.0], f64::NAN).is_err());
    }

    #[test]
    fn poly_trajectories_follow_the_map() {
        let sys = PolySystem::default();
        let ds = generate_poly(&sys, SplitLengths { train: 50, val: 20, test: 20 }, 0).unwrap();
        assert_eq!(ds.n_u(), 0);
        assert_eq!(ds.n_y(), 2);
        for k in 0..49 {
            let next = sys.step(ds.train.y_at(k)).unwrap();
            assert_eq!(next.as_slice(), ds.train.y_at(k + 1));
        }
    }
}
