//! Ground-truth systems and synthetic dataset generation.

mod dataset;
mod linear;
mod poly;
mod wh;
mod wh_default;

pub use dataset::{empirical_snr_db, generate_poly, generate_siso, noise_std_for_snr, SisoSystem, SplitLengths};
pub use linear::LinearSystem;
pub use poly::{poly_lift, poly_lifted_a, poly_step, random_initial, PolySystem};
pub use wh::{wh_step, WhEmbedding, WhState, WhSystem, MAX_PREDICTOR_RADIUS};
pub use wh_default::{default_wh_system, DEFAULT_WH_SEED};
