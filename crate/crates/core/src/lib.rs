//! Likelihood inference for spatial Gaussian and max-stable processes based on
//! the Vecchia conditional-density approximation and truncated composite
//! likelihoods.
//!
//! The crate is organised around five pieces:
//!
//! - [`spatial`]: site geometry, orderings, conditioning sets and truncated
//!   subset enumeration.
//! - [`gaussian`]: correlation models, multivariate normal densities and
//!   distribution functions, Vecchia-factorised Gaussian densities.
//! - [`efficiency`]: exact sensitivity/variability matrices and asymptotic
//!   relative efficiencies for Gaussian estimators.
//! - [`maxstable`]: Brown–Resnick and logistic max-stable models, their
//!   exponent functions, partition-sum densities and exact simulation.
//! - [`likelihood`]: composite and Vecchia objectives over replicated data,
//!   model fitting, sandwich covariances, resampling intervals and
//!   cross-validation scores.

pub mod efficiency;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod likelihood;
pub(crate) mod linalg;
pub mod maxstable;
pub mod scheme;
pub mod spatial;

pub use error::{Error, Result};

/// Replicated observations: one row per replicate, one column per site.
pub type DataMatrix = nalgebra::DMatrix<f64>;

/// Independent random stream for replicate `i` of a simulation seeded with
/// `seed`.
pub(crate) fn replicate_rng(seed: u64, i: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}
