//! Deterministic numerical primitives: chi-square quantiles, Cholesky
//! factorization, correlated normal sampling and stream-indexed RNG.

mod mvn;
mod rng;
mod special;

use thiserror::Error;

pub use mvn::{cholesky, factor_with_repair, sample_mvn, CorrelationMatrix, NormalSamples, SquareMatrix};
pub use rng::{RngStream, StreamKey};
pub use special::{chi2_cdf, chi2_quantile, gamma_p, gamma_q, ln_gamma};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
}
