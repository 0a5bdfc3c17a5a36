//! Monte Carlo radius for the tighter confidence region: the `1 - α`
//! quantile of `max_ℓ ξ_ℓ²` with `ξ ~ N(0, R̂)`, where `R̂` is the pooled
//! correlation of the influence differences `φ̂[i] - φ̂[ℓ]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::influence::InfluenceTable;
use crate::stats::{sample_mvn, CorrelationMatrix, RngStream, SquareMatrix, StatsError};

pub const DEFAULT_DRAWS: usize = 20_000;

/// Variances below this multiple of the squared table scale count as zero.
const DEGENERATE_VARIANCE: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum ExtensionError {
    #[error("need at least 2 solutions, got {0}")]
    TooFewSolutions(usize),
    #[error("reference solution {0} out of range")]
    Reference(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("at least 1000 Monte Carlo draws are required, got {0}")]
    TooFewDraws(usize),
    #[error("influence difference between solutions {reference} and {other} has zero variance")]
    Degenerate { reference: usize, other: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub reference: usize,
    /// Solutions `ℓ ≠ i` in the order of the correlation matrix rows.
    pub others: Vec<usize>,
    pub correlation: Vec<Vec<f64>>,
    pub quantile: f64,
    pub draws: usize,
    /// `μ̂^(p)_ℓ`, indexed `[p][ℓ]`.
    pub means: Vec<Vec<f64>>,
    /// `ŝ^(p)`, indexed `[p][ℓ][ℓ']`.
    pub covariances: Vec<Vec<Vec<f64>>>,
    /// Diagonal jitter needed to factor `R̂`.
    pub jitter: f64,
}

/// Pooled correlation of the influence differences `φ̂[i] - φ̂[ℓ]` with the
/// per-source moments it was built from.
#[derive(Clone, Debug)]
pub struct DifferenceMoments {
    pub correlation: CorrelationMatrix,
    pub others: Vec<usize>,
    /// `[p][ℓ]`.
    pub means: Vec<Vec<f64>>,
    /// `[p][ℓ][ℓ']`.
    pub covariances: Vec<Vec<Vec<f64>>>,
}

pub fn difference_correlation(table: &InfluenceTable, i: usize) -> Result<DifferenceMoments, ExtensionError> {
    let k = table.num_solutions();
    if k < 2 {
        return Err(ExtensionError::TooFewSolutions(k));
    }
    if i >= k {
        return Err(ExtensionError::Reference(i));
    }
    let others: Vec<usize> = (0..k).filter(|&l| l != i).collect();
    let d = others.len();
    let m = table.num_sources();
    let mut means = Vec::with_capacity(m);
    let mut covariances = Vec::with_capacity(m);
    let mut pooled = SquareMatrix::zeros(d);
    let mut total = 0usize;
    for p in 0..m {
        let base = table.row(i, p);
        let n = base.len();
        total += n;
        let diffs: Vec<Vec<f64>> = others
            .iter()
            .map(|&l| base.iter().zip(table.row(l, p)).map(|(a, b)| a - b).collect())
            .collect();
        let mu: Vec<f64> = diffs.iter().map(|v| v.iter().sum::<f64>() / n as f64).collect();
        let mut s = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..=a {
                let c = diffs[a]
                    .iter()
                    .zip(&diffs[b])
                    .map(|(x, y)| (x - mu[a]) * (y - mu[b]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                s[a][b] = c;
                s[b][a] = c;
                pooled[(a, b)] += n as f64 * c;
            }
        }
        means.push(mu);
        covariances.push(s);
    }
    let scale = table.scale().max(f64::MIN_POSITIVE);
    let mut corr = SquareMatrix::identity(d);
    for a in 0..d {
        let va = pooled[(a, a)] / total as f64;
        if va < DEGENERATE_VARIANCE * scale * scale {
            return Err(ExtensionError::Degenerate {
                reference: i,
                other: others[a],
            });
        }
    }
    for a in 0..d {
        for b in 0..a {
            let r = (pooled[(a, b)] / (pooled[(a, a)] * pooled[(b, b)]).sqrt()).clamp(-1.0, 1.0);
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    Ok(DifferenceMoments {
        correlation: CorrelationMatrix::new(corr)?,
        others,
        means,
        covariances,
    })
}

/// Sorted draws of `max_ℓ ξ_ℓ²` with `ξ ~ N(0, corr)`, and the jitter used.
pub fn max_square_draws(corr: &CorrelationMatrix, draws: usize, rng: &mut RngStream) -> Result<(Vec<f64>, f64), ExtensionError> {
    let samples = sample_mvn(corr, draws, rng)?;
    let jitter = samples.jitter();
    let mut s: Vec<f64> = samples
        .rows()
        .map(|row| row.iter().fold(0.0f64, |m, x| m.max(x * x)))
        .collect();
    s.sort_by(f64::total_cmp);
    Ok((s, jitter))
}

/// Order statistic at index `⌈(1 - α) M⌉` (one-based) of sorted draws.
pub fn upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let m = sorted.len();
    let rank = ((1.0 - alpha) * m as f64 - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    sorted[rank - 1]
}

/// Radius replacing `χ²_{k-1, 1-α}` for reference solution `i`.
pub fn estimate_extension_quantile(
    table: &InfluenceTable,
    i: usize,
    alpha: f64,
    draws: usize,
    rng: &mut RngStream,
) -> Result<QuantileReport, ExtensionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ExtensionError::Alpha(alpha));
    }
    if draws < 1000 {
        return Err(ExtensionError::TooFewDraws(draws));
    }
    let DifferenceMoments {
        correlation: corr,
        others,
        means,
        covariances,
    } = difference_correlation(table, i)?;
    let (sorted, jitter) = max_square_draws(&corr, draws, rng)?;
    let quantile = upper_quantile(&sorted, alpha);
    let d = corr.dim();
    let correlation = (0..d).map(|a| (0..d).map(|b| corr.matrix()[(a, b)]).collect()).collect();
    Ok(QuantileReport {
        reference: i,
        others,
        correlation,
        quantile,
        draws,
        means,
        covariances,
        jitter,
    })
}
