use std::path::Path;

use super::ModelError;
use crate::el::{SourceSizes, WeightVector};
use crate::stats::RngStream;

/// Observed input data: one batch of scalar observations per source.
#[derive(Clone, Debug, PartialEq)]
pub struct InputDataset {
    sources: Vec<Vec<f64>>,
}

impl InputDataset {
    pub fn new(sources: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if sources.is_empty() {
            return Err(ModelError::Data("dataset has no sources".into()));
        }
        for (p, s) in sources.iter().enumerate() {
            if s.len() < 2 {
                return Err(ModelError::Data(format!("source {p} has {} observations, need at least 2", s.len())));
            }
            if let Some(j) = s.iter().position(|x| !x.is_finite()) {
                return Err(ModelError::Data(format!("source {p} observation {j} is not finite")));
            }
        }
        Ok(Self { sources })
    }

    /// One CSV file per source with a single numeric column. A non-numeric
    /// first row is treated as a header.
    pub fn from_csv_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self, ModelError> {
        let sources = paths
            .iter()
            .map(|path| {
                let path = path.as_ref();
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(false)
                    .trim(csv::Trim::All)
                    .from_path(path)
                    .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
                let mut values = Vec::new();
                for (row, record) in reader.records().enumerate() {
                    let record = record.map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
                    let field = record.get(0).unwrap_or("");
                    match field.parse::<f64>() {
                        Ok(v) => values.push(v),
                        Err(_) if row == 0 => {}
                        Err(_) => {
                            return Err(ModelError::Data(format!(
                                "{}: row {} is not numeric: {field:?}",
                                path.display(),
                                row + 1
                            )))
                        }
                    }
                }
                Ok(values)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(sources)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source(&self, p: usize) -> &[f64] {
        &self.sources[p]
    }

    pub fn sources(&self) -> &[Vec<f64>] {
        &self.sources
    }

    pub fn sizes(&self) -> SourceSizes {
        SourceSizes::new(self.sources.iter().map(Vec::len).collect()).expect("validated on construction")
    }

    /// Per-source means under `weights`.
    pub fn weighted_means(&self, weights: &WeightVector) -> Vec<f64> {
        self.sources
            .iter()
            .zip(weights.blocks())
            .map(|(x, w)| x.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Inverse-CDF sampler over observation indices.
#[derive(Clone, Debug)]
pub struct IndexSampler {
    cumulative: Vec<f64>,
}

impl IndexSampler {
    pub fn uniform(n: usize) -> Self {
        let mut cumulative: Vec<f64> = (1..=n).map(|j| j as f64 / n as f64).collect();
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Self { cumulative }
    }

    pub fn from_weights(weights: &[f64]) -> Result<Self, ModelError> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ModelError::Parameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        let last = weights
            .iter()
            .rposition(|&w| w > 0.0)
            .ok_or_else(|| ModelError::Parameter("weights sum to zero".into()))?;
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights[..=last]
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        cumulative[last] = f64::INFINITY;
        Ok(Self { cumulative })
    }

    /// Index `j` whose cumulative-weight cell contains `u`.
    pub fn index(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u)
    }

    pub fn draw(&self, rng: &mut RngStream) -> usize {
        self.index(rng.uniform())
    }
}

/// `count` indices from the reweighted edf of one source.
pub fn sample_indices(sampler: &IndexSampler, count: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..count).map(|_| sampler.draw(rng)).collect()
}
