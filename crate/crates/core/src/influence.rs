//! Influence-function estimates at the edf and the linear surrogate built on
//! them.
//!
//! For solution `i`, source `p` and observation `j` the estimator is the
//! sample covariance over `R1` replications run on the edf:
//!
//! ```text
//! φ̂[i][p][j] = (1/R1) Σ_r (h_ir - h̄_i) (n_p C_rpj - T_ip)
//! ```
//!
//! where `C_rpj` counts how often replication `r` drew observation `j` of
//! source `p`. With common random numbers every solution sees the same index
//! draws in a replication (up to its own `T_ip`).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::el::WeightVector;
use crate::model::{AnalyticModel, IndexSampler, InputDataset, ModelError, SimModel};
use crate::stats::{RngStream, StreamKey};

#[derive(Debug, Error)]
pub enum InfluenceError {
    #[error("at least 2 replications are required, got {0}")]
    TooFewReplications(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("solution index {index} out of range for {k} solutions")]
    Index { index: usize, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfluenceOrigin {
    Simulated { replications: usize, crn: bool },
    /// Exact influence functions at the true input models.
    Analytic,
}

/// `φ̂[i][p][j]` for every solution, source and observation.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceTable {
    values: Vec<Vec<Vec<f64>>>,
    origin: InfluenceOrigin,
}

impl InfluenceTable {
    pub fn new(values: Vec<Vec<Vec<f64>>>, origin: InfluenceOrigin) -> Result<Self, InfluenceError> {
        let Some(first) = values.first() else {
            return Err(InfluenceError::Shape("table has no solutions".into()));
        };
        let shape: Vec<usize> = first.iter().map(Vec::len).collect();
        for (i, v) in values.iter().enumerate() {
            if v.iter().map(Vec::len).ne(shape.iter().copied()) {
                return Err(InfluenceError::Shape(format!("solution {i} has a different shape")));
            }
            if v.iter().flatten().any(|x| !x.is_finite()) {
                return Err(InfluenceError::Shape(format!("solution {i} has non-finite entries")));
            }
        }
        Ok(Self { values, origin })
    }

    pub fn num_solutions(&self) -> usize {
        self.values.len()
    }

    pub fn num_sources(&self) -> usize {
        self.values[0].len()
    }

    pub fn origin(&self) -> InfluenceOrigin {
        self.origin
    }

    pub fn row(&self, i: usize, p: usize) -> &[f64] {
        &self.values[i][p]
    }

    pub fn solution(&self, i: usize) -> &[Vec<f64>] {
        &self.values[i]
    }

    /// `max_{i,p} |Σ_j φ̂[i][p][j]|`.
    pub fn zero_sum_residual(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|row| row.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn scale(&self) -> f64 {
        self.values.iter().flatten().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Rows `solution,source,observation,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), InfluenceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["solution", "source", "observation", "value"]).map_err(csv_io)?;
        for (i, sol) in self.values.iter().enumerate() {
            for (p, row) in sol.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    w.write_record([i.to_string(), p.to_string(), j.to_string(), v.to_string()])
                        .map_err(csv_io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> InfluenceError {
    InfluenceError::Io(std::io::Error::other(e))
}

/// Exact influence functions at the true input models evaluated at the data.
pub fn analytic_influence(model: &dyn AnalyticModel, k: usize, data: &InputDataset) -> InfluenceTable {
    let values = (0..k)
        .map(|i| {
            data.sources()
                .iter()
                .enumerate()
                .map(|(p, xs)| xs.iter().map(|&x| model.true_influence(i, p, x)).collect())
                .collect()
        })
        .collect();
    InfluenceTable::new(values, InfluenceOrigin::Analytic).expect("analytic influence is finite")
}

/// Exact influence functions at the edf evaluated at the data.
pub fn edf_influence(model: &dyn AnalyticModel, k: usize, data: &InputDataset) -> InfluenceTable {
    let w = WeightVector::uniform(&data.sizes());
    let values = (0..k)
        .map(|i| {
            data.sources()
                .iter()
                .enumerate()
                .map(|(p, xs)| xs.iter().map(|&x| model.weighted_influence(i, p, x, data, &w)).collect())
                .collect()
        })
        .collect();
    InfluenceTable::new(values, InfluenceOrigin::Analytic).expect("analytic influence is finite")
}

/// Index draws and exogenous variates for one replication.
pub(crate) struct Draws {
    pub indices: Vec<Vec<u32>>,
    pub aux: Vec<f64>,
}

impl Draws {
    pub(crate) fn sample(
        model: &dyn SimModel,
        samplers: &[IndexSampler],
        lengths: &[usize],
        rng: &mut RngStream,
    ) -> Self {
        let indices = samplers
            .iter()
            .zip(lengths)
            .map(|(s, &len)| (0..len).map(|_| s.draw(rng) as u32).collect())
            .collect();
        let mut aux = vec![0.0; model.auxiliary_len()];
        model.sample_auxiliary(rng, &mut aux);
        Self { indices, aux }
    }

    /// Output of solution `i` using the first `T_ip` draws of every source.
    pub(crate) fn evaluate(&self, model: &dyn SimModel, data: &InputDataset, i: usize, buf: &mut Vec<Vec<f64>>) -> f64 {
        buf.resize_with(self.indices.len(), Vec::new);
        for (p, (idx, out)) in self.indices.iter().zip(buf.iter_mut()).enumerate() {
            let src = data.source(p);
            out.clear();
            out.extend(idx[..model.inputs_per_replication(i, p)].iter().map(|&j| src[j as usize]));
        }
        let inputs: Vec<&[f64]> = buf.iter().map(Vec::as_slice).collect();
        model.evaluate(i, &inputs, &self.aux)
    }
}

pub(crate) fn check_shapes(model: &dyn SimModel, data: &InputDataset) -> Result<(), InfluenceError> {
    if model.num_sources() != data.num_sources() {
        return Err(InfluenceError::Shape(format!(
            "model has {} input sources, data has {}",
            model.num_sources(),
            data.num_sources()
        )));
    }
    if data.sources().iter().any(|s| s.len() > u32::MAX as usize) {
        return Err(InfluenceError::Shape("source too large".into()));
    }
    Ok(())
}

/// Simulation estimate of the influence table at the edf of `data`.
///
/// Replication `r` draws from `key.child(r)` (and `key.children(&[r, i])` per
/// solution without CRN), so results do not depend on the thread count.
pub fn estimate_influence(
    model: &dyn SimModel,
    data: &InputDataset,
    r1: usize,
    key: StreamKey,
    crn: bool,
) -> Result<InfluenceTable, InfluenceError> {
    if r1 < 2 {
        return Err(InfluenceError::TooFewReplications(r1));
    }
    check_shapes(model, data)?;
    let k = model.num_solutions();
    let m = model.num_sources();
    let samplers: Vec<IndexSampler> = data.sources().iter().map(|s| IndexSampler::uniform(s.len())).collect();

    // pass 1: outputs and the draws that produced them, in replication order
    let reps: Vec<(Vec<f64>, Vec<Draws>)> = (0..r1)
        .into_par_iter()
        .map(|r| {
            let mut buf = Vec::new();
            if crn {
                let lengths: Vec<usize> = (0..m).map(|p| model.max_inputs(p)).collect();
                let draws = Draws::sample(model, &samplers, &lengths, &mut key.child(r as u64).stream());
                let outputs = (0..k).map(|i| draws.evaluate(model, data, i, &mut buf)).collect();
                (outputs, vec![draws])
            } else {
                let mut outputs = Vec::with_capacity(k);
                let mut all = Vec::with_capacity(k);
                for i in 0..k {
                    let lengths: Vec<usize> = (0..m).map(|p| model.inputs_per_replication(i, p)).collect();
                    let mut rng = key.children(&[r as u64, i as u64]).stream();
                    let draws = Draws::sample(model, &samplers, &lengths, &mut rng);
                    outputs.push(draws.evaluate(model, data, i, &mut buf));
                    all.push(draws);
                }
                (outputs, all)
            }
        })
        .collect();

    // pass 2: centered outputs against use counts
    let values = (0..k)
        .map(|i| {
            let mean = reps.iter().map(|(h, _)| h[i]).sum::<f64>() / r1 as f64;
            let centered_total: f64 = reps.iter().map(|(h, _)| h[i] - mean).sum();
            (0..m)
                .map(|p| {
                    let n = data.source(p).len();
                    let t = model.inputs_per_replication(i, p);
                    let mut weighted_counts = vec![0.0; n];
                    for (h, draws) in &reps {
                        let d = h[i] - mean;
                        let idx = &draws[if crn { 0 } else { i }].indices[p][..t];
                        for &j in idx {
                            weighted_counts[j as usize] += d;
                        }
                    }
                    weighted_counts
                        .iter()
                        .map(|a| (n as f64 * a - t as f64 * centered_total) / r1 as f64)
                        .collect()
                })
                .collect()
        })
        .collect();
    InfluenceTable::new(values, InfluenceOrigin::Simulated { replications: r1, crn })
}

/// Objective coefficients `φ̂[i][p][j] - φ̂[ℓ][p][j]` of the pairwise program.
pub fn surrogate_diff_coeffs(table: &InfluenceTable, i: usize, l: usize) -> Result<Vec<Vec<f64>>, InfluenceError> {
    let k = table.num_solutions();
    for index in [i, l] {
        if index >= k {
            return Err(InfluenceError::Index { index, k });
        }
    }
    if i == l {
        return Err(InfluenceError::Shape("pairwise coefficients need two distinct solutions".into()));
    }
    Ok(table.values[i]
        .iter()
        .zip(&table.values[l])
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect())
}

/// `η̂^L_i(w) = intercept_i + Σ_p Σ_j φ̂[i][p][j] w_pj`.
#[derive(Clone, Debug)]
pub struct LinearSurrogate {
    pub intercepts: Option<Vec<f64>>,
    pub table: InfluenceTable,
}

impl LinearSurrogate {
    pub fn new(table: InfluenceTable) -> Self {
        Self { intercepts: None, table }
    }

    pub fn with_intercepts(mut self, intercepts: Vec<f64>) -> Self {
        self.intercepts = Some(intercepts);
        self
    }

    /// Surrogate value; the intercept is taken as zero when absent.
    pub fn value(&self, i: usize, weights: &WeightVector) -> f64 {
        let base = self.intercepts.as_ref().map_or(0.0, |c| c[i]);
        base + weights.dot(self.table.solution(i))
    }
}
