//! Simulation models, input data and reweighted-edf sampling.

mod dataset;
mod input;
mod quadratic;
mod queue;

use thiserror::Error;

pub use dataset::{sample_indices, IndexSampler, InputDataset};
pub use input::InputDistribution;
pub use quadratic::{QuadraticCase, QuadraticModel, QuadraticModelParams};
pub use queue::{
    enumerate_solutions, simulate_tandem, tandem_queue_output, ServiceScenario, TandemLayout, TandemQueueModel,
    TandemQueueParams,
};

use crate::el::WeightVector;
use crate::stats::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
}

/// A stochastic simulation whose randomness enters only through its inputs.
///
/// Replication outputs of solution `i` are `evaluate(i, inputs, aux)` where
/// `inputs[p]` holds exactly `inputs_per_replication(i, p)` draws from input
/// source `p` and `aux` holds exogenous variates that do not come from data.
pub trait SimModel: Sync {
    fn num_solutions(&self) -> usize;
    fn num_sources(&self) -> usize;
    /// `T_ip`.
    fn inputs_per_replication(&self, i: usize, p: usize) -> usize;

    /// Number of exogenous variates per replication.
    fn auxiliary_len(&self) -> usize {
        0
    }

    fn sample_auxiliary(&self, _rng: &mut RngStream, _out: &mut [f64]) {}

    fn evaluate(&self, i: usize, inputs: &[&[f64]], aux: &[f64]) -> f64;

    /// Closed forms, when the model has them.
    fn analytic(&self) -> Option<&dyn AnalyticModel> {
        None
    }

    /// Reference means under the true input models, when known.
    fn reference_etas(&self) -> Option<Vec<f64>> {
        self.analytic()
            .map(|a| (0..self.num_solutions()).map(|i| a.true_eta(i)).collect())
    }

    /// Largest `T_ip` over solutions for source `p`.
    fn max_inputs(&self, p: usize) -> usize {
        (0..self.num_solutions())
            .map(|i| self.inputs_per_replication(i, p))
            .max()
            .unwrap_or(0)
    }
}

/// Exact means and influence functions.
pub trait AnalyticModel: Sync {
    /// `η_i` under the true input models.
    fn true_eta(&self, i: usize) -> f64;
    /// `IF_ip(x)` at the true input models.
    fn true_influence(&self, i: usize, p: usize, x: f64) -> f64;
    /// `η_i` when source `p` is the reweighted edf of `data` with `weights`.
    fn weighted_eta(&self, i: usize, data: &InputDataset, weights: &WeightVector) -> f64;
    /// `IF_ip(x)` at the reweighted edf.
    fn weighted_influence(&self, i: usize, p: usize, x: f64, data: &InputDataset, weights: &WeightVector) -> f64;
}
