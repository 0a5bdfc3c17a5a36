//! Quadratic response with Gaussian inputs:
//!
//! ```text
//! h_i(Z) = (1/T) Σ_t [ Σ_p a_i (Z_p(t) - a_i)² + Σ_{p<p'} a_i (Z_p(t) - a_i)(Z_{p'}(t) - a_i) ]
//! ```

use serde::{Deserialize, Serialize};

use super::{AnalyticModel, InputDataset, InputDistribution, ModelError, SimModel};
use crate::el::WeightVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModelParams {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Inputs per source per replication.
    pub t: usize,
}

/// The three preset configurations with `c = (193, 200)`, `τ² = (1833, 2000)`, `T = 10`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticCase {
    Case1,
    Case2,
    Case3,
}

impl QuadraticCase {
    pub fn params(self) -> QuadraticModelParams {
        let a = match self {
            QuadraticCase::Case1 => vec![66.0, 69.0, 72.0],
            QuadraticCase::Case2 => vec![69.0, 70.0, 255.0],
            QuadraticCase::Case3 => (64..=73).map(f64::from).collect(),
        };
        QuadraticModelParams {
            a,
            c: vec![193.0, 200.0],
            tau2: vec![1833.0, 2000.0],
            t: 10,
        }
    }
}

impl QuadraticModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.a.is_empty() {
            return Err(ModelError::Parameter("at least one solution is required".into()));
        }
        if self.c.is_empty() || self.c.len() != self.tau2.len() {
            return Err(ModelError::Shape(format!(
                "c has {} entries and tau2 has {}",
                self.c.len(),
                self.tau2.len()
            )));
        }
        if self.t == 0 {
            return Err(ModelError::Parameter("T must be positive".into()));
        }
        if self.tau2.iter().any(|v| !(*v >= 0.0)) {
            return Err(ModelError::Parameter("variances must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticModel {
    params: QuadraticModelParams,
}

impl QuadraticModel {
    pub fn new(params: QuadraticModelParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn case(case: QuadraticCase) -> Self {
        Self::new(case.params()).expect("preset parameters are valid")
    }

    pub fn params(&self) -> &QuadraticModelParams {
        &self.params
    }

    pub fn input_distributions(&self) -> Vec<InputDistribution> {
        self.params
            .c
            .iter()
            .zip(&self.params.tau2)
            .map(|(&mean, &variance)| InputDistribution::Normal { mean, variance })
            .collect()
    }

    /// Output of solution `i` on inputs `z[p][t]`, with shape checks.
    pub fn output(&self, i: usize, z: &[&[f64]]) -> Result<f64, ModelError> {
        if i >= self.params.a.len() {
            return Err(ModelError::Shape(format!("solution {i} out of range")));
        }
        if z.len() != self.params.c.len() {
            return Err(ModelError::Shape(format!(
                "expected {} input sources, got {}",
                self.params.c.len(),
                z.len()
            )));
        }
        if let Some(p) = z.iter().position(|s| s.len() != self.params.t) {
            return Err(ModelError::Shape(format!(
                "source {p} has {} inputs, expected T = {}",
                z[p].len(),
                self.params.t
            )));
        }
        Ok(self.evaluate(i, z, &[]))
    }

    /// η under independent sources with the given first moments and second
    /// moments about `a_i`.
    fn eta_from_moments(&self, i: usize, m1: &[f64], m2a: &[f64]) -> f64 {
        let a = self.params.a[i];
        let square: f64 = m2a.iter().sum();
        let mut cross = 0.0;
        for p in 0..m1.len() {
            for q in (p + 1)..m1.len() {
                cross += (m1[p] - a) * (m1[q] - a);
            }
        }
        a * (square + cross)
    }

    fn influence_from_moments(&self, i: usize, p: usize, x: f64, m1: &[f64], m2a: &[f64]) -> f64 {
        let a = self.params.a[i];
        let others: f64 = m1
            .iter()
            .enumerate()
            .filter(|(q, _)| *q != p)
            .map(|(_, m)| m - a)
            .sum();
        a * ((x - a).powi(2) - m2a[p]) + a * (x - m1[p]) * others
    }

    fn true_moments(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let a = self.params.a[i];
        let m2a = self
            .params
            .c
            .iter()
            .zip(&self.params.tau2)
            .map(|(c, v)| v + (c - a).powi(2))
            .collect();
        (self.params.c.clone(), m2a)
    }

    fn weighted_moments(&self, i: usize, data: &InputDataset, weights: &WeightVector) -> (Vec<f64>, Vec<f64>) {
        let a = self.params.a[i];
        let m1 = data.weighted_means(weights);
        let m2a = data
            .sources()
            .iter()
            .zip(weights.blocks())
            .map(|(x, w)| x.iter().zip(w).map(|(x, w)| w * (x - a).powi(2)).sum())
            .collect();
        (m1, m2a)
    }
}

impl SimModel for QuadraticModel {
    fn num_solutions(&self) -> usize {
        self.params.a.len()
    }

    fn num_sources(&self) -> usize {
        self.params.c.len()
    }

    fn inputs_per_replication(&self, _i: usize, _p: usize) -> usize {
        self.params.t
    }

    fn evaluate(&self, i: usize, inputs: &[&[f64]], _aux: &[f64]) -> f64 {
        let a = self.params.a[i];
        let t_len = self.params.t;
        let mut total = 0.0;
        for t in 0..t_len {
            let (mut sum, mut sq) = (0.0, 0.0);
            let mut cross = 0.0;
            for src in inputs {
                let d = src[t] - a;
                cross += sum * d;
                sum += d;
                sq += d * d;
            }
            total += a * (sq + cross);
        }
        total / t_len as f64
    }

    fn analytic(&self) -> Option<&dyn AnalyticModel> {
        Some(self)
    }
}

impl AnalyticModel for QuadraticModel {
    fn true_eta(&self, i: usize) -> f64 {
        let (m1, m2a) = self.true_moments(i);
        self.eta_from_moments(i, &m1, &m2a)
    }

    fn true_influence(&self, i: usize, p: usize, x: f64) -> f64 {
        let (m1, m2a) = self.true_moments(i);
        self.influence_from_moments(i, p, x, &m1, &m2a)
    }

    fn weighted_eta(&self, i: usize, data: &InputDataset, weights: &WeightVector) -> f64 {
        let (m1, m2a) = self.weighted_moments(i, data, weights);
        self.eta_from_moments(i, &m1, &m2a)
    }

    fn weighted_influence(&self, i: usize, p: usize, x: f64, data: &InputDataset, weights: &WeightVector) -> f64 {
        let (m1, m2a) = self.weighted_moments(i, data, weights);
        self.influence_from_moments(i, p, x, &m1, &m2a)
    }
}
