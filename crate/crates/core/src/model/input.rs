use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::stats::RngStream;

/// True distribution of one input source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InputDistribution {
    Normal {
        mean: f64,
        variance: f64,
    },
    Exponential {
        mean: f64,
    },
    /// With probability `gamma`, `b[0] · Beta(b[1], b[2])`; otherwise
    /// `b[3] · Beta(b[4], b[5])`.
    BetaMixture {
        gamma: f64,
        b: [f64; 6],
    },
}

impl InputDistribution {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Parameter(msg));
        match *self {
            InputDistribution::Normal { mean, variance } => {
                if !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
                    return bad(format!("normal needs finite mean and positive variance, got ({mean}, {variance})"));
                }
            }
            InputDistribution::Exponential { mean } => {
                if !(mean > 0.0) || !mean.is_finite() {
                    return bad(format!("exponential mean must be positive, got {mean}"));
                }
            }
            InputDistribution::BetaMixture { gamma, b } => {
                if !(0.0..=1.0).contains(&gamma) {
                    return bad(format!("mixture probability must lie in [0, 1], got {gamma}"));
                }
                if b.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return bad(format!("mixture parameters must be positive, got {b:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InputDistribution::Normal { mean, .. } => mean,
            InputDistribution::Exponential { mean } => mean,
            InputDistribution::BetaMixture { gamma, b } => {
                gamma * b[0] * b[1] / (b[1] + b[2]) + (1.0 - gamma) * b[3] * b[4] / (b[4] + b[5])
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InputDistribution::Normal { variance, .. } => variance,
            InputDistribution::Exponential { mean } => mean * mean,
            InputDistribution::BetaMixture { gamma, b } => {
                let moments = |scale: f64, a: f64, c: f64| {
                    let m = a / (a + c);
                    let v = a * c / ((a + c).powi(2) * (a + c + 1.0));
                    (scale * m, scale * scale * (v + m * m))
                };
                let (m1, s1) = moments(b[0], b[1], b[2]);
                let (m2, s2) = moments(b[3], b[4], b[5]);
                let mean = gamma * m1 + (1.0 - gamma) * m2;
                gamma * s1 + (1.0 - gamma) * s2 - mean * mean
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            InputDistribution::Normal { mean, variance } => {
                Normal::new(mean, variance.sqrt()).expect("validated").sample(rng)
            }
            InputDistribution::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            InputDistribution::BetaMixture { gamma, b } => {
                let first = rng.random::<f64>() < gamma;
                let (scale, a, c) = if first { (b[0], b[1], b[2]) } else { (b[3], b[4], b[5]) };
                let x = Gamma::new(a, 1.0).expect("validated").sample(rng);
                let y = Gamma::new(c, 1.0).expect("validated").sample(rng);
                scale * x / (x + y)
            }
        }
    }

    pub fn sample_n(&self, count: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}
