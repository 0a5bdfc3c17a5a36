use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::extension::DEFAULT_DRAWS;
use crate::model::{
    InputDistribution, QuadraticCase, QuadraticModel, QuadraticModelParams, SimModel, TandemQueueModel, TandemQueueParams,
};
use crate::procedure::{NioucSettings, Variant};

/// Simulation model and its true input distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Quadratic { case: QuadraticCase },
    QuadraticCustom(QuadraticModelParams),
    TandemQueue(TandemQueueParams),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Quadratic {
            case: QuadraticCase::Case1,
        }
    }
}

/// A constructed model with the distributions datasets are drawn from.
pub struct ModelInstance {
    pub model: Box<dyn SimModel + Send>,
    pub distributions: Vec<InputDistribution>,
}

impl std::fmt::Debug for ModelInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelInstance")
            .field("solutions", &self.model.num_solutions())
            .field("distributions", &self.distributions)
            .finish()
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelInstance, HarnessError> {
        let (model, distributions): (Box<dyn SimModel + Send>, _) = match self {
            ModelSpec::Quadratic { case } => {
                let m = QuadraticModel::case(*case);
                let d = m.input_distributions();
                (Box::new(m), d)
            }
            ModelSpec::QuadraticCustom(params) => {
                let m = QuadraticModel::new(params.clone())?;
                let d = m.input_distributions();
                (Box::new(m), d)
            }
            ModelSpec::TandemQueue(params) => {
                let m = TandemQueueModel::new(params.clone())?;
                let d = m.input_distributions();
                (Box::new(m), d)
            }
        };
        for d in &distributions {
            d.validate()?;
        }
        Ok(ModelInstance { model, distributions })
    }
}

/// Named replication budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `R = 4⌈n^1.1⌉ + 4n`, half for influence estimation and the rest
    /// spread over the `4(k-1)` bound simulations of each solution.
    BudgetParity,
}

/// `(R1, R2)` of the budget-parity preset.
pub fn budget_parity(n: usize, k: usize) -> (usize, usize) {
    let total = 4 * (n as f64).powf(1.1).ceil() as usize + 4 * n;
    (total / 2, (total / (4 * k.saturating_sub(1).max(1))).max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Observations per source when `sizes` is absent.
    pub n: usize,
    pub sizes: Option<Vec<usize>>,
    pub alpha: f64,
    pub r1: usize,
    pub r2: usize,
    pub variant: Variant,
    pub crn: bool,
    pub quantile_draws: usize,
    pub macro_runs: usize,
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    pub preset: Option<Preset>,
    /// True means in model output units. Queue outputs are negated waits.
    pub true_etas: Option<Vec<f64>>,
    pub radius_override: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = NioucSettings::default();
        Self {
            model: ModelSpec::default(),
            n: 100,
            sizes: None,
            alpha: s.alpha,
            r1: s.r1,
            r2: s.r2,
            variant: s.variant,
            crn: s.crn,
            quantile_draws: DEFAULT_DRAWS,
            macro_runs: 1000,
            seed: 1,
            threads: None,
            preset: None,
            true_etas: None,
            radius_override: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn sample_sizes(&self, sources: usize) -> Result<Vec<usize>, HarnessError> {
        let sizes = match &self.sizes {
            Some(s) if s.len() != sources => {
                return Err(HarnessError::Config(format!("{} sample sizes for {sources} sources", s.len())))
            }
            Some(s) => s.clone(),
            None => vec![self.n; sources],
        };
        if sizes.iter().any(|&n| n < 2) {
            return Err(HarnessError::Config("every source needs at least 2 observations".into()));
        }
        Ok(sizes)
    }

    /// Procedure settings after applying the preset.
    pub fn settings(&self, sizes: &[usize], k: usize) -> Result<NioucSettings, HarnessError> {
        if self.macro_runs == 0 {
            return Err(HarnessError::Config("macro_runs must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::Config("threads must be at least 1".into()));
        }
        let (r1, r2) = match self.preset {
            Some(Preset::BudgetParity) => budget_parity(sizes.iter().copied().max().unwrap_or(0), k),
            None => (self.r1, self.r2),
        };
        Ok(NioucSettings {
            alpha: self.alpha,
            r1,
            r2,
            variant: self.variant,
            crn: self.crn,
            quantile_draws: self.quantile_draws,
            radius_override: self.radius_override,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_parity_at_100() {
        assert_eq!(budget_parity(100, 9), (518, 32));
        assert_eq!(budget_parity(400, 9), (2258, 141));
    }

    #[test]
    fn parses_queue_config() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 4
            macro_runs = 10
            variant = "niouc-e"
            preset = "budget-parity"
            [model]
            kind = "tandem_queue"
            scenario = "bimodal"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::Extension);
        let ModelSpec::TandemQueue(p) = &cfg.model else { panic!() };
        assert_eq!(p.budget, 9);
        let inst = cfg.model.build().unwrap();
        assert_eq!(inst.model.num_solutions(), 9);
        let s = cfg.settings(&[100, 100, 100], 9).unwrap();
        assert_eq!((s.r1, s.r2), (518, 32));
    }

    #[test]
    fn parses_quadratic_configs() {
        let cfg = ExperimentConfig::from_toml_str("[model]\nkind = \"quadratic\"\ncase = \"case3\"\n").unwrap();
        assert_eq!(cfg.model.build().unwrap().model.num_solutions(), 10);
        let custom = ExperimentConfig::from_toml_str(
            "[model]\nkind = \"quadratic_custom\"\na = [1.0, 2.0]\nc = [0.0]\ntau2 = [1.0]\nt = 3\n",
        )
        .unwrap();
        assert_eq!(custom.model.build().unwrap().distributions.len(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let cfg = ExperimentConfig {
            macro_runs: 0,
            ..Default::default()
        };
        assert!(cfg.settings(&[10, 10], 3).is_err());
        let cfg = ExperimentConfig {
            sizes: Some(vec![10]),
            ..Default::default()
        };
        assert!(cfg.sample_sizes(2).is_err());
        let bad = ModelSpec::QuadraticCustom(QuadraticModelParams {
            a: vec![1.0],
            c: vec![0.0],
            tau2: vec![0.0],
            t: 1,
        });
        assert!(bad.build().is_err());
    }
}
