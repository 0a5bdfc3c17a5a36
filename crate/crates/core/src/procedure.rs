//! The full comparison procedure: influence estimation, one worst-case
//! program per ordered pair, simulation of the bound at the maximizer, and
//! MCB interval assembly.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::el::{max_linear, AmbiguitySpec, ElError, WeightVector};
use crate::extension::{estimate_extension_quantile, ExtensionError, QuantileReport, DEFAULT_DRAWS};
use crate::influence::{
    analytic_influence, check_shapes, estimate_influence, surrogate_diff_coeffs, Draws, InfluenceError, InfluenceTable,
};
use crate::model::{IndexSampler, InputDataset, ModelError, SimModel};
use crate::stats::{chi2_quantile, StatsError, StreamKey};

const INFLUENCE_STREAM: u64 = 1;
const PAIR_STREAM: u64 = 2;
const QUANTILE_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum ProcedureError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bound table entry ({i}, {l}) is not finite")]
    NonFinite { i: usize, l: usize },
    #[error("pair ({i}, {l}): {source}")]
    PairSolve { i: usize, l: usize, source: ElError },
    #[error("benchmark variants need a model with closed-form means and influence functions")]
    NotAnalytic,
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    El(#[from] ElError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Radius `χ²_{k-1,1-α}` with simulated influence functions and bounds.
    #[serde(rename = "niouc", alias = "standard")]
    Standard,
    /// Monte Carlo radius per reference solution.
    #[serde(rename = "niouc-e", alias = "extension")]
    Extension,
    /// Exact influence functions and exact bounds, `χ²` radius.
    #[serde(rename = "benchmark")]
    Benchmark,
    /// Exact influence functions and exact bounds, Monte Carlo radius.
    #[serde(rename = "benchmark-e", alias = "benchmark-extension")]
    BenchmarkExtension,
}

impl Variant {
    pub fn uses_extension(self) -> bool {
        matches!(self, Variant::Extension | Variant::BenchmarkExtension)
    }

    pub fn is_benchmark(self) -> bool {
        matches!(self, Variant::Benchmark | Variant::BenchmarkExtension)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Standard => "niouc",
            Variant::Extension => "niouc-e",
            Variant::Benchmark => "benchmark",
            Variant::BenchmarkExtension => "benchmark-e",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "niouc" | "standard" => Some(Variant::Standard),
            "niouc-e" | "extension" => Some(Variant::Extension),
            "benchmark" => Some(Variant::Benchmark),
            "benchmark-e" | "benchmark-extension" => Some(Variant::BenchmarkExtension),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NioucSettings {
    pub alpha: f64,
    pub r1: usize,
    pub r2: usize,
    pub variant: Variant,
    pub crn: bool,
    pub quantile_draws: usize,
    /// Replaces the radius for every reference solution.
    pub radius_override: Option<f64>,
}

impl Default for NioucSettings {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            r1: 400,
            r2: 100,
            variant: Variant::Standard,
            crn: true,
            quantile_draws: DEFAULT_DRAWS,
            radius_override: None,
        }
    }
}

/// Worst-case bound for one ordered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBound {
    pub i: usize,
    pub l: usize,
    pub bound: f64,
    /// Monte Carlo standard error of `bound`; `None` when computed exactly.
    pub std_error: Option<f64>,
    pub weights: WeightVector,
    /// Optimal surrogate value of the pairwise program.
    pub surrogate_value: f64,
    pub theta: Option<f64>,
    pub solver_iterations: usize,
    pub kkt_residual: f64,
}

/// Bounds `Û[i][ℓ]` for all ordered pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseBoundSet {
    pub k: usize,
    pub r2: usize,
    /// Row-major over `(i, ℓ)`, `ℓ ≠ i`.
    pub pairs: Vec<PairBound>,
}

impl PairwiseBoundSet {
    pub fn get(&self, i: usize, l: usize) -> &PairBound {
        assert!(i != l && i < self.k && l < self.k);
        &self.pairs[i * (self.k - 1) + if l < i { l } else { l - 1 }]
    }

    /// `k × k` table with `NaN` on the diagonal.
    pub fn table(&self) -> Vec<Vec<f64>> {
        let mut t = vec![vec![f64::NAN; self.k]; self.k];
        for p in &self.pairs {
            t[p.i][p.l] = p.bound;
        }
        t
    }
}

/// MCB intervals `[D⁻_i, D⁺_i]` and the confidence set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McbOutcome {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Solutions with `D⁺_i > 0`, ascending.
    pub selected: Vec<usize>,
    /// Set when no `D⁺_i` was positive and the set fell back to the
    /// solution with the largest worst-case margin.
    pub degenerate: bool,
}

impl McbOutcome {
    pub fn contains(&self, i: usize) -> bool {
        self.selected.binary_search(&i).is_ok()
    }
}

/// Interval construction from a full `k × k` bound table (diagonal ignored).
pub fn mcb_from_bounds(bounds: &[Vec<f64>]) -> Result<McbOutcome, ProcedureError> {
    let k = bounds.len();
    if k < 2 {
        return Err(ProcedureError::Config(format!("need at least 2 solutions, got {k}")));
    }
    for (i, row) in bounds.iter().enumerate() {
        if row.len() != k {
            return Err(ProcedureError::Config(format!("bound table row {i} has length {}", row.len())));
        }
        for (l, v) in row.iter().enumerate() {
            if l != i && !v.is_finite() {
                return Err(ProcedureError::NonFinite { i, l });
            }
        }
    }
    let margin: Vec<f64> = (0..k)
        .map(|i| {
            (0..k)
                .filter(|&l| l != i)
                .map(|l| bounds[i][l])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let upper: Vec<f64> = margin.iter().map(|m| m.max(0.0)).collect();
    let mut selected: Vec<usize> = (0..k).filter(|&i| upper[i] > 0.0).collect();
    let degenerate = selected.is_empty();
    if degenerate {
        let best = (0..k).fold(0, |b, i| if margin[i] > margin[b] { i } else { b });
        selected.push(best);
    }
    let lower = (0..k)
        .map(|i| {
            if selected == [i] {
                return 0.0;
            }
            // -(min_{ℓ ∈ I, ℓ ≠ i} -Û[ℓ][i])⁻
            let inner = selected
                .iter()
                .filter(|&&l| l != i)
                .map(|&l| -bounds[l][i])
                .fold(f64::INFINITY, f64::min);
            -(-inner).max(0.0)
        })
        .collect();
    Ok(McbOutcome {
        lower,
        upper,
        selected,
        degenerate,
    })
}

/// `(1/R2) Σ_r (Y_ir - Y_ℓr)` with inputs drawn from the reweighted edf.
/// Returns the mean and its standard error.
#[allow(clippy::too_many_arguments)]
pub fn estimate_pair_bound(
    model: &dyn SimModel,
    data: &InputDataset,
    weights: &WeightVector,
    i: usize,
    l: usize,
    r2: usize,
    key: StreamKey,
    crn: bool,
) -> Result<(f64, f64), ProcedureError> {
    if r2 == 0 {
        return Err(ProcedureError::Config("R2 must be at least 1".into()));
    }
    check_shapes(model, data)?;
    let samplers = weights
        .blocks()
        .iter()
        .map(|w| IndexSampler::from_weights(w))
        .collect::<Result<Vec<_>, _>>()?;
    if samplers.len() != data.num_sources()
        || weights.blocks().iter().zip(data.sources()).any(|(w, x)| w.len() != x.len())
    {
        return Err(ProcedureError::Config("weights do not match the dataset".into()));
    }
    let m = model.num_sources();
    let lengths = |sols: &[usize]| -> Vec<usize> {
        (0..m)
            .map(|p| sols.iter().map(|&s| model.inputs_per_replication(s, p)).max().unwrap_or(0))
            .collect()
    };
    let mut buf = Vec::new();
    let diffs: Vec<f64> = (0..r2)
        .map(|r| {
            let rk = key.child(r as u64);
            if crn {
                let draws = Draws::sample(model, &samplers, &lengths(&[i, l]), &mut rk.stream());
                draws.evaluate(model, data, i, &mut buf) - draws.evaluate(model, data, l, &mut buf)
            } else {
                let di = Draws::sample(model, &samplers, &lengths(&[i]), &mut rk.child(0).stream());
                let dl = Draws::sample(model, &samplers, &lengths(&[l]), &mut rk.child(1).stream());
                di.evaluate(model, data, i, &mut buf) - dl.evaluate(model, data, l, &mut buf)
            }
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / r2 as f64;
    let se = if r2 > 1 {
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / ((r2 - 1) * r2) as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok((mean, se))
}

/// Per-run diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Radius used for the programs of each reference solution.
    pub radii: Vec<f64>,
    /// Reference solutions whose Monte Carlo radius fell back to `χ²`.
    pub radius_fallbacks: Vec<usize>,
    pub quantiles: Vec<QuantileReport>,
    /// Model evaluations performed.
    pub simulations: u64,
    pub solver_iterations: usize,
    pub max_kkt_residual: f64,
    pub zero_sum_residual: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug)]
pub struct NioucRun {
    pub outcome: McbOutcome,
    pub bounds: PairwiseBoundSet,
    pub influence: InfluenceTable,
    pub diagnostics: Diagnostics,
}

impl NioucRun {
    pub fn radius_by_solution(&self) -> &[f64] {
        &self.diagnostics.radii
    }
}

/// Radii of the pairwise programs, one per reference solution.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusSet {
    pub radii: Vec<f64>,
    /// Reference solutions whose Monte Carlo radius fell back to `χ²`.
    pub fallbacks: Vec<usize>,
    pub reports: Vec<QuantileReport>,
}

/// Influence table for the variant: exact for benchmarks, simulated otherwise.
pub fn influence_table(
    model: &dyn SimModel,
    data: &InputDataset,
    settings: &NioucSettings,
    key: StreamKey,
) -> Result<InfluenceTable, ProcedureError> {
    let k = model.num_solutions();
    if settings.variant.is_benchmark() {
        let a = model.analytic().ok_or(ProcedureError::NotAnalytic)?;
        check_shapes(model, data)?;
        Ok(analytic_influence(a, k, data))
    } else {
        Ok(estimate_influence(model, data, settings.r1, key.child(INFLUENCE_STREAM), settings.crn)?)
    }
}

/// `χ²_{k-1,1-α}` for every reference, or the Monte Carlo quantiles for the
/// extension variants. Degenerate references keep the `χ²` radius.
pub fn pair_radii(table: &InfluenceTable, settings: &NioucSettings, key: StreamKey) -> Result<RadiusSet, ProcedureError> {
    let k = table.num_solutions();
    if k < 2 {
        return Err(ProcedureError::Config(format!("need at least 2 solutions, got {k}")));
    }
    let chi2 = chi2_quantile((k - 1) as u32, 1.0 - settings.alpha)?;
    let mut set = RadiusSet {
        radii: vec![chi2; k],
        fallbacks: Vec::new(),
        reports: Vec::new(),
    };
    if let Some(r) = settings.radius_override {
        set.radii = vec![r; k];
        return Ok(set);
    }
    if !settings.variant.uses_extension() {
        return Ok(set);
    }
    let reports: Vec<Result<QuantileReport, ExtensionError>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.children(&[QUANTILE_STREAM, i as u64]).stream();
            estimate_extension_quantile(table, i, settings.alpha, settings.quantile_draws, &mut rng)
        })
        .collect();
    for (i, rep) in reports.into_iter().enumerate() {
        match rep {
            Ok(q) => {
                set.radii[i] = q.quantile;
                set.reports.push(q);
            }
            Err(ExtensionError::Degenerate { .. }) | Err(ExtensionError::Stats(_)) => set.fallbacks.push(i),
            Err(e) => return Err(ProcedureError::Config(e.to_string())),
        }
    }
    Ok(set)
}

/// Runs the procedure on one dataset.
pub fn run_niouc(
    model: &dyn SimModel,
    data: &InputDataset,
    settings: &NioucSettings,
    key: StreamKey,
) -> Result<NioucRun, ProcedureError> {
    let start = Instant::now();
    let k = model.num_solutions();
    if k < 2 {
        return Err(ProcedureError::Config(format!("need at least 2 solutions, got {k}")));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(ProcedureError::Config(format!("alpha must lie in (0, 1), got {}", settings.alpha)));
    }
    check_shapes(model, data)?;
    let benchmark = settings.variant.is_benchmark();
    if !benchmark && (settings.r1 < 2 || settings.r2 < 1) {
        return Err(ProcedureError::Config("R1 must be at least 2 and R2 at least 1".into()));
    }
    let analytic = if benchmark {
        Some(model.analytic().ok_or(ProcedureError::NotAnalytic)?)
    } else {
        None
    };
    let influence = influence_table(model, data, settings, key)?;
    let radii = pair_radii(&influence, settings, key)?;

    let sizes = data.sizes();
    let pair_list: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).filter(move |&l| l != i).map(move |l| (i, l)))
        .collect();
    let pairs: Vec<Result<PairBound, ProcedureError>> = pair_list
        .par_iter()
        .map(|&(i, l)| {
            let spec = AmbiguitySpec::new(sizes.clone(), radii.radii[i])?.with_alpha(settings.alpha);
            let coeffs = surrogate_diff_coeffs(&influence, i, l)?;
            let report = max_linear(&spec, &coeffs).map_err(|source| ProcedureError::PairSolve { i, l, source })?;
            let (bound, std_error) = match analytic {
                Some(a) => (a.weighted_eta(i, data, &report.weights) - a.weighted_eta(l, data, &report.weights), None),
                None => {
                    let pk = key.children(&[PAIR_STREAM, i as u64, l as u64]);
                    let (mean, se) =
                        estimate_pair_bound(model, data, &report.weights, i, l, settings.r2, pk, settings.crn)?;
                    (mean, Some(se))
                }
            };
            Ok(PairBound {
                i,
                l,
                bound,
                std_error,
                surrogate_value: report.value,
                theta: report.theta,
                solver_iterations: report.iterations,
                kkt_residual: report.kkt_residual,
                weights: report.weights,
            })
        })
        .collect();
    let pairs = pairs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let bounds = PairwiseBoundSet {
        k,
        r2: if benchmark { 0 } else { settings.r2 },
        pairs,
    };
    let outcome = mcb_from_bounds(&bounds.table())?;

    let simulations = if benchmark {
        0
    } else {
        (k * settings.r1 + 2 * k * (k - 1) * settings.r2) as u64
    };
    let diagnostics = Diagnostics {
        radii: radii.radii,
        radius_fallbacks: radii.fallbacks,
        quantiles: radii.reports,
        simulations,
        solver_iterations: bounds.pairs.iter().map(|p| p.solver_iterations).sum(),
        max_kkt_residual: bounds.pairs.iter().map(|p| p.kkt_residual).fold(0.0, f64::max),
        zero_sum_residual: influence.zero_sum_residual(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    Ok(NioucRun {
        outcome,
        bounds,
        influence,
        diagnostics,
    })
}
