//! Macro-run experiment driver and the four coverage metrics.

mod config;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{budget_parity, ExperimentConfig, ModelInstance, ModelSpec, Preset};

use crate::el::{circle_directions, el_log_ratio, region_boundary, ElError};
use crate::model::{InputDataset, InputDistribution, ModelError, SimModel};
use crate::procedure::{run_niouc, NioucRun, NioucSettings, McbOutcome, ProcedureError};
use crate::stats::{chi2_quantile, sample_mvn, CorrelationMatrix, RngStream, StatsError, StreamKey};

const DATA_STREAM: u64 = 0;
const PROCEDURE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("macro-run {run} (seed {seed}, stream {stream_id:#018x}) failed: {source}")]
    Run {
        run: usize,
        seed: u64,
        stream_id: u64,
        source: ProcedureError,
    },
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    El(#[from] ElError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        let kind = match self {
            HarnessError::Config(_) => "config",
            HarnessError::Run { .. } => "run",
            HarnessError::Procedure(_) => "procedure",
            HarnessError::Model(_) => "model",
            HarnessError::El(_) => "el",
            HarnessError::Stats(_) => "stats",
            HarnessError::Io(_) => "io",
            HarnessError::Csv(_) => "csv",
            HarnessError::Json(_) => "json",
            HarnessError::Pool(_) => "thread_pool",
        };
        let mut rec = serde_json::json!({ "error": kind, "message": self.to_string() });
        if let HarnessError::Run { run, seed, stream_id, .. } = self {
            rec["run"] = (*run).into();
            rec["seed"] = (*seed).into();
            rec["stream_id"] = (*stream_id).into();
        }
        rec
    }
}

/// I.i.d. draws of `sizes[p]` observations from `distributions[p]`.
pub fn generate_dataset(
    distributions: &[InputDistribution],
    sizes: &[usize],
    rng: &mut RngStream,
) -> Result<InputDataset, ModelError> {
    if distributions.len() != sizes.len() {
        return Err(ModelError::Shape(format!(
            "{} distributions for {} sample sizes",
            distributions.len(),
            sizes.len()
        )));
    }
    for d in distributions {
        d.validate()?;
    }
    InputDataset::new(distributions.iter().zip(sizes).map(|(d, &n)| d.sample_n(n, rng)).collect())
}

/// Whether `η_i - max_{ℓ≠i} η_ℓ ∈ [D⁻_i, D⁺_i]` for every `i`.
pub fn evaluate_mcb_coverage(outcome: &McbOutcome, true_etas: &[f64]) -> bool {
    let k = true_etas.len();
    assert_eq!(outcome.lower.len(), k, "one true mean per solution");
    (0..k).all(|i| {
        let rival = (0..k)
            .filter(|&l| l != i)
            .map(|l| true_etas[l])
            .fold(f64::NEG_INFINITY, f64::max);
        let gap = true_etas[i] - rival;
        outcome.lower[i] <= gap && gap <= outcome.upper[i]
    })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// One line of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub covered: Option<bool>,
    pub best_included: Option<bool>,
    pub set_size: usize,
    /// `D⁺ - D⁻` of the true best solution.
    pub width: Option<f64>,
    pub degenerate: bool,
    pub selected: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub radii: Vec<f64>,
    /// `Û[i][ℓ]` for ordered pairs in row-major order.
    pub bounds: Vec<f64>,
    pub simulations: u64,
}

impl RunRecord {
    pub fn from_run(run: usize, result: &NioucRun, true_etas: Option<&[f64]>) -> Self {
        let o = &result.outcome;
        let best = true_etas.map(argmax);
        Self {
            run,
            covered: true_etas.map(|e| evaluate_mcb_coverage(o, e)),
            best_included: best.map(|b| o.contains(b)),
            set_size: o.selected.len(),
            width: best.map(|b| o.upper[b] - o.lower[b]),
            degenerate: o.degenerate,
            selected: o.selected.clone(),
            lower: o.lower.clone(),
            upper: o.upper.clone(),
            radii: result.diagnostics.radii.clone(),
            bounds: result.bounds.pairs.iter().map(|p| p.bound).collect(),
            simulations: result.diagnostics.simulations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std_error = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error }
    }

    fn proportion(hits: impl Iterator<Item = bool>) -> Self {
        let (mut h, mut n) = (0usize, 0usize);
        for x in hits {
            h += x as usize;
            n += 1;
        }
        let p = h as f64 / n as f64;
        Self {
            mean: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub runs: usize,
    /// Index of the true best solution, when true means are known.
    pub best: Option<usize>,
    pub mcb_coverage: Option<Estimate>,
    pub inclusion_prob: Option<Estimate>,
    pub mean_set_size: Estimate,
    pub mean_width: Option<Estimate>,
    pub per_solution_inclusion: Vec<Estimate>,
    /// Runs by confidence-set size; index 0 is always empty.
    pub set_size_histogram: Vec<usize>,
    pub degenerate_runs: usize,
    pub simulations: u64,
}

impl MacroMetrics {
    pub fn from_records(records: &[RunRecord], k: usize, true_etas: Option<&[f64]>) -> Self {
        let mut hist = vec![0; k + 1];
        for r in records {
            hist[r.set_size] += 1;
        }
        Self {
            runs: records.len(),
            best: true_etas.map(argmax),
            mcb_coverage: true_etas.map(|_| Estimate::proportion(records.iter().map(|r| r.covered == Some(true)))),
            inclusion_prob: true_etas
                .map(|_| Estimate::proportion(records.iter().map(|r| r.best_included == Some(true)))),
            mean_set_size: Estimate::of(records.iter().map(|r| r.set_size as f64)),
            mean_width: true_etas.map(|_| Estimate::of(records.iter().filter_map(|r| r.width))),
            per_solution_inclusion: (0..k)
                .map(|i| Estimate::proportion(records.iter().map(|r| r.selected.contains(&i))))
                .collect(),
            set_size_histogram: hist,
            degenerate_runs: records.iter().filter(|r| r.degenerate).count(),
            simulations: records.iter().map(|r| r.simulations).sum(),
        }
    }
}

/// A configuration resolved into a model, sizes and procedure settings.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub instance: ModelInstance,
    pub sizes: Vec<usize>,
    pub settings: NioucSettings,
    pub true_etas: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub metrics: MacroMetrics,
    pub elapsed_secs: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    sizes: &'a [usize],
    settings: &'a NioucSettings,
    solutions: usize,
    true_etas: Option<&'a [f64]>,
    metrics: &'a MacroMetrics,
    threads: usize,
    elapsed_secs: f64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        let instance = config.model.build()?;
        let k = instance.model.num_solutions();
        let sizes = config.sample_sizes(instance.model.num_sources())?;
        let settings = config.settings(&sizes, k)?;
        let true_etas = config.true_etas.clone().or_else(|| instance.model.reference_etas());
        if let Some(e) = &true_etas {
            if e.len() != k || e.iter().any(|x| !x.is_finite()) {
                return Err(HarnessError::Config(format!("need {k} finite true means, got {e:?}")));
            }
        }
        Ok(Self {
            config,
            instance,
            sizes,
            settings,
            true_etas,
        })
    }

    pub fn model(&self) -> &dyn SimModel {
        self.instance.model.as_ref()
    }

    pub fn num_solutions(&self) -> usize {
        self.instance.model.num_solutions()
    }

    pub fn run_key(&self, run: usize) -> StreamKey {
        StreamKey::new(self.config.seed).child(run as u64)
    }

    pub fn procedure_key(&self, run: usize) -> StreamKey {
        self.run_key(run).child(PROCEDURE_STREAM)
    }

    pub fn dataset(&self, run: usize) -> Result<InputDataset, HarnessError> {
        let mut rng = self.run_key(run).child(DATA_STREAM).stream();
        Ok(generate_dataset(&self.instance.distributions, &self.sizes, &mut rng)?)
    }

    /// One macro-run: a fresh dataset and one execution of the procedure.
    pub fn run_once(&self, run: usize) -> Result<(InputDataset, NioucRun), HarnessError> {
        let data = self.dataset(run)?;
        let result = run_niouc(self.model(), &data, &self.settings, self.procedure_key(run)).map_err(|source| {
            HarnessError::Run {
                run,
                seed: self.config.seed,
                stream_id: self.run_key(run).stream_id(),
                source,
            }
        })?;
        Ok((data, result))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.config.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| HarnessError::Pool(e.to_string()))
    }

    /// All macro-runs. Stops scheduling later runs after a failure and
    /// reports the earliest failing run.
    pub fn run(&self) -> Result<ExperimentOutput, HarnessError> {
        let start = Instant::now();
        let runs = self.config.macro_runs;
        let first_failure = AtomicUsize::new(usize::MAX);
        let results: Vec<Option<Result<RunRecord, HarnessError>>> = self.pool()?.install(|| {
            (0..runs)
                .into_par_iter()
                .map(|run| {
                    if run > first_failure.load(Ordering::Relaxed) {
                        return None;
                    }
                    let rec = self
                        .run_once(run)
                        .map(|(_, r)| RunRecord::from_run(run, &r, self.true_etas.as_deref()));
                    if rec.is_err() {
                        first_failure.fetch_min(run, Ordering::Relaxed);
                    }
                    Some(rec)
                })
                .collect()
        });
        let mut records = Vec::with_capacity(runs);
        for r in results {
            match r {
                Some(Ok(rec)) => records.push(rec),
                Some(Err(e)) => return Err(e),
                None => unreachable!("runs after a failure are only skipped when an earlier run failed"),
            }
        }
        let metrics = MacroMetrics::from_records(&records, self.num_solutions(), self.true_etas.as_deref());
        Ok(ExperimentOutput {
            records,
            metrics,
            elapsed_secs: start.elapsed().as_secs_f64(),
        })
    }

    /// Writes `runs.csv` and `summary.json` into `dir`.
    pub fn write_outputs(&self, output: &ExperimentOutput, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runs.csv"), runs_csv(&output.records)?)?;
        let summary = Summary {
            config: &self.config,
            sizes: &self.sizes,
            settings: &self.settings,
            solutions: self.num_solutions(),
            true_etas: self.true_etas.as_deref(),
            metrics: &output.metrics,
            threads: self.config.threads.unwrap_or_else(rayon::current_num_threads),
            elapsed_secs: output.elapsed_secs,
        };
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

/// Convenience wrapper: resolve and run a configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Experiment, ExperimentOutput), HarnessError> {
    let exp = Experiment::new(config.clone())?;
    let out = exp.run()?;
    Ok((exp, out))
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    let mut s = String::new();
    for (j, x) in v.iter().enumerate() {
        if j > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("writing to a String");
    }
    s
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// CSV bytes of the per-run records; list fields are space separated.
pub fn runs_csv(records: &[RunRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "covered",
        "best_included",
        "set_size",
        "width",
        "degenerate",
        "selected",
        "lower",
        "upper",
        "radii",
        "bounds",
        "simulations",
    ])?;
    for r in records {
        w.write_record([
            r.run.to_string(),
            opt(r.covered),
            opt(r.best_included),
            r.set_size.to_string(),
            opt(r.width),
            r.degenerate.to_string(),
            join(&r.selected),
            join(&r.lower),
            join(&r.upper),
            join(&r.radii),
            join(&r.bounds),
            r.simulations.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Mean estimates under the true input distributions with common inputs
/// across solutions.
pub fn estimate_true_etas(
    model: &dyn SimModel,
    distributions: &[InputDistribution],
    replications: usize,
    key: StreamKey,
) -> Result<Vec<Estimate>, HarnessError> {
    const CHUNK: usize = 1000;
    if replications < 2 {
        return Err(HarnessError::Config("need at least 2 replications".into()));
    }
    if distributions.len() != model.num_sources() {
        return Err(ModelError::Shape(format!(
            "{} distributions for {} sources",
            distributions.len(),
            model.num_sources()
        ))
        .into());
    }
    let k = model.num_solutions();
    let chunks = replications.div_ceil(CHUNK);
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = vec![0.0; k];
            let mut s2 = vec![0.0; k];
            let mut aux = vec![0.0; model.auxiliary_len()];
            for r in c * CHUNK..((c + 1) * CHUNK).min(replications) {
                let mut rng = key.child(r as u64).stream();
                let inputs: Vec<Vec<f64>> = distributions
                    .iter()
                    .enumerate()
                    .map(|(p, d)| d.sample_n(model.max_inputs(p), &mut rng))
                    .collect();
                model.sample_auxiliary(&mut rng, &mut aux);
                for i in 0..k {
                    let view: Vec<&[f64]> = inputs
                        .iter()
                        .enumerate()
                        .map(|(p, v)| &v[..model.inputs_per_replication(i, p)])
                        .collect();
                    let y = model.evaluate(i, &view, &aux);
                    s[i] += y;
                    s2[i] += y * y;
                }
            }
            (s, s2)
        })
        .collect();
    let n = replications as f64;
    Ok((0..k)
        .map(|i| {
            let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x[i], b + y[i]));
            let mean = s / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
            Estimate {
                mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Bivariate normal sample and the boundary of its EL confidence region.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryData {
    pub observations: Vec<[f64; 2]>,
    pub radius: f64,
    pub boundary: Vec<[f64; 2]>,
    /// `-2 ln R` at the true mean `(0, 0)`.
    pub statistic_at_truth: Option<f64>,
}

pub fn boundary_data(
    n: usize,
    correlation: f64,
    alpha: f64,
    directions: usize,
    key: StreamKey,
) -> Result<BoundaryData, HarnessError> {
    if n < 3 || directions < 3 {
        return Err(HarnessError::Config("need at least 3 observations and 3 directions".into()));
    }
    let corr = CorrelationMatrix::constant(2, correlation)?;
    let samples = sample_mvn(&corr, n, &mut key.stream())?;
    let obs: Vec<Vec<f64>> = samples.rows().map(<[f64]>::to_vec).collect();
    let radius = chi2_quantile(2, 1.0 - alpha)?;
    let boundary = region_boundary(std::slice::from_ref(&obs), radius, &circle_directions(directions))?;
    let statistic_at_truth = el_log_ratio(std::slice::from_ref(&obs), &[0.0, 0.0])?.statistic();
    Ok(BoundaryData {
        observations: obs.iter().map(|y| [y[0], y[1]]).collect(),
        radius,
        boundary: boundary.iter().map(|y| [y[0], y[1]]).collect(),
        statistic_at_truth,
    })
}
