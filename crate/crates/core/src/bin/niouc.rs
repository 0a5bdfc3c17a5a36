use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use niouc_core::harness::{boundary_data, estimate_true_etas, runs_csv, Experiment, ExperimentConfig, HarnessError};
use niouc_core::procedure::{influence_table, pair_radii, Variant};
use niouc_core::stats::StreamKey;

#[derive(Parser)]
#[command(name = "niouc", version, about = "Input-uncertainty aware multiple comparison with the best")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full macro-run experiment; writes runs.csv and summary.json.
    Run(Common),
    /// One macro-run with full diagnostics.
    Single {
        #[command(flatten)]
        common: Common,
        /// Macro-run index whose dataset and streams are used.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// EL confidence region boundary for a bivariate normal sample.
    Boundary {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.4)]
        correlation: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 360)]
        directions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo radius for every reference solution on one dataset.
    Quantile {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Simulated true means under the true input distributions.
    Etas {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1_000_000)]
        replications: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    macro_runs: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}; expected niouc, niouc-e, benchmark or benchmark-e"))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.macro_runs {
            cfg.macro_runs = m;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }

    fn experiment(&self) -> Result<Experiment, HarnessError> {
        let exp = Experiment::new(self.config()?)?;
        if let Some(t) = exp.config.threads {
            // Later pools are built explicitly; this covers the single-run commands.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        Ok(exp)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    match cli.command {
        Command::Run(common) => {
            let exp = common.experiment()?;
            let out = exp.run()?;
            exp.write_outputs(&out, &common.out)?;
            Ok(json!({ "out": common.out, "metrics": out.metrics, "elapsed_secs": out.elapsed_secs }))
        }
        Command::Single { common, run } => {
            let exp = common.experiment()?;
            let (data, result) = exp.run_once(run)?;
            std::fs::create_dir_all(&common.out)?;
            result
                .influence
                .write_csv(BufWriter::new(File::create(common.out.join("influence.csv"))?))
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let record = niouc_core::harness::RunRecord::from_run(run, &result, exp.true_etas.as_deref());
            std::fs::write(common.out.join("runs.csv"), runs_csv(std::slice::from_ref(&record))?)?;
            let pairs: Vec<_> = result
                .bounds
                .pairs
                .iter()
                .map(|p| {
                    json!({
                        "i": p.i, "l": p.l, "bound": p.bound, "std_error": p.std_error,
                        "surrogate_value": p.surrogate_value, "theta": p.theta,
                        "iterations": p.solver_iterations, "kkt_residual": p.kkt_residual,
                    })
                })
                .collect();
            let report = json!({
                "run": run,
                "sizes": data.sizes().counts(),
                "settings": exp.settings,
                "outcome": result.outcome,
                "record": record,
                "pairs": pairs,
                "diagnostics": result.diagnostics,
            });
            write_json(&common.out.join("single.json"), &report)?;
            Ok(report)
        }
        Command::Boundary {
            n,
            correlation,
            alpha,
            directions,
            seed,
            out,
        } => {
            let b = boundary_data(n, correlation, alpha, directions, StreamKey::new(seed))?;
            std::fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("boundary.csv"))?;
            w.write_record(["kind", "x", "y"])?;
            for p in &b.observations {
                w.write_record(["observation", &p[0].to_string(), &p[1].to_string()])?;
            }
            for p in &b.boundary {
                w.write_record(["boundary", &p[0].to_string(), &p[1].to_string()])?;
            }
            w.flush()?;
            Ok(json!({ "out": out, "radius": b.radius, "statistic_at_truth": b.statistic_at_truth }))
        }
        Command::Quantile { common, run } => {
            let exp = common.experiment()?;
            let data = exp.dataset(run)?;
            let key = exp.procedure_key(run);
            let mut settings = exp.settings.clone();
            settings.variant = if settings.variant.is_benchmark() {
                Variant::BenchmarkExtension
            } else {
                Variant::Extension
            };
            let table = influence_table(exp.model(), &data, &settings, key)?;
            let radii = pair_radii(&table, &settings, key)?;
            std::fs::create_dir_all(&common.out)?;
            table
                .write_csv(BufWriter::new(File::create(common.out.join("influence.csv"))?))
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let report = json!({
                "run": run,
                "radii": radii.radii,
                "fallbacks": radii.fallbacks,
                "reports": radii.reports,
            });
            write_json(&common.out.join("quantile.json"), &report)?;
            Ok(json!({ "out": common.out, "radii": radii.radii, "fallbacks": radii.fallbacks }))
        }
        Command::Etas { common, replications } => {
            let exp = common.experiment()?;
            let key = StreamKey::new(exp.config.seed).child(u64::MAX);
            let est = estimate_true_etas(exp.model(), &exp.instance.distributions, replications, key)?;
            let report = json!({
                "replications": replications,
                "estimates": est,
                "closed_form": exp.model().analytic().map(|_| exp.model().reference_etas()),
            });
            std::fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("etas.json"), &report)?;
            Ok(report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
