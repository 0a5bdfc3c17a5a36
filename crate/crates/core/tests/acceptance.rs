//! Acceptance criteria. One PASS/FAIL line per criterion; exits nonzero if
//! any criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use niouc_core::el::{el_log_ratio, max_linear, weight_bounds, AmbiguitySpec, SourceSizes};
use niouc_core::extension::{estimate_extension_quantile, max_square_draws, upper_quantile, DEFAULT_DRAWS};
use niouc_core::harness::{generate_dataset, Experiment, ExperimentConfig, ModelSpec, Preset};
use niouc_core::influence::{analytic_influence, estimate_influence, InfluenceOrigin, InfluenceTable};
use niouc_core::model::{AnalyticModel, QuadraticCase, QuadraticModel, SimModel, TandemQueueParams};
use niouc_core::procedure::Variant;
use niouc_core::stats::{chi2_quantile, sample_mvn, CorrelationMatrix, StreamKey};

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String, start: Instant) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {name}: {detail} ({:.1}s)", start.elapsed().as_secs_f64());
        if !ok {
            self.failures += 1;
        }
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Log-barrier interior point method for
/// `max cᵀw  s.t.  -2 Σ ln(n_p w_pj) <= B,  Σ_j w_pj = 1`.
fn barrier_oracle(counts: &[usize], radius: f64, coeffs: &[Vec<f64>]) -> f64 {
    let dim: usize = counts.iter().sum();
    let m = counts.len();
    let c = DVector::from_iterator(dim, coeffs.iter().flatten().copied());
    let nn: DVector<f64> = DVector::from_iterator(dim, counts.iter().flat_map(|&n| std::iter::repeat_n(n as f64, n)));
    let mut a = DMatrix::zeros(m, dim);
    let mut off = 0;
    for (p, &n) in counts.iter().enumerate() {
        for j in 0..n {
            a[(p, off + j)] = 1.0;
        }
        off += n;
    }
    let mut w = nn.map(|n| 1.0 / n);
    let slack = |w: &DVector<f64>| radius + 2.0 * w.iter().zip(nn.iter()).map(|(x, n)| (n * x).ln()).sum::<f64>();
    let objective = |w: &DVector<f64>, t: f64| -t * c.dot(w) - slack(w).ln();
    let mut t = 1.0;
    while t < 1e12 {
        for _ in 0..200 {
            let s = slack(&w);
            let ds = w.map(|x| 2.0 / x);
            let grad = -t * &c - &ds / s;
            let mut h = &ds * ds.transpose() / (s * s);
            for d in 0..dim {
                h[(d, d)] += 2.0 / (w[d] * w[d] * s);
            }
            let mut kkt = DMatrix::zeros(dim + m, dim + m);
            kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
            kkt.view_mut((0, dim), (dim, m)).copy_from(&a.transpose());
            kkt.view_mut((dim, 0), (m, dim)).copy_from(&a);
            let mut rhs = DVector::zeros(dim + m);
            rhs.rows_mut(0, dim).copy_from(&(-&grad));
            let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
            let step = sol.rows(0, dim).into_owned();
            let decrement = -grad.dot(&step);
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let f0 = objective(&w, t);
            let mut s_len = 1.0;
            loop {
                let cand = &w + s_len * &step;
                if cand.iter().all(|x| *x > 0.0) && slack(&cand) > 0.0 && objective(&cand, t) <= f0 - 0.25 * s_len * decrement {
                    w = cand;
                    break;
                }
                s_len *= 0.5;
                if s_len < 1e-16 {
                    break;
                }
            }
            if s_len < 1e-16 {
                break;
            }
        }
        t *= 8.0;
    }
    c.dot(&w)
}

fn criterion_1(rep: &mut Report) {
    let start = Instant::now();
    let mut rng = StreamKey::new(101).stream();
    let radii = [0.5, 2.706, 4.605];
    let (mut worst_gap, mut worst_kkt, mut box_ok) = (0.0f64, 0.0f64, true);
    for inst in 0..200 {
        let m = 1 + (rng.uniform() * 3.0) as usize;
        let counts: Vec<usize> = (0..m).map(|_| 2 + (rng.uniform() * 5.0) as usize).collect();
        let coeffs: Vec<Vec<f64>> = counts.iter().map(|&n| (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect()).collect();
        let radius = radii[inst % 3];
        let spec = AmbiguitySpec::new(SourceSizes::new(counts.clone()).unwrap(), radius).unwrap();
        match max_linear(&spec, &coeffs) {
            Ok(r) => {
                let oracle = barrier_oracle(&counts, radius, &coeffs);
                worst_gap = worst_gap.max((r.value - oracle).abs());
                worst_kkt = worst_kkt.max(r.kkt_residual);
                let (l, u) = weight_bounds(&spec);
                box_ok &= r.weights.within_box(l, u, 1e-9);
            }
            Err(_) => worst_kkt = f64::INFINITY,
        }
    }
    let ok = worst_gap <= 1e-5 && worst_kkt <= 1e-6 && box_ok;
    rep.check(
        1,
        "EL solver oracle equivalence",
        ok,
        format!("max |value - oracle| = {worst_gap:.2e} (<= 1e-5), max KKT = {worst_kkt:.2e} (<= 1e-6), box bounds {box_ok}"),
        start,
    );
}

fn criterion_2(rep: &mut Report) {
    let start = Instant::now();
    let corr = CorrelationMatrix::constant(2, 0.4).unwrap();
    let crit = chi2_quantile(2, 0.95).unwrap();
    let datasets = 2000;
    let mut hits = 0;
    for d in 0..datasets {
        let mut rng = StreamKey::new(202).child(d).stream();
        let s = sample_mvn(&corr, 500, &mut rng).unwrap();
        let obs: Vec<Vec<f64>> = s.rows().map(<[f64]>::to_vec).collect();
        let stat = el_log_ratio(&[obs], &[0.0, 0.0]).unwrap().statistic();
        if stat.is_some_and(|x| x <= crit) {
            hits += 1;
        }
    }
    let freq = hits as f64 / datasets as f64;
    rep.check(
        2,
        "EL region coverage (q=2, rho=0.4, n=500)",
        within(freq, 0.95, 0.02),
        format!("coverage {freq:.4} (0.95 +/- 0.02)"),
        start,
    );
}

struct Observed {
    coverage: f64,
    inclusion: f64,
    set_size: f64,
    width: f64,
    per_solution: Vec<f64>,
}

fn observe(cfg: ExperimentConfig) -> Observed {
    let exp = Experiment::new(cfg).unwrap();
    let out = exp.run().unwrap();
    let m = out.metrics;
    Observed {
        coverage: m.mcb_coverage.unwrap().mean,
        inclusion: m.inclusion_prob.unwrap().mean,
        set_size: m.mean_set_size.mean,
        width: m.mean_width.unwrap().mean,
        per_solution: m.per_solution_inclusion.iter().map(|e| e.mean).collect(),
    }
}

fn quadratic(case: QuadraticCase, n: usize, variant: Variant, runs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelSpec::Quadratic { case },
        n,
        alpha: 0.1,
        variant,
        macro_runs: runs,
        seed,
        ..Default::default()
    }
}

fn criterion_3(rep: &mut Report) {
    let start = Instant::now();
    let a = observe(quadratic(QuadraticCase::Case1, 100, Variant::Benchmark, 1000, 303));
    let b = observe(quadratic(QuadraticCase::Case1, 100, Variant::BenchmarkExtension, 1000, 303));
    // widths are reported in thousands
    let ok = within(a.coverage, 0.973, 0.02)
        && within(a.inclusion, 0.999, 0.005)
        && within(a.set_size, 2.514, 0.10)
        && within(a.width / 1000.0, 14.9, 0.8)
        && within(b.coverage, 0.910, 0.02)
        && within(b.inclusion, 0.998, 0.005)
        && within(b.set_size, 2.169, 0.10)
        && within(b.width / 1000.0, 11.4, 0.8);
    rep.check(
        3,
        "Case-1 benchmark, n=100",
        ok,
        format!(
            "NIOU-C {:.3}/{:.3}/{:.3}/{:.2} (0.973+/-0.02, 0.999+/-0.005, 2.514+/-0.10, 14.9+/-0.8); \
             NIOU-C:E {:.3}/{:.3}/{:.3}/{:.2} (0.910+/-0.02, 0.998+/-0.005, 2.169+/-0.10, 11.4+/-0.8)",
            a.coverage,
            a.inclusion,
            a.set_size,
            a.width / 1000.0,
            b.coverage,
            b.inclusion,
            b.set_size,
            b.width / 1000.0
        ),
        start,
    );
}

fn criterion_4(rep: &mut Report) {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        r1: 400,
        r2: 100,
        ..quadratic(QuadraticCase::Case1, 100, Variant::Standard, 500, 404)
    };
    let a = observe(cfg);
    let ok = within(a.coverage, 0.913, 0.035) && within(a.inclusion, 0.996, 0.01);
    rep.check(
        4,
        "Case-1 simulated, n=100, (R1,R2)=(400,100)",
        ok,
        format!("MCB {:.3} (0.913 +/- 0.035), P(best in set) {:.3} (0.996 +/- 0.01)", a.coverage, a.inclusion),
        start,
    );
}

fn criterion_5(rep: &mut Report) {
    let start = Instant::now();
    let a = observe(quadratic(QuadraticCase::Case3, 400, Variant::Benchmark, 1000, 505));
    let b = observe(quadratic(QuadraticCase::Case3, 400, Variant::BenchmarkExtension, 1000, 505));
    let ok = a.coverage >= 0.99 && within(b.coverage, 0.908, 0.025);
    rep.check(
        5,
        "Case-3 benchmark, n=400",
        ok,
        format!("NIOU-C MCB {:.3} (>= 0.99), NIOU-C:E MCB {:.3} (0.908 +/- 0.025)", a.coverage, b.coverage),
        start,
    );
}

fn criterion_6(rep: &mut Report) {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        model: ModelSpec::TandemQueue(TandemQueueParams::default()),
        n: 100,
        preset: Some(Preset::BudgetParity),
        variant: Variant::Standard,
        macro_runs: 100,
        seed: 606,
        ..Default::default()
    };
    let a = observe(cfg);
    let others = [0, 1, 2, 3, 5, 6];
    let worst_other = others.iter().map(|&i| a.per_solution[i]).fold(0.0, f64::max);
    let ok = a.per_solution[4] >= 0.95 && worst_other <= 0.05;
    rep.check(
        6,
        "Queue, exponential, n=100, budget parity, 100 runs",
        ok,
        format!(
            "inclusion of solution 5 {:.3} (>= 0.95), max over {{1,2,3,4,6,7}} {:.3} (<= 0.05)",
            a.per_solution[4], worst_other
        ),
        start,
    );
}

/// `P(X >= hits)` for `X ~ Binomial(trials, 1/2)`.
fn sign_test_p(hits: usize, trials: usize) -> f64 {
    let mut ln_c = 0.0f64;
    let mut total = 0.0;
    for x in 0..=trials {
        if x > 0 {
            ln_c += ((trials - x + 1) as f64).ln() - (x as f64).ln();
        }
        if x >= hits {
            total += (ln_c - trials as f64 * std::f64::consts::LN_2).exp();
        }
    }
    total
}

fn criterion_7(rep: &mut Report) {
    let start = Instant::now();
    let model = QuadraticModel::case(QuadraticCase::Case1);
    let dists = model.input_distributions();
    let mut worst_sum = 0.0f64;
    for seed in 0..20 {
        let data = generate_dataset(&dists, &[100, 100], &mut StreamKey::new(700 + seed).stream()).unwrap();
        for crn in [true, false] {
            let t = estimate_influence(&model, &data, 100, StreamKey::new(seed), crn).unwrap();
            worst_sum = worst_sum.max(t.zero_sum_residual() / t.scale());
        }
    }

    let data = generate_dataset(&dists, &[50, 50], &mut StreamKey::new(777).stream()).unwrap();
    let repeats = 50;
    let tables = |crn: bool| -> Vec<InfluenceTable> {
        (0..repeats)
            .map(|r| estimate_influence(&model, &data, 200, StreamKey::new(9000).child(r), crn).unwrap())
            .collect()
    };
    let (with, without) = (tables(true), tables(false));
    let diff_var = |ts: &[InfluenceTable], i: usize, l: usize, p: usize, j: usize| {
        let v: Vec<f64> = ts.iter().map(|t| t.row(i, p)[j] - t.row(l, p)[j]).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (mut wins, mut trials) = (0, 0);
    for (i, l) in [(0, 1), (0, 2), (1, 2)] {
        for p in 0..2 {
            for j in 0..50 {
                trials += 1;
                if diff_var(&with, i, l, p, j) < diff_var(&without, i, l, p, j) {
                    wins += 1;
                }
            }
        }
    }
    let p_value = sign_test_p(wins, trials);
    let ok = worst_sum <= 1e-9 && p_value < 0.01;
    rep.check(
        7,
        "Influence estimator identities",
        ok,
        format!(
            "max zero-sum residual / scale {worst_sum:.1e} (<= 1e-9); CRN lower variance on {wins}/{trials} coordinates, sign-test p = {p_value:.1e} (< 0.01)"
        ),
        start,
    );
}

fn criterion_8(rep: &mut Report) {
    let start = Instant::now();
    let alpha = 0.1;
    let mut rng = StreamKey::new(808).stream();
    let values: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| vec![(0..60).map(|_| rng.uniform() - 0.5).collect()])
        .collect();
    let t = InfluenceTable::new(values, InfluenceOrigin::Analytic).unwrap();
    let q2 = estimate_extension_quantile(&t, 0, alpha, DEFAULT_DRAWS, &mut StreamKey::new(809).stream())
        .unwrap()
        .quantile;
    let ok_a = within(q2, 2.706, 0.08);

    let (sorted, _) = max_square_draws(&CorrelationMatrix::identity(9), DEFAULT_DRAWS, &mut StreamKey::new(810).stream()).unwrap();
    let q9 = upper_quantile(&sorted, alpha);
    // max of 9 independent χ²₁ has CDF F(q)^9
    let exact = chi2_quantile(1, (1.0 - alpha).powf(1.0 / 9.0)).unwrap();
    let ok_b = within(q9, exact, 0.1);

    let model = QuadraticModel::case(QuadraticCase::Case3);
    let chi = chi2_quantile(9, 1.0 - alpha).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let data = generate_dataset(&model.input_distributions(), &[100, 100], &mut StreamKey::new(820 + seed).stream()).unwrap();
        let table = analytic_influence(&model as &dyn AnalyticModel, model.num_solutions(), &data);
        for i in 0..10 {
            let q = estimate_extension_quantile(&table, i, alpha, DEFAULT_DRAWS, &mut StreamKey::new(seed).child(i as u64).stream())
                .unwrap()
                .quantile;
            worst = worst.max(q);
        }
    }
    let ok_c = worst < chi;
    rep.check(
        8,
        "Extension quantile oracles",
        ok_a && ok_b && ok_c,
        format!(
            "k=2: {q2:.4} (2.706 +/- 0.08); identity k-1=9: {q9:.4} vs {exact:.4} (+/- 0.1); k=10 max over 5 seeds {worst:.3} < {chi:.3}"
        ),
        start,
    );
}

fn criterion_9(rep: &mut Report) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("det.toml");
    std::fs::write(&cfg, "n = 40\nr1 = 80\nr2 = 20\nquantile_draws = 4000\n[model]\nkind = \"quadratic\"\ncase = \"case3\"\n").unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 4, 16] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_niouc"))
            .args(["run", "--seed", "99", "--macro-runs", "12", "--variant", "niouc-e"])
            .arg("--threads")
            .arg(threads.to_string())
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        outputs.push(status.status.success().then(|| std::fs::read(out.join("runs.csv")).unwrap()));
    }
    let ok = outputs.iter().all(Option::is_some) && outputs[0] == outputs[1] && outputs[1] == outputs[2];
    rep.check(
        9,
        "Determinism of runs.csv across 1/4/16 threads",
        ok,
        format!("identical bytes: {ok}"),
        start,
    );
}

fn main() -> ExitCode {
    let mut rep = Report { failures: 0 };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep);
    criterion_7(&mut rep);
    criterion_8(&mut rep);
    criterion_9(&mut rep);
    if rep.failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", rep.failures);
        ExitCode::FAILURE
    }
}
