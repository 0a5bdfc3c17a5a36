use proptest::prelude::*;

use niouc_core::el::{el_log_ratio, max_linear, weight_bounds_for_radius, AmbiguitySpec, ElRatio, SourceSizes};
use niouc_core::harness::generate_dataset;
use niouc_core::influence::{estimate_influence, surrogate_diff_coeffs};
use niouc_core::model::{InputDataset, QuadraticCase, QuadraticModel, QuadraticModelParams};
use niouc_core::procedure::mcb_from_bounds;
use niouc_core::stats::{chi2_cdf, chi2_quantile, sample_mvn, CorrelationMatrix, StreamKey};

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, f64)> {
    (
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2..8), 1..4),
        prop_oneof![Just(0.0), 0.01f64..20.0],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn maximizer_is_feasible_and_boxed((coeffs, radius) in instance()) {
        let sizes = SourceSizes::new(coeffs.iter().map(Vec::len).collect()).unwrap();
        let spec = AmbiguitySpec::new(sizes.clone(), radius).unwrap();
        let r = max_linear(&spec, &coeffs).unwrap();
        prop_assert!(r.weights.is_feasible(radius));
        let (l, u) = weight_bounds_for_radius(radius);
        prop_assert!(r.weights.within_box(l, u, 1e-9));
        prop_assert!(r.kkt_residual <= 1e-6);
        // never below the uniform weights, never above the per-source maxima
        let uniform: f64 = coeffs.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).sum();
        let top: f64 = coeffs.iter().map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).sum();
        prop_assert!(r.value >= uniform - 1e-9);
        prop_assert!(r.value <= top + 1e-9);
        prop_assert!((r.value - r.weights.dot(&coeffs)).abs() <= 1e-9 * (1.0 + r.value.abs()));
    }

    #[test]
    fn value_monotone_in_radius((coeffs, radius) in instance()) {
        let sizes = SourceSizes::new(coeffs.iter().map(Vec::len).collect()).unwrap();
        let a = max_linear(&AmbiguitySpec::new(sizes.clone(), radius).unwrap(), &coeffs).unwrap();
        let b = max_linear(&AmbiguitySpec::new(sizes, radius + 1.0).unwrap(), &coeffs).unwrap();
        prop_assert!(b.value >= a.value - 1e-9);
    }

    #[test]
    fn weight_bounds_bracket_one(radius in 0.0f64..200.0) {
        let (l, u) = weight_bounds_for_radius(radius);
        prop_assert!(0.0 < l && l <= 1.0 && 1.0 <= u);
        let k = 1.0 + radius / 2.0;
        if radius > 0.0 {
            prop_assert!((l - l.ln() - k).abs() < 1e-9 * k);
            prop_assert!((u - u.ln() - k).abs() < 1e-9 * k);
        }
    }

    #[test]
    fn el_statistic_nonnegative_and_zero_at_mean(
        data in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3..10), 1..3),
        shift in -1.0f64..1.0,
    ) {
        let obs: Vec<Vec<Vec<f64>>> = data.iter().map(|s| s.iter().map(|x| vec![*x]).collect()).collect();
        let mean: f64 = data.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).sum();
        let at_mean = el_log_ratio(&obs, &[mean]).unwrap().statistic();
        if let Some(s) = at_mean {
            prop_assert!(s.abs() < 1e-8);
        }
        match el_log_ratio(&obs, &[mean + shift]).unwrap() {
            ElRatio::Finite { statistic, weights } => {
                prop_assert!(statistic >= 0.0);
                prop_assert!(weights.simplex_residual() < 1e-9);
            }
            ElRatio::Infeasible => {}
        }
    }

    #[test]
    fn mcb_invariants(values in prop::collection::vec(-3.0f64..3.0, 4..37)) {
        let k = (values.len() as f64).sqrt() as usize;
        let table: Vec<Vec<f64>> = (0..k).map(|i| values[i * k..(i + 1) * k].to_vec()).collect();
        let o = mcb_from_bounds(&table).unwrap();
        prop_assert!(!o.selected.is_empty());
        for i in 0..k {
            prop_assert!(o.lower[i] <= 0.0 && o.upper[i] >= 0.0);
            if !o.degenerate {
                prop_assert_eq!(o.upper[i] > 0.0, o.contains(i));
            }
        }
        prop_assert!(o.degenerate == o.upper.iter().all(|u| *u == 0.0));
    }

    #[test]
    fn chi2_round_trip(dof in 1u32..40, prob in 0.01f64..0.99) {
        let q = chi2_quantile(dof, prob).unwrap();
        prop_assert!((chi2_cdf(dof, q) - prob).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn influence_rows_sum_to_zero(seed in 0u64..1000, n in 5usize..30, crn in any::<bool>()) {
        let model = QuadraticModel::case(QuadraticCase::Case1);
        let data = generate_dataset(&model.input_distributions(), &[n, n + 3], &mut StreamKey::new(seed).stream()).unwrap();
        let t = estimate_influence(&model, &data, 20, StreamKey::new(seed + 1), crn).unwrap();
        prop_assert!(t.zero_sum_residual() <= 1e-9 * t.scale());
        let d = surrogate_diff_coeffs(&t, 0, 2).unwrap();
        for (p, row) in d.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                prop_assert_eq!(*v, t.row(0, p)[j] - t.row(2, p)[j]);
            }
        }
    }
}

#[test]
fn bivariate_el_converges_at_moderate_n() {
    let corr = CorrelationMatrix::constant(2, 0.4).unwrap();
    for d in 0..300 {
        let s = sample_mvn(&corr, 500, &mut StreamKey::new(17).child(d).stream()).unwrap();
        let obs: Vec<Vec<f64>> = s.rows().map(<[f64]>::to_vec).collect();
        el_log_ratio(&[obs], &[0.0, 0.0]).unwrap();
    }
}

#[test]
fn custom_quadratic_model_with_unequal_sizes() {
    let model = QuadraticModel::new(QuadraticModelParams {
        a: vec![1.0, 2.0, 3.0],
        c: vec![1.5, 2.5],
        tau2: vec![0.5, 1.0],
        t: 4,
    })
    .unwrap();
    let data = InputDataset::new(vec![vec![1.0, 2.0, 1.4, 1.9], vec![2.2, 3.1, 2.0, 2.8, 2.4, 2.7]]).unwrap();
    let settings = niouc_core::procedure::NioucSettings {
        r1: 60,
        r2: 20,
        ..Default::default()
    };
    let run = niouc_core::procedure::run_niouc(&model, &data, &settings, StreamKey::new(3)).unwrap();
    assert_eq!(run.bounds.pairs.len(), 6);
    for p in &run.bounds.pairs {
        assert!(p.weights.is_feasible(run.diagnostics.radii[p.i]));
    }
}
