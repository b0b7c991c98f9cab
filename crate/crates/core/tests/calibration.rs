use proptest::prelude::*;
use twcv::calibration::{
    collapse_weights, ess, make_bins, max_margin_residual, rake, shrink, EncodedTasks, MarginVector, RakeOptions,
    WeightVector,
};
use twcv::taskgen::TaskSet;
use twcv::{TargetTaskSet, TaskDescriptor, ValidationTask};

/// A feasible raking instance: margins are those of a positive weighting
/// of the tasks, so an exact solution exists.
fn instance() -> impl Strategy<Value = (EncodedTasks, MarginVector)> {
    (2usize..=5, 50usize..=400)
        .prop_flat_map(|(vars, n)| {
            (
                prop::collection::vec(2usize..=10, vars),
                Just(n),
                prop::collection::vec(0.2f64..5.0, n),
            )
        })
        .prop_flat_map(|(n_bins, n, w)| {
            let codes: Vec<_> = n_bins.iter().map(|&nb| prop::collection::vec(0..nb, n)).collect();
            (Just(n_bins), codes, Just(w))
        })
        .prop_map(|(n_bins, codes, w)| {
            let total: f64 = w.iter().sum();
            let margins = codes
                .iter()
                .zip(&n_bins)
                .map(|(c, &nb)| {
                    let mut m = vec![0.0; nb];
                    for (&b, wi) in c.iter().zip(&w) {
                        m[b] += wi / total;
                    }
                    m
                })
                .collect();
            (EncodedTasks { n_bins, codes }, MarginVector { margins })
        })
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 2..60).prop_filter("positive total", |w| w.iter().sum::<f64>() > 1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raking_meets_feasible_margins((tasks, margins) in instance()) {
        let w = rake(&tasks, &margins, &RakeOptions::default()).unwrap();
        prop_assert!(max_margin_residual(w.as_slice(), &tasks, &margins) <= 1e-8);
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn shrinkage_raises_ess(raw in weights(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let w = WeightVector::from_raw(raw).unwrap();
        let e_lo = ess(shrink(&w, lo).unwrap().as_slice()).unwrap();
        let e_hi = ess(shrink(&w, hi).unwrap().as_slice()).unwrap();
        prop_assert!(e_hi >= e_lo - 1e-9 * e_lo);
        let shrunk = shrink(&w, hi).unwrap();
        prop_assert!((shrunk.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ess_lies_between_one_and_n(raw in weights()) {
        let e = ess(&raw).unwrap();
        prop_assert!(e >= 1.0 - 1e-12 && e <= raw.len() as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn collapsing_conserves_mass(targets in prop::collection::vec(0usize..20, 1..100), raw in weights()) {
        let n = targets.len().min(raw.len());
        let tasks = TaskSet {
            tasks: (0..n)
                .map(|i| ValidationTask {
                    task_id: i,
                    target_index: targets[i],
                    train_indices: vec![],
                    descriptor: TaskDescriptor { covariates: vec![], d: 0.0 },
                })
                .collect(),
            generator_label: "test".into(),
            generator_params: vec![],
        };
        prop_assume!(raw[..n].iter().sum::<f64>() > 1e-6);
        let w = WeightVector::from_raw(raw[..n].to_vec()).unwrap();
        let collapsed = collapse_weights(&tasks, &w, 20).unwrap();
        prop_assert!((collapsed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bin_assignment_is_monotone(values in prop::collection::vec(-5.0f64..5.0, 10..200), probe in prop::collection::vec(-6.0f64..6.0, 2..20)) {
        let target = TargetTaskSet {
            covariate_names: vec!["x1".into()],
            descriptors: values.iter().map(|&v| TaskDescriptor { covariates: vec![v], d: 0.0 }).collect(),
        };
        let Ok(scheme) = make_bins(&target, &["x1".to_string()], 5) else { return Ok(()) };
        let Some(bins) = scheme.variables.first() else { return Ok(()) };
        let mut p = probe.clone();
        p.sort_by(f64::total_cmp);
        let codes: Vec<usize> = p.iter().map(|&v| bins.bin_of(v)).collect();
        prop_assert!(codes.windows(2).all(|c| c[0] <= c[1]));
        prop_assert!(codes.iter().all(|&c| c < bins.n_bins()));
    }
}

#[test]
fn collapsed_weights_of_buffered_tasks_sum_to_one() {
    use twcv::seed::rng_from_seed;
    use twcv::simfield::{draw_sample, make_world, ScenarioConfig};
    use twcv::taskgen::{gen_buffered_loo, BufferedParams};
    let cfg = ScenarioConfig::default();
    let world = make_world(&cfg, &mut rng_from_seed(1)).unwrap();
    let sample = draw_sample(&world, &cfg, &mut rng_from_seed(2)).unwrap();
    let tasks = gen_buffered_loo(&sample.dataset, &BufferedParams::default(), &mut rng_from_seed(3)).unwrap();
    assert_eq!(tasks.len(), 500);
    let raw: Vec<f64> = (0..500).map(|i| 1.0 + (i % 7) as f64).collect();
    let w = WeightVector::from_raw(raw).unwrap();
    let collapsed = collapse_weights(&tasks, &w, 200).unwrap();
    assert_eq!(collapsed.len(), 200);
    assert!((collapsed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
