use nalgebra::DMatrix;
use twcv::models::{fit_trend, ForestParams, KrigingSpec, ModelKind, ModelSpec, SemivariogramModel};
use twcv::risk::{
    aggregate, cv_losses, deployment_rmse_of, model_based_rmse, run_replicate, DeploymentDomain, Estimator,
    ExperimentConfig, PreparedSuite, SuiteSettings,
};
use twcv::seed::{derive_rng, rng_from_seed};
use twcv::simfield::{draw_sample, grid_locations, make_world, Design, ScenarioConfig};
use twcv::taskgen::{gen_buffered_loo, gen_loocv, BufferedParams};
use twcv::{Dataset, Location};

fn small_forest() -> ForestParams {
    ForestParams {
        n_trees: 50,
        ..Default::default()
    }
}

fn experiment(design: Design, estimators: Vec<Estimator>, models: Vec<ModelKind>) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioConfig {
            design,
            ..Default::default()
        },
        replicates: 1,
        master_seed: 5,
        estimators,
        models,
        forest: small_forest(),
        ..Default::default()
    }
}

#[test]
fn constant_response_gives_zero_losses() {
    let locs: Vec<Location> = (0..30)
        .map(|i| Location::new((i % 6) as f64 / 5.0, (i / 6) as f64 / 4.0))
        .collect();
    let cov = DMatrix::from_fn(30, 2, |i, j| ((i * (j + 3)) % 7) as f64);
    let names = vec!["x1".to_string(), "x2".to_string()];
    let data = Dataset::new(locs, cov, names.clone(), vec![2.5; 30]).unwrap();
    let tasks = gen_loocv(&data).unwrap();
    for kind in ModelKind::ALL {
        let spec = kind.spec(&names, &small_forest());
        let cv = cv_losses(&spec, &tasks, &data, 1);
        assert!(cv.failures.is_empty(), "{kind}: {:?}", cv.failures);
        assert!(cv.losses.iter().all(|l| l.unwrap().abs() < 1e-12), "{kind}");
    }
}

#[test]
fn trend_limit_loocv_matches_hand_computation() {
    // covariance vanishes between sites, so each prediction is the mean of the other two
    let locs = vec![
        Location::new(0.0, 0.0),
        Location::new(0.5, 0.0),
        Location::new(1.0, 0.0),
    ];
    let data = Dataset::new(locs, DMatrix::zeros(3, 0), vec![], vec![1.0, 3.0, 2.0]).unwrap();
    let spec = ModelSpec::Rk(KrigingSpec {
        fixed_variogram: Some(SemivariogramModel::new(0.0, 1.0, 1e-4).unwrap()),
        ..Default::default()
    });
    let cv = cv_losses(&spec, &gen_loocv(&data).unwrap(), &data, 0);
    let losses: Vec<f64> = cv.losses.iter().map(|l| l.unwrap()).collect();
    for (got, want) in losses.iter().zip([2.25, 2.25, 0.0]) {
        assert!((got - want).abs() < 1e-12, "{losses:?}");
    }
}

#[test]
fn buffered_suite_yields_one_loss_per_task() {
    let cfg = ScenarioConfig::default();
    let world = make_world(&cfg, &mut rng_from_seed(1)).unwrap();
    let sample = draw_sample(&world, &cfg, &mut rng_from_seed(2)).unwrap();
    let tasks = gen_buffered_loo(&sample.dataset, &BufferedParams::default(), &mut rng_from_seed(3)).unwrap();
    let spec = ModelKind::Rf.spec(&["x1".into(), "x2".into()], &small_forest());
    let cv = cv_losses(&spec, &tasks, &sample.dataset, 4);
    assert_eq!(cv.records(&tasks).len(), 500);
}

#[test]
fn interpolating_model_of_the_full_world_has_zero_deployment_risk() {
    let cfg = ScenarioConfig {
        grid_side: 10,
        n: 100,
        ..Default::default()
    };
    let world = make_world(&cfg, &mut rng_from_seed(7)).unwrap();
    let sample = draw_sample(&world, &cfg, &mut rng_from_seed(8)).unwrap();
    let spec = ModelSpec::Rk(KrigingSpec {
        trend_vars: vec!["x1".into(), "x2".into()],
        fixed_variogram: Some(SemivariogramModel::new(0.0, 1.0, 0.1).unwrap()),
        ..Default::default()
    });
    let model = spec.fit(&sample.dataset, 0).unwrap();
    let domain = DeploymentDomain::from_world(&world, sample.dataset.locations(), None).unwrap();
    assert!(deployment_rmse_of(&model, &domain, &world.z).unwrap() < 1e-6);
}

#[test]
fn trend_only_deployment_rmse_is_the_average_residual_sd() {
    let cfg = ScenarioConfig::default();
    let reps = 20;
    let mut total = 0.0;
    for r in 0..reps {
        let world = make_world(&cfg, &mut derive_rng(41, &[r, 0])).unwrap();
        let sample = draw_sample(&world, &cfg, &mut derive_rng(41, &[r, 1])).unwrap();
        let trend = fit_trend(&sample.dataset, &["x1".into(), "x2".into()], false).unwrap();
        let mse: f64 = (0..world.len())
            .map(|k| (world.z[k] - trend.predict(&world.covariate_row(k))).powi(2))
            .sum::<f64>()
            / world.len() as f64;
        total += mse.sqrt();
    }
    // mean variance over the domain is 0.4 + 1.2·0.5 = 1
    let mean = total / reps as f64;
    assert!((mean - 1.0).abs() < 0.1, "mean trend-only RMSE {mean}");
}

#[test]
fn far_field_kriging_variance_is_the_sill() {
    let locs: Vec<Location> = (0..12)
        .map(|i| Location::new(i as f64 * 0.05, (i % 3) as f64 * 0.05))
        .collect();
    let y: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
    let data = Dataset::new(locs, DMatrix::zeros(12, 0), vec![], y).unwrap();
    let spec = KrigingSpec {
        fixed_variogram: Some(SemivariogramModel::new(0.3, 0.7, 0.05).unwrap()),
        ..Default::default()
    };
    let model = twcv::models::fit_rk(&data, &spec).unwrap();
    let far: Vec<Location> = (0..5).map(|i| Location::new(50.0 + i as f64, 50.0)).collect();
    let rmse = model_based_rmse(&model, &far, &vec![vec![]; 5]).unwrap();
    assert!((rmse - 1.0).abs() < 1e-9, "far-field RMSE {rmse}");
}

#[test]
fn kriging_variance_tracks_hrk_deployment_risk() {
    let mut cfg = experiment(Design::Random, vec![Estimator::KrigingVariance], vec![ModelKind::Hrk]);
    cfg.replicates = 20;
    let out = twcv::risk::run_experiment(&cfg).unwrap();
    assert!(out.failures.is_empty());
    let summary = aggregate(&out.results);
    let row = summary
        .iter()
        .find(|r| r.estimator == Estimator::KrigingVariance)
        .unwrap();
    assert_eq!(row.n, 20);
    let (lo, hi) = (row.ci_low.unwrap(), row.ci_high.unwrap());
    assert!(lo <= 0.0 && 0.0 <= hi, "{row:?}");
}

#[test]
fn result_shapes() {
    let out = run_replicate(
        &experiment(Design::Random, vec![Estimator::Loocv], vec![ModelKind::Rf]),
        0,
    )
    .unwrap();
    assert_eq!(out.results.len(), 1);

    let mut cfg = experiment(
        Design::Random,
        Estimator::ALL.to_vec(),
        vec![ModelKind::Rf, ModelKind::Hrk],
    );
    cfg.scenario.grid_side = 30;
    let out = run_replicate(&cfg, 0).unwrap();
    assert_eq!(out.results.len(), 24);
    for model in [ModelKind::Rf, ModelKind::Hrk] {
        let rows: Vec<_> = out.results.iter().filter(|r| r.model == model).collect();
        assert_eq!(rows.len(), 12);
        let na = if model == ModelKind::Rf {
            Estimator::KrigingVariance
        } else {
            Estimator::Oob
        };
        let skipped = rows.iter().find(|r| r.estimator == na).unwrap();
        assert!(skipped.rmse_estimate.is_none());
        assert_eq!(skipped.status, "not applicable");
    }
}

#[test]
fn clustered_loocv_is_optimistic() {
    let cfg = experiment(Design::Clustered, vec![Estimator::Loocv], vec![ModelKind::Rf]);
    let reps = 9;
    let negative = (0..reps)
        .filter(|&r| run_replicate(&cfg, r).unwrap().results[0].error.unwrap() < 0.0)
        .count();
    assert!(negative * 2 > reps, "LOOCV error negative in {negative}/{reps}");
}

#[test]
fn suite_preparation_is_deterministic() {
    let cfg = experiment(
        Design::Random,
        vec![Estimator::Dwcv, Estimator::Twcv],
        vec![ModelKind::Rf],
    );
    let setup = twcv::risk::setup_replicate(&cfg, 0).unwrap();
    let a = PreparedSuite::prepare(
        &setup.sample.dataset,
        &setup.domain,
        &cfg.estimators,
        &SuiteSettings::default(),
        9,
    );
    let b = PreparedSuite::prepare(
        &setup.sample.dataset,
        &setup.domain,
        &cfg.estimators,
        &SuiteSettings::default(),
        9,
    );
    for est in [Estimator::Dwcv, Estimator::Twcv] {
        let (wa, wb) = (a.weights[&est].as_ref().unwrap(), b.weights[&est].as_ref().unwrap());
        assert_eq!(wa.weights, wb.weights);
        assert!(wa.max_margin_residual.unwrap() <= 1e-8);
    }
    assert_eq!(grid_locations(60).len(), setup.domain.len());
}
