use rand::Rng;
use rand_distr::StandardNormal;
use twcv::density_ratio::{forward_bic_logistic, importance_weights};
use twcv::seed::{derive_rng, SimRng};
use twcv::{TargetTaskSet, TaskDescriptor};

const NAMES: [&str; 4] = ["x1", "x2", "x3", "x4"];

fn candidates() -> Vec<String> {
    NAMES.iter().map(|s| s.to_string()).chain(["d".to_string()]).collect()
}

fn draw<R: Rng>(rng: &mut R, n: usize, x1_shift: f64) -> Vec<TaskDescriptor> {
    (0..n)
        .map(|_| TaskDescriptor {
            covariates: (0..4)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    if j == 0 {
                        z + x1_shift
                    } else {
                        z
                    }
                })
                .collect(),
            d: rng.random::<f64>() * 0.1,
        })
        .collect()
}

fn target(descriptors: Vec<TaskDescriptor>) -> TargetTaskSet {
    TargetTaskSet {
        covariate_names: NAMES.iter().map(|s| s.to_string()).collect(),
        descriptors,
    }
}

#[test]
fn identical_distributions_select_the_intercept_only_model() {
    let mut intercept_only = 0;
    for t in 0..100 {
        let mut rng = derive_rng(31, &[t]);
        let val = draw(&mut rng, 500, 0.0);
        let tgt = target(draw(&mut rng, 1000, 0.0));
        let model = forward_bic_logistic(&val, &tgt, &candidates()).unwrap();
        let w = importance_weights(&model, &val).unwrap();
        if model.selected_variables.is_empty() {
            intercept_only += 1;
            assert!(w.as_slice().iter().all(|&x| x == 1.0 / 500.0));
        }
    }
    assert!(intercept_only >= 90, "intercept-only in {intercept_only}/100");
}

#[test]
fn a_shift_in_x1_selects_x1_first() {
    let mut first = 0;
    for t in 0..100 {
        let mut rng = derive_rng(32, &[t]);
        let val = draw(&mut rng, 500, 0.0);
        let tgt = target(draw(&mut rng, 1000, 0.5));
        let model = forward_bic_logistic(&val, &tgt, &candidates()).unwrap();
        if model.selected_variables.first().map(String::as_str) == Some("x1") {
            first += 1;
        }
    }
    assert!(first > 90, "x1 selected first in {first}/100");
}

#[test]
fn two_bin_weights_match_the_density_ratio() {
    // validation 20% in the upper bin, deployment 50%: weight ratio 0.5/0.2 ÷ 0.5/0.8 = 4
    let reps = 200;
    let mut total = 0.0;
    for t in 0..reps {
        let mut rng = derive_rng(33, &[t]);
        let bin = |rng: &mut SimRng, p: f64| TaskDescriptor {
            covariates: vec![f64::from(u8::from(rng.random::<f64>() < p)), 0.0, 0.0, 0.0],
            d: 0.0,
        };
        let val: Vec<TaskDescriptor> = (0..2000).map(|_| bin(&mut rng, 0.2)).collect();
        let tgt = target((0..2000).map(|_| bin(&mut rng, 0.5)).collect());
        let model = forward_bic_logistic(&val, &tgt, &["x1".to_string()]).unwrap();
        let w = importance_weights(&model, &val).unwrap();
        let upper = val.iter().position(|d| d.covariates[0] == 1.0).unwrap();
        let lower = val.iter().position(|d| d.covariates[0] == 0.0).unwrap();
        total += w.as_slice()[upper] / w.as_slice()[lower];
    }
    let mean = total / reps as f64;
    assert!((mean / 4.0 - 1.0).abs() < 0.02, "mean weight ratio {mean}");
}
