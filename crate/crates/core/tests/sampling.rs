//! Sampled data against the analytic accuracy functions and CLT bounds.

use samlab_core::attacks::{robust_accuracy, AttackBudget};
use samlab_core::data::{load_delimited, sample_feature_model, sample_mixture2d, write_delimited, Blob, DelimitedSchema, Task};
use samlab_core::models::{accuracy, LinearModel};
use samlab_core::theory::{adv_accuracy, clean_accuracy, wr_standard, FeatureModelSpec};

/// Empirical accuracy of `sgn(w1 x1 + sum_{i>1} (x_i - eps y))` and its
/// standard error.
fn empirical(spec: &FeatureModelSpec, w1: f64, eps: f64, samples: usize, seed: u64) -> (f64, f64) {
    let data = sample_feature_model(spec, samples, seed).unwrap();
    let mut hits = 0usize;
    for (i, &y) in data.y.iter().enumerate() {
        let row = data.x.row(i);
        let y = y as f64;
        let score = w1 * row[0] + row[1..].iter().map(|v| v - eps * y).sum::<f64>();
        if score * y > 0.0 {
            hits += 1;
        }
    }
    let acc = hits as f64 / samples as f64;
    (acc, (acc * (1.0 - acc) / samples as f64).sqrt())
}

#[test]
fn clean_accuracy_matches_monte_carlo() {
    let spec = FeatureModelSpec::new(0.9, 0.1, 10).unwrap();
    let w1 = 10.986;
    let (acc, se) = empirical(&spec, w1, 0.0, 1_000_000, 1);
    let exact = clean_accuracy(w1, &spec).unwrap();
    assert!((acc - exact).abs() < 3.0 * se, "{acc} vs {exact} (se {se})");
}

#[test]
fn adversarial_accuracy_matches_worst_case_monte_carlo() {
    let spec = FeatureModelSpec::new(0.9, 0.1, 10).unwrap();
    let (acc, se) = empirical(&spec, 2.0, 0.05, 1_000_000, 2);
    let exact = adv_accuracy(2.0, &spec, 0.05).unwrap();
    assert!((acc - exact).abs() < 3.0 * se, "{acc} vs {exact} (se {se})");
}

#[test]
fn pgd_on_a_linear_model_reaches_the_analytic_worst_case() {
    let spec = FeatureModelSpec::new(0.9, 0.1, 10).unwrap();
    let w1 = 2.0;
    let mut w = vec![1.0; spec.dim()];
    w[0] = w1;
    let model = LinearModel::from_weights(w).unwrap();
    let data = sample_feature_model(&spec, 200_000, 8).unwrap();
    let mut budget = AttackBudget::linf(0.05, 10);
    budget.frozen_features = vec![0];
    let acc = robust_accuracy(&model, &data, &budget, 0).unwrap();
    let exact = adv_accuracy(w1, &spec, 0.05).unwrap();
    let se = (exact * (1.0 - exact) / data.len() as f64).sqrt();
    assert!((acc - exact).abs() < 3.0 * se, "{acc} vs {exact} (se {se})");
}

#[test]
fn feature_model_moments() {
    let spec = FeatureModelSpec::new(0.75, 0.2, 4).unwrap();
    let samples = 100_000;
    let data = sample_feature_model(&spec, samples, 5).unwrap();
    let nf = samples as f64;
    let mean_y = data.y.iter().map(|&y| y as f64).sum::<f64>() / nf;
    assert!(mean_y.abs() < 3.0 / nf.sqrt());
    let mean_x1y = (0..samples).map(|i| data.x.row(i)[0] * data.y[i] as f64).sum::<f64>() / nf;
    let sd = (1.0 - (2.0 * spec.p - 1.0).powi(2)).sqrt();
    assert!((mean_x1y - (2.0 * spec.p - 1.0)).abs() < 3.0 * sd / nf.sqrt());
    for j in 1..spec.dim() {
        // x_j y ~ N(eta, 1).
        let vals: Vec<f64> = (0..samples).map(|i| data.x.row(i)[j] * data.y[i] as f64).collect();
        let m = vals.iter().sum::<f64>() / nf;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (nf - 1.0);
        assert!((m - spec.eta).abs() < 4.0 / nf.sqrt(), "feature {j} mean {m}");
        assert!((v - 1.0).abs() < 4.0 * (2.0 / nf).sqrt(), "feature {j} variance {v}");
    }
}

#[test]
fn standard_weight_classifier_is_correct_on_typical_points() {
    let spec = FeatureModelSpec::new(0.9, 0.1, 10).unwrap();
    let w1 = wr_standard(&spec).unwrap().w1;
    assert!(w1 > -spec.eta * spec.n as f64);
    let mut w = vec![1.0; spec.dim()];
    w[0] = w1;
    let model = LinearModel::from_weights(w).unwrap();
    let mut x = vec![spec.eta; spec.dim()];
    x[0] = 1.0;
    let x = samlab_core::tensor::Tensor::matrix(1, spec.dim(), x).unwrap();
    assert_eq!(accuracy(&model, &x, &[1]).unwrap(), 1.0);
}

#[test]
fn mixture_class_means_match_centers() {
    let blobs = [
        Blob { center: [2.0, -1.0], class: 0 },
        Blob { center: [-3.0, 0.5], class: 1 },
    ];
    let spread = 0.7;
    let samples = 40_000;
    let data = sample_mixture2d(&blobs, spread, samples, 9).unwrap();
    let classes = data.classes();
    for blob in &blobs {
        let rows: Vec<&[f64]> = (0..samples).filter(|&i| classes[i] == blob.class).map(|i| data.x.row(i)).collect();
        assert_eq!(rows.len(), samples / 2);
        let bound = 3.0 * spread / (rows.len() as f64).sqrt();
        for k in 0..2 {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
            assert!((m - blob.center[k]).abs() < bound);
        }
    }
}

#[test]
fn distant_mixture_is_linearly_separable() {
    let blobs = [
        Blob { center: [10.0, 10.0], class: 1 },
        Blob { center: [-10.0, -10.0], class: 0 },
    ];
    let data = sample_mixture2d(&blobs, 1.0, 2000, 1).unwrap();
    let probe = LinearModel::from_weights(vec![1.0, 1.0]).unwrap();
    assert_eq!(accuracy(&probe, &data.x, &data.classes()).unwrap(), 1.0);
    assert!(sample_mixture2d(&blobs, 1.0, 0, 1).is_err());
    assert!(sample_mixture2d(&blobs, 0.0, 10, 1).is_err());
}

#[test]
fn written_datasets_reload_exactly() {
    let spec = FeatureModelSpec::new(0.6, 0.05, 3).unwrap();
    let data = sample_feature_model(&spec, 300, 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_delimited(&data, &path).unwrap();
    let back = load_delimited(&path, DelimitedSchema { features: 4, task: Task::Binary }).unwrap();
    assert_eq!(back.x, data.x);
    assert_eq!(back.y, data.y);
    assert_eq!(back.meta.source.as_deref(), Some(path.as_path()));
}
