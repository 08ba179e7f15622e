mod common;

use bta_core::fixtures::demo_config;
use bta_core::forecast::{
    build_dataset, train, window_at, Action, ForecastModel, ModelKind, Sample, Thresholds,
    TrainParams, Window,
};
use bta_core::market::{generate_market, IndexSpec};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mlp_gradient_matches_central_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_mlp(&mut r, 3, 2, 5);
        let x = random_window(&mut r, 3, 2, 0.05);
        let g = model.gradient(&x.x);
        let h = 1e-6;
        for k in 0..x.x.len() {
            let mut up = x.x.clone();
            let mut down = x.x.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (model.forward(&up) - model.forward(&down)) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn ridge_matches_one_dimensional_least_squares(
        pts in prop::collection::vec((-0.05..0.05f64, -0.05..0.05f64), 5..40),
        ridge in 0.0..0.01f64,
    ) {
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
        prop_assume!(sxx > 1e-6);
        let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
        // The intercept is not penalized, so the centred solution is exact.
        let slope = sxy / (sxx + ridge);
        let intercept = ym - slope * xm;

        let data: Vec<Sample> = pts
            .iter()
            .map(|(x, y)| Sample { window: Window::new(vec![*x], 1, 1, 1).unwrap(), label: *y })
            .collect();
        let hp = TrainParams { ridge, ..TrainParams::default() };
        let model = train(ModelKind::Linear, &data, &hp).unwrap();
        let theta = model.linear_weights().unwrap()[0];
        prop_assert!((theta - slope).abs() <= 1e-8 * slope.abs().max(1.0));
        prop_assert!((model.forward(&[0.0]) - intercept).abs() <= 1e-10);
    }

    #[test]
    fn action_follows_the_thresholds(y in -0.02..0.02f64) {
        let t = Thresholds { sell: -0.006, buy: 0.006 };
        let expected = if y <= -0.006 { Action::Sell } else if y >= 0.006 { Action::Buy } else { Action::Hold };
        prop_assert_eq!(t.action(y), expected);
    }
}

#[test]
fn threshold_boundaries_are_inclusive() {
    let t = Thresholds { sell: -0.01, buy: 0.02 };
    assert_eq!(t.action(-0.01), Action::Sell);
    assert_eq!(t.action(0.02), Action::Buy);
    assert_eq!(t.action(0.0), Action::Hold);
    assert!(Thresholds { sell: 0.0, buy: 0.1 }.validate().is_err());
}

#[test]
fn dataset_labels_are_next_step_index_returns() {
    let cfg = demo_config();
    let meta = cfg.meta();
    let panel = generate_market(&cfg.market_params().unwrap(), &meta).unwrap();
    let spec = IndexSpec::with_base(cfg.index_members(), &meta, panel.row(0), cfg.index.base).unwrap();
    let w = 5;
    let data = build_dataset(&panel, &spec, &meta, w).unwrap();
    assert_eq!(data.len(), panel.n_steps() - 1 - w);
    let idx = spec.resolve(&meta).unwrap();
    for (k, s) in data.iter().enumerate().step_by(17) {
        let t = w + k;
        let expected = (idx.level(panel.row(t + 1)) / idx.level(panel.row(t))).ln();
        assert!((s.label - expected).abs() < 1e-12);
        assert_eq!(s.window, window_at(&panel, t, w).unwrap());
    }
    assert!(build_dataset(&panel, &spec, &meta, panel.n_steps()).is_err());
}

#[test]
fn mlp_training_is_deterministic_per_seed() {
    let mut r = rng(30);
    let data: Vec<Sample> = (0..200)
        .map(|_| {
            let window = random_window(&mut r, 3, 2, 0.01);
            let label = 0.5 * window.x[0] - 0.3 * window.x[5] + 0.001 * normal(&mut r);
            Sample { window, label }
        })
        .collect();
    let hp = TrainParams { epochs: 20, seed: 4, ..TrainParams::default() };
    let a = train(ModelKind::Mlp, &data, &hp).unwrap();
    let b = train(ModelKind::Mlp, &data, &hp).unwrap();
    assert_eq!(a, b);
    let c = train(ModelKind::Mlp, &data, &TrainParams { seed: 5, ..hp }).unwrap();
    assert_ne!(a, c);
    let label_var = data.iter().map(|s| s.label * s.label).sum::<f64>() / 200.0;
    assert!(a.train_mse < label_var);
}

#[test]
fn models_round_trip_through_json() {
    let mut r = rng(31);
    let dir = tempfile::tempdir().unwrap();
    for model in [random_linear(&mut r, 4, 3), random_mlp(&mut r, 4, 3, 6)] {
        let back = ForecastModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(ForecastModel::load(&path).unwrap(), model);
    }
    assert!(ForecastModel::from_json("{\"kind\":\"LINEAR\"}").is_err());
}

#[test]
fn mismatched_window_shapes_are_rejected() {
    let mut r = rng(32);
    let model = random_linear(&mut r, 4, 3);
    let x = random_window(&mut r, 3, 3, 0.01);
    assert!(model.predict_return(&x).is_err());
    let data = vec![
        Sample { window: random_window(&mut r, 2, 2, 0.01), label: 0.0 },
        Sample { window: random_window(&mut r, 3, 2, 0.01), label: 0.0 },
    ];
    assert!(train(ModelKind::Linear, &data, &TrainParams::default()).is_err());
    assert!(train(ModelKind::Linear, &[], &TrainParams::default()).is_err());
}
