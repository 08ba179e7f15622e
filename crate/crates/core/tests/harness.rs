mod common;

use std::path::PathBuf;
use std::sync::OnceLock;

use bta_core::fixtures::demo_config;
use bta_core::harness::{
    evaluate_success, scale_scenario, sub_seed, Run, RunReport, ScenarioConfig, Stage,
};
use bta_core::Error;
use common::*;
use sha2::{Digest, Sha256};

/// One completed demo run shared by the read-only tests below.
fn demo_run() -> &'static PathBuf {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        run_pipeline(&demo_config(), &dir);
        (tmp, dir)
    })
    .1
}

fn sha256_file(path: &std::path::Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn sub_seeds_follow_the_documented_derivation() {
    for (master, name) in [(0u64, "market"), (1929, "victim/MLP/4/1"), (u64::MAX, "")] {
        let mut h = Sha256::new();
        h.update(master.to_le_bytes());
        h.update(name.as_bytes());
        let d = h.finalize();
        let expected = u64::from_le_bytes(d[..8].try_into().unwrap());
        assert_eq!(sub_seed(master, name), expected);
    }
    assert_ne!(sub_seed(1, "market"), sub_seed(1, "realize"));
    assert_ne!(sub_seed(1, "market"), sub_seed(2, "market"));
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_config();
    let a = Run::new(tmp.path().join("a"), cfg.clone());
    let b = Run::new(tmp.path().join("b"), cfg.clone());
    a.run_stage(Stage::Generate).unwrap();
    b.run_stage(Stage::Generate).unwrap();
    assert_eq!(sha256_file(&a.path("panel.csv")), sha256_file(&b.path("panel.csv")));
    let mut other = cfg;
    other.master_seed += 1;
    let c = Run::new(tmp.path().join("c"), other);
    c.run_stage(Stage::Generate).unwrap();
    assert_ne!(sha256_file(&a.path("panel.csv")), sha256_file(&c.path("panel.csv")));
}

#[test]
fn attack_before_train_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let run = Run::new(tmp.path(), demo_config());
    run.run_stage(Stage::Generate).unwrap();
    match run.run_stage(Stage::Attack) {
        Err(Error::Dependency { stage, .. }) => assert_eq!(stage, "train"),
        other => panic!("expected a dependency error, got {other:?}"),
    }
    let empty = Run::new(tmp.path().join("empty"), demo_config());
    match empty.run_stage(Stage::Train) {
        Err(e @ Error::Dependency { .. }) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected a dependency error, got {other:?}"),
    }
}

#[test]
fn success_flags_are_recomputed_from_artifacts() {
    let dir = demo_run();
    let cfg = demo_config();
    let report = RunReport::load(dir).unwrap();
    let flags = evaluate_success(dir, &cfg).unwrap();
    assert_eq!((flags.success_i, flags.success_ii), (report.success_i, report.success_ii));
    assert_eq!(flags.transfer_rate, report.transfer_rate);
    assert_eq!(flags.max_drawdown, report.max_drawdown);
    assert!(report.success_i && report.success_ii);

    // Independent recount from the raw CSV.
    let flipped = read_csv_column(&dir.join("transfer.csv"), "flipped");
    let rate = flipped.iter().filter(|f| *f == "true").count() as f64 / flipped.len() as f64;
    assert_eq!(rate, flags.transfer_rate);

    let mut zero = cfg.clone();
    zero.success.transfer_fraction = 0.0;
    zero.success.drop_pct = 0.0;
    let z = evaluate_success(dir, &zero).unwrap();
    assert!(z.success_i && z.success_ii);

    let mut impossible = cfg.clone();
    impossible.success.drop_pct = 1.01;
    assert!(!evaluate_success(dir, &impossible).unwrap().success_ii);
}

#[test]
fn success_needs_the_feedback_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(
        evaluate_success(tmp.path(), &demo_config()),
        Err(Error::Dependency { .. })
    ));
}

#[test]
fn rerunning_a_stage_changes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("copy");
    std::fs::create_dir_all(&dir).unwrap();
    for (name, bytes) in artifact_bytes(demo_run()) {
        std::fs::write(dir.join(name), bytes).unwrap();
    }
    let before = artifact_bytes(&dir);
    let run = Run::new(&dir, demo_config());
    run.run_stage(Stage::Transfer).unwrap();
    run.run_stage(Stage::Report).unwrap();
    assert_eq!(artifact_bytes(&dir), before);
    assert!(run.timings().unwrap().contains_key("transfer"));
}

#[test]
fn report_lists_every_stage() {
    let report = RunReport::load(demo_run()).unwrap();
    for stage in &Stage::ALL[..7] {
        let files = &report.artifacts[stage.name()];
        assert!(!files.is_empty());
        for f in files {
            assert!(demo_run().join(f).exists(), "{f}");
        }
    }
    assert_eq!(report.config_hash, demo_config().hash12().unwrap());
}

#[test]
fn validation_errors_carry_key_paths() {
    let mut cfg = demo_config();
    cfg.attack.eps = -1.0;
    match cfg.validate() {
        Err(Error::Validation { key, .. }) => assert_eq!(key, "attack.eps"),
        other => panic!("{other:?}"),
    }
    let mut cfg = demo_config();
    cfg.victims.window_lens.push(99);
    match cfg.validate() {
        Err(Error::Validation { key, .. }) => assert_eq!(key, "victims.window_lens[4]"),
        other => panic!("{other:?}"),
    }
    let mut cfg = demo_config();
    cfg.stocks[3].ticker = cfg.stocks[0].ticker.clone();
    match cfg.validate() {
        Err(Error::Validation { key, .. }) => assert_eq!(key, "stocks[3].ticker"),
        other => panic!("{other:?}"),
    }
    let text = bta_core::fixtures::DEMO_TOML.replace("[index]", "[index]\nbogus = 1");
    assert!(matches!(ScenarioConfig::from_toml(&text), Err(Error::Validation { .. })));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = demo_config();
    let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash12().unwrap(), cfg.hash12().unwrap());
}

#[test]
fn unit_factor_only_adds_metadata() {
    let cfg = demo_config();
    let mut scaled = scale_scenario(&cfg, 1.0).unwrap();
    assert_eq!(scaled.scale.as_ref().unwrap().factor, 1.0);
    scaled.scale = None;
    assert_eq!(scaled, cfg);
}

#[test]
fn half_factor_keeps_the_largest_caps() {
    let cfg = demo_config();
    let scaled = scale_scenario(&cfg, 0.5).unwrap();
    assert_eq!(scaled.n_stocks(), 5);
    let mut caps: Vec<(f64, String)> = cfg
        .stocks
        .iter()
        .map(|s| (s.shares_outstanding * s.initial_price, s.ticker.clone()))
        .collect();
    caps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut expected: Vec<String> = caps[..5].iter().map(|c| c.1.clone()).collect();
    let mut got = scaled.tickers();
    expected.sort();
    got.sort();
    assert_eq!(got, expected);
    assert_eq!(scaled.attack.budget, cfg.attack.budget * 0.5);
    assert_eq!(scaled.master_seed, cfg.master_seed);
    assert!(scaled.validate().is_ok());

    assert!(matches!(scale_scenario(&cfg, 0.0), Err(Error::Validation { .. })));
    assert!(matches!(scale_scenario(&cfg, 1.5), Err(Error::Validation { .. })));
}

#[test]
fn scaled_demo_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scale_scenario(&demo_config(), 0.5).unwrap();
    let run = Run::new(tmp.path(), cfg);
    let report = run.run_all().unwrap();
    println!(
        "scaled demo: transfer {} vs clean {}, drawdown {:.4}, flags ({}, {})",
        report.transfer_rate, report.clean_false_sell_rate, report.max_drawdown, report.success_i, report.success_ii
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert!(json["success_i"].is_boolean() && json["success_ii"].is_boolean());
}
