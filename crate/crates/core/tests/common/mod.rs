#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use bta_core::forecast::{ForecastModel, Window};
use bta_core::harness::{Run, ScenarioConfig, TIMINGS_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_linear(rng: &mut ChaCha8Rng, w: usize, n: usize) -> ForecastModel {
    let theta = (0..w * n).map(|_| normal(rng)).collect();
    ForecastModel::linear(w, n, theta, 0.1 * normal(rng)).unwrap()
}

pub fn random_mlp(rng: &mut ChaCha8Rng, w: usize, n: usize, h: usize) -> ForecastModel {
    let d = w * n;
    let scale = 1.0 / (d as f64).sqrt();
    let u = (0..h * d).map(|_| scale * normal(rng)).collect();
    let c = (0..h).map(|_| 0.5 * normal(rng)).collect();
    let v = (0..h).map(|_| normal(rng)).collect();
    ForecastModel::mlp(w, n, h, u, c, v, 0.1 * normal(rng)).unwrap()
}

pub fn random_window(rng: &mut ChaCha8Rng, w: usize, n: usize, scale: f64) -> Window {
    Window::new((0..w * n).map(|_| scale * normal(rng)).collect(), w, n, w).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    loop {
        let m: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        if m.iter().any(|b| *b) {
            return m;
        }
    }
}

/// Runs every stage of `config` into `dir`.
pub fn run_pipeline(config: &ScenarioConfig, dir: &Path) -> Run {
    let run = Run::new(dir, config.clone());
    run.run_all().unwrap();
    run
}

/// Every artifact except the timing file, by name.
pub fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != TIMINGS_FILE)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

pub fn read_csv_column(path: &Path, column: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}
