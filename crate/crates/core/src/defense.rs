//! Adversarial training, moving-median input smoothing and detection of
//! coordinated multi-stock order flow.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attack::{fgsm, iterative_attack, AttackMode, AttackSpec};
use crate::error::{Error, Result};
use crate::forecast::{mse, train, ForecastModel, ModelKind, Sample, Signal, Thresholds, TrainParams, Window};
use crate::market::{StockMeta, TradeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    /// Fraction of training inputs replaced by FGSM-perturbed copies.
    pub adv_ratio: f64,
    pub adv_eps: f64,
    /// Odd moving-median width along the time axis.
    pub smooth_width: usize,
    /// Per-stock |z| threshold for detection.
    pub detect_z: f64,
    /// Number of simultaneous stocks needed for an alarm.
    pub detect_count: usize,
    /// Normal per-step net flow as a fraction of ADV (κ).
    pub normal_flow_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DefenseConfig {
    pub fn validate(&self, window_len: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.adv_ratio) {
            return Err(Error::validation("defense.adv_ratio", "must lie in [0, 1]"));
        }
        if !(self.adv_eps >= 0.0 && self.adv_eps.is_finite()) {
            return Err(Error::validation("defense.adv_eps", "must be >= 0"));
        }
        if self.smooth_width.is_multiple_of(2) || self.smooth_width == 0 || self.smooth_width > window_len {
            return Err(Error::validation(
                "defense.smooth_width",
                format!("must be odd and within 1..={window_len}"),
            ));
        }
        if !(self.detect_z > 0.0) {
            return Err(Error::validation("defense.detect_z", "must be > 0"));
        }
        if self.detect_count == 0 {
            return Err(Error::validation("defense.detect_count", "must be >= 1"));
        }
        if !(self.normal_flow_fraction > 0.0) {
            return Err(Error::validation("defense.normal_flow_fraction", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvTrainResult {
    pub model: ForecastModel,
    pub clean_mse: f64,
    /// MSE when every input is FGSM-perturbed against the returned model.
    pub adv_mse: f64,
}

/// MSE on inputs shifted by a full-mask downward FGSM step of size `eps`.
pub fn adversarial_mse(model: &ForecastModel, data: &[Sample], eps: f64) -> Result<f64> {
    if eps == 0.0 || data.is_empty() {
        return Ok(mse(model, data));
    }
    let spec = AttackSpec::full(model.window_len, model.n_inputs, eps, AttackMode::Untargeted);
    let mut total = 0.0;
    for s in data {
        let p = fgsm(model, &s.window, &spec)?;
        total += (p.y_after - s.label).powi(2);
    }
    Ok(total / data.len() as f64)
}

/// Trains on a dataset where a seeded `adv_ratio` share of inputs is replaced
/// by `x + δ_FGSM(x)` (labels kept), with δ crafted against the plainly
/// trained model. Ratio 0 or ε 0 reproduces plain training exactly.
pub fn adversarial_train(
    kind: ModelKind,
    data: &[Sample],
    hp: &TrainParams,
    cfg: &DefenseConfig,
) -> Result<AdvTrainResult> {
    let n_adv = (cfg.adv_ratio * data.len() as f64).round() as usize;
    let model = if n_adv == 0 || cfg.adv_eps == 0.0 {
        train(kind, data, hp)?
    } else {
        let plain = train(kind, data, hp)?;
        let spec = AttackSpec::full(plain.window_len, plain.n_inputs, cfg.adv_eps, AttackMode::Untargeted);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let mut augmented = data.to_vec();
        for &k in &order[..n_adv] {
            let p = fgsm(&plain, &data[k].window, &spec)?;
            augmented[k].window = data[k].window.add(&p.delta)?;
        }
        train(kind, &augmented, hp)?
    };
    let clean_mse = mse(&model, data);
    let adv_mse = adversarial_mse(&model, data, cfg.adv_eps)?;
    Ok(AdvTrainResult {
        model,
        clean_mse,
        adv_mse,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

/// Centered moving median of width `m` along time, per stock. Near the edges
/// the span is truncated to the rows that exist.
pub fn moving_median(window: &Window, m: usize) -> Result<Window> {
    if m.is_multiple_of(2) || m == 0 || m > window.window_len {
        return Err(Error::Contract(format!(
            "smoothing width {m} must be odd and within 1..={}",
            window.window_len
        )));
    }
    if m == 1 {
        return Ok(window.clone());
    }
    let (w, n) = (window.window_len, window.n_inputs);
    let half = m / 2;
    let mut out = vec![0.0; w * n];
    let mut buf = Vec::with_capacity(m);
    for i in 0..n {
        for t in 0..w {
            buf.clear();
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(w - 1);
            buf.extend((lo..=hi).map(|s| window.at(s, i)));
            out[t * n + i] = median(&mut buf);
        }
    }
    Window::new(out, w, n, window.end_step)
}

/// Predicts on the smoothed window; returns the smoothed window for audit.
pub fn smooth_predict(
    model: &ForecastModel,
    window: &Window,
    m: usize,
    thresholds: &Thresholds,
) -> Result<(Signal, Window)> {
    let smoothed = moving_median(window, m)?;
    let signal = model.predict(&smoothed, thresholds)?;
    Ok((signal, smoothed))
}

/// Clean MSE of a model evaluated through the smoother.
pub fn smoothed_mse(model: &ForecastModel, data: &[Sample], m: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in data {
        let y = model.predict_return(&moving_median(&s.window, m)?)?;
        total += (y - s.label).powi(2);
    }
    Ok(total / data.len() as f64)
}

/// Smallest ε (to `tol`) at which a targeted iterative attack with `steps`
/// steps of size `2.5·ε/steps` drives the prediction to `target`, restricted
/// to `mask`. `None` if even `eps_max` is not enough.
pub fn eps_to_flip(
    model: &ForecastModel,
    window: &Window,
    mask: &[bool],
    target: f64,
    steps: usize,
    eps_max: f64,
    tol: f64,
) -> Result<Option<f64>> {
    if model.predict_return(window)? <= target {
        return Ok(Some(0.0));
    }
    let reaches = |eps: f64| -> Result<bool> {
        let mut spec = AttackSpec::full(model.window_len, model.n_inputs, eps, AttackMode::Targeted { target })
            .with_mask(mask.to_vec())
            .with_steps(steps, 2.5 * eps / steps as f64);
        spec.sparsity_k = model.n_inputs;
        Ok(iterative_attack(model, window, &spec)?.y_after <= target)
    };
    if !reaches(eps_max)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, eps_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Net signed volume per step and stock.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLog {
    pub first_step: usize,
    pub volumes: Vec<Vec<f64>>,
}

impl FlowLog {
    pub fn zeros(first_step: usize, n_steps: usize, n_stocks: usize) -> Self {
        Self {
            first_step,
            volumes: vec![vec![0.0; n_stocks]; n_steps],
        }
    }

    /// Normal market flow: independent `N(0, (κ·ADV)²)` net volume per stock and step.
    pub fn background(meta: &[StockMeta], first_step: usize, n_steps: usize, kappa: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let volumes = (0..n_steps)
            .map(|_| {
                meta.iter()
                    .map(|m| kappa * m.adv * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self { first_step, volumes }
    }

    /// Adds market trade records that fall inside the log's step range.
    pub fn add_records(&mut self, records: &[TradeRecord]) {
        for r in records {
            if r.step >= self.first_step {
                if let Some(row) = self.volumes.get_mut(r.step - self.first_step) {
                    row[r.stock] += r.shares;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub flags: Vec<bool>,
    /// Tickers whose |z| exceeded the threshold, per step.
    pub flagged: Vec<Vec<String>>,
}

impl Detection {
    pub fn alarm_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn alarm_rate(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.alarm_count() as f64 / self.flags.len() as f64
        }
    }
}

/// Alarm at a step when at least `detect_count` stocks have
/// `|net / (κ·ADV)| > detect_z`.
pub fn detect_coordination(log: &FlowLog, meta: &[StockMeta], cfg: &DefenseConfig) -> Detection {
    let mut flags = Vec::with_capacity(log.volumes.len());
    let mut flagged = Vec::with_capacity(log.volumes.len());
    for row in &log.volumes {
        let hot: Vec<String> = row
            .iter()
            .zip(meta)
            .filter(|(v, m)| (**v / (cfg.normal_flow_fraction * m.adv)).abs() > cfg.detect_z)
            .map(|(_, m)| m.ticker.clone())
            .collect();
        flags.push(hot.len() >= cfg.detect_count);
        flagged.push(hot);
    }
    Detection { flags, flagged }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub defense: String,
    pub param: f64,
    pub clean_mse: Option<f64>,
    pub adv_mse: Option<f64>,
    pub attack_eps_to_flip: Option<f64>,
    pub alarm_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

/// CSV `defense,param,clean_mse,adv_mse,attack_eps_to_flip,alarm_rate,false_positive_rate`;
/// absent values are empty fields.
pub fn write_defense_csv<W: Write>(rows: &[DefenseRow], out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "defense",
        "param",
        "clean_mse",
        "adv_mse",
        "attack_eps_to_flip",
        "alarm_rate",
        "false_positive_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.defense.clone(),
            r.param.to_string(),
            opt(r.clean_mse),
            opt(r.adv_mse),
            opt(r.attack_eps_to_flip),
            opt(r.alarm_rate),
            opt(r.false_positive_rate),
        ])?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DefenseConfig {
        DefenseConfig {
            adv_ratio: 0.5,
            adv_eps: 0.01,
            smooth_width: 3,
            detect_z: 3.0,
            detect_count: 2,
            normal_flow_fraction: 0.01,
            seed: 3,
        }
    }

    fn meta(n: usize) -> Vec<StockMeta> {
        (0..n)
            .map(|i| StockMeta {
                ticker: format!("S{i}"),
                shares_outstanding: 1e6,
                adv: 1e6,
                lambda_impact: 0.1,
                half_spread: 0.0,
            })
            .collect()
    }

    #[test]
    fn width_one_is_identity_and_constants_are_fixed_points() {
        let w = Window::new(vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.0], 3, 2, 9).unwrap();
        assert_eq!(moving_median(&w, 1).unwrap(), w);
        let c = Window::new(vec![0.01; 10], 5, 2, 0).unwrap();
        assert_eq!(moving_median(&c, 3).unwrap(), c);
        assert_eq!(moving_median(&c, 5).unwrap(), c);
    }

    #[test]
    fn median_removes_isolated_spike() {
        let model = ForecastModel::linear(5, 1, vec![0.2, -0.1, 0.4, 0.3, 0.1], 0.0).unwrap();
        let t = Thresholds { sell: -0.001, buy: 0.001 };
        let flat = Window::new(vec![0.002; 5], 5, 1, 0).unwrap();
        let mut spiked = flat.clone();
        spiked.x[2] += 0.05;
        let (sig, smoothed) = smooth_predict(&model, &spiked, 3, &t).unwrap();
        assert_eq!(smoothed, flat);
        assert_eq!(sig, model.predict(&flat, &t).unwrap());
    }

    #[test]
    fn even_width_is_rejected() {
        let w = Window::new(vec![0.0; 4], 4, 1, 0).unwrap();
        assert!(moving_median(&w, 2).is_err());
        let mut c = cfg();
        c.smooth_width = 2;
        assert!(c.validate(4).is_err());
    }

    #[test]
    fn detection_thresholds() {
        let m = meta(3);
        let quiet = FlowLog::zeros(0, 5, 3);
        assert_eq!(detect_coordination(&quiet, &m, &cfg()).alarm_count(), 0);

        let mut one = FlowLog::zeros(0, 1, 3);
        one.volumes[0][1] = 1e6;
        assert_eq!(detect_coordination(&one, &m, &cfg()).alarm_count(), 0);

        let mut two = one.clone();
        two.volumes[0][2] = -1e6;
        let d = detect_coordination(&two, &m, &cfg());
        assert_eq!(d.flags, vec![true]);
        assert_eq!(d.flagged[0], vec!["S1".to_string(), "S2".to_string()]);
    }

    #[test]
    fn zero_ratio_or_zero_eps_reproduce_plain_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Sample> = (0..64)
            .map(|k| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-0.02..0.02)).collect();
                let label = 0.3 * x[0] - 0.2 * x[3];
                Sample { window: Window::new(x, 2, 2, k).unwrap(), label }
            })
            .collect();
        let hp = TrainParams { hidden: 4, epochs: 5, seed: 11, ..Default::default() };
        for kind in [ModelKind::Linear, ModelKind::Mlp] {
            let plain = train(kind, &data, &hp).unwrap();
            let r0 = adversarial_train(kind, &data, &hp, &DefenseConfig { adv_ratio: 0.0, ..cfg() }).unwrap();
            let e0 = adversarial_train(kind, &data, &hp, &DefenseConfig { adv_ratio: 1.0, adv_eps: 0.0, ..cfg() }).unwrap();
            assert_eq!(r0.model, plain);
            assert_eq!(e0.model, plain);
            let adv = adversarial_train(kind, &data, &hp, &cfg()).unwrap();
            assert_ne!(adv.model, plain);
            assert!(adv.adv_mse.is_finite() && adv.clean_mse.is_finite());
        }
    }

    #[test]
    fn eps_to_flip_linear_matches_closed_form() {
        // ŷ = 0.5a − 0.3b; each unit of ε lowers ŷ by 0.8.
        let model = ForecastModel::linear(1, 2, vec![0.5, -0.3], 0.0).unwrap();
        let w = Window::new(vec![0.0, 0.0], 1, 2, 0).unwrap();
        let eps = eps_to_flip(&model, &w, &[true, true], -0.008, 10, 0.1, 1e-9).unwrap().unwrap();
        assert!((eps - 0.01).abs() < 1e-8, "{eps}");
        assert_eq!(eps_to_flip(&model, &w, &[true, true], -1.0, 10, 0.1, 1e-9).unwrap(), None);
    }
}
