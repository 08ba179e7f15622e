//! Gradient-based perturbations of forecaster input windows.
//!
//! All attacks work in log-return space on a `W×N` window and respect three
//! constraints on every emitted `δ`: the per-coordinate box `|δ| ≤ ε`, the
//! attackable-coordinate mask, and the cap on distinct stocks touched.
//! `sign(0) = 0` throughout.

mod diachronic;

pub use diachronic::{DiachronicPlanner, PlanEvent, PlanEventKind, PlanStep};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastModel, Window};

/// Which way the adversary pushes the forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Down,
    Up,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Down => 1.0,
            Direction::Up => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AttackMode {
    Untargeted,
    /// Drive the prediction to `target` or beyond (below it for `Down`).
    Targeted { target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub eps: f64,
    /// `W×N` row-major attackable coordinates.
    pub mask: Vec<bool>,
    pub window_len: usize,
    pub n_inputs: usize,
    pub mode: AttackMode,
    pub steps: usize,
    pub step_size: f64,
    pub sparsity_k: usize,
    #[serde(default)]
    pub direction: Direction,
}

impl AttackSpec {
    /// Full-mask spec with `sparsity_k = N`.
    pub fn full(window_len: usize, n_inputs: usize, eps: f64, mode: AttackMode) -> Self {
        Self {
            eps,
            mask: vec![true; window_len * n_inputs],
            window_len,
            n_inputs,
            mode,
            steps: 1,
            step_size: eps,
            sparsity_k: n_inputs,
            direction: Direction::Down,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_steps(mut self, steps: usize, step_size: f64) -> Self {
        self.steps = steps;
        self.step_size = step_size;
        self
    }

    /// Stocks with at least one attackable coordinate, in column order.
    pub fn mask_stocks(&self) -> Vec<usize> {
        mask_stocks(&self.mask, self.window_len, self.n_inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::validation("attack.eps", "must be > 0"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::validation("attack.step_size", "must be > 0"));
        }
        if self.steps == 0 {
            return Err(Error::validation("attack.steps", "must be >= 1"));
        }
        if let AttackMode::Targeted { target } = self.mode {
            if !target.is_finite() {
                return Err(Error::validation("attack.target", "must be finite"));
            }
        }
        if self.sparsity_k > self.n_inputs {
            return Err(Error::validation("attack.sparsity_k", "must be <= N"));
        }
        if self.mask.len() != self.window_len * self.n_inputs {
            return Err(Error::Contract("attack mask does not match the window shape".into()));
        }
        let touched = self.mask_stocks().len();
        if touched > self.sparsity_k {
            return Err(Error::Attack(format!(
                "mask touches {touched} stocks but sparsity_k is {}",
                self.sparsity_k
            )));
        }
        Ok(())
    }

    fn check(&self, model: &ForecastModel, window: &Window) -> Result<()> {
        self.validate()?;
        if model.window_len != self.window_len
            || model.n_inputs != self.n_inputs
            || window.window_len != self.window_len
            || window.n_inputs != self.n_inputs
        {
            return Err(Error::Contract(format!(
                "attack spec {}x{}, model {}x{}, window {}x{} disagree",
                self.window_len,
                self.n_inputs,
                model.window_len,
                model.n_inputs,
                window.window_len,
                window.n_inputs
            )));
        }
        if !self.mask.iter().any(|m| *m) {
            return Err(Error::Attack("no attackable coordinates".into()));
        }
        Ok(())
    }

    /// Whether `y` meets the target (targeted mode only).
    fn reached(&self, y: f64) -> bool {
        match self.mode {
            AttackMode::Targeted { target } => match self.direction {
                Direction::Down => y <= target,
                Direction::Up => y >= target,
            },
            AttackMode::Untargeted => false,
        }
    }

    /// Success criterion used for universal perturbations.
    fn succeeded(&self, y_adv: f64, y_clean: f64) -> bool {
        match self.mode {
            AttackMode::Targeted { .. } => self.reached(y_adv),
            AttackMode::Untargeted => self.direction.sign() * (y_adv - y_clean) < 0.0,
        }
    }

    /// Clamps to the ε-box and zeroes coordinates outside the mask.
    fn project(&self, delta: &mut [f64]) {
        let eps = self.eps;
        for (d, &m) in delta.iter_mut().zip(&self.mask) {
            if !m {
                *d = 0.0;
                continue;
            }
            // Snap accumulated rounding onto the box face.
            if d.abs() >= eps * (1.0 - 8.0 * f64::EPSILON) {
                *d = eps.copysign(*d);
            }
        }
    }
}

pub(crate) fn mask_stocks(mask: &[bool], window_len: usize, n_inputs: usize) -> Vec<usize> {
    (0..n_inputs)
        .filter(|&i| (0..window_len).any(|t| mask[t * n_inputs + i]))
        .collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub eps: f64,
    #[serde(rename = "W")]
    pub window_len: usize,
    #[serde(rename = "N")]
    pub n_inputs: usize,
    /// Dense `W×N` row-major δ.
    #[serde(skip)]
    pub delta: Vec<f64>,
    pub y_before: f64,
    pub y_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_cost: Option<f64>,
    /// Fraction of windows fooled (universal perturbations only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_fraction: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PerturbationDoc {
    eps: f64,
    #[serde(rename = "W")]
    window_len: usize,
    #[serde(rename = "N")]
    n_inputs: usize,
    mask_stocks: Vec<usize>,
    /// Sparse `[step, stock, value]` triples.
    delta: Vec<(usize, usize, f64)>,
    y_before: f64,
    y_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    est_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success_fraction: Option<f64>,
}

impl Perturbation {
    pub fn zero(window_len: usize, n_inputs: usize, eps: f64, y: f64) -> Self {
        Self {
            eps,
            window_len,
            n_inputs,
            delta: vec![0.0; window_len * n_inputs],
            y_before: y,
            y_after: y,
            est_cost: None,
            success_fraction: None,
        }
    }

    pub fn at(&self, step: usize, stock: usize) -> f64 {
        self.delta[step * self.n_inputs + stock]
    }

    /// Coordinates `(step, stock)` with `δ ≠ 0`.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.delta
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| (k / self.n_inputs, k % self.n_inputs))
            .collect()
    }

    pub fn support_stocks(&self) -> Vec<usize> {
        let mask: Vec<bool> = self.delta.iter().map(|v| *v != 0.0).collect();
        mask_stocks(&mask, self.window_len, self.n_inputs)
    }

    /// Checks the box, mask containment and sparsity bound against `spec`.
    pub fn check_feasible(&self, spec: &AttackSpec) -> Result<()> {
        if self.delta.len() != spec.mask.len() {
            return Err(Error::Contract("perturbation shape differs from spec".into()));
        }
        for (k, (&d, &m)) in self.delta.iter().zip(&spec.mask).enumerate() {
            if d.abs() > spec.eps {
                return Err(Error::Attack(format!("coordinate {k} leaves the ε-box")));
            }
            if d != 0.0 && !m {
                return Err(Error::Attack(format!("coordinate {k} is outside the mask")));
            }
        }
        if self.support_stocks().len() > spec.sparsity_k {
            return Err(Error::Attack("support exceeds sparsity_k stocks".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PerturbationDoc {
            eps: self.eps,
            window_len: self.window_len,
            n_inputs: self.n_inputs,
            mask_stocks: self.support_stocks(),
            delta: self
                .support()
                .into_iter()
                .map(|(t, i)| (t, i, self.at(t, i)))
                .collect(),
            y_before: self.y_before,
            y_after: self.y_after,
            est_cost: self.est_cost,
            success_fraction: self.success_fraction,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PerturbationDoc = serde_json::from_str(s)?;
        let mut delta = vec![0.0; doc.window_len * doc.n_inputs];
        for (t, i, v) in doc.delta {
            if t >= doc.window_len || i >= doc.n_inputs {
                return Err(Error::Serde(format!("δ entry ({t},{i}) outside the window")));
            }
            delta[t * doc.n_inputs + i] = v;
        }
        Ok(Self {
            eps: doc.eps,
            window_len: doc.window_len,
            n_inputs: doc.n_inputs,
            delta,
            y_before: doc.y_before,
            y_after: doc.y_after,
            est_cost: doc.est_cost,
            success_fraction: doc.success_fraction,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Single signed-gradient step of size ε on the masked coordinates.
pub fn fgsm(model: &ForecastModel, window: &Window, spec: &AttackSpec) -> Result<Perturbation> {
    spec.check(model, window)?;
    let s = spec.direction.sign();
    let g = model.gradient(&window.x);
    let mut delta: Vec<f64> = g
        .iter()
        .zip(&spec.mask)
        .map(|(gi, &m)| if m { -spec.eps * sign(s * gi) } else { 0.0 })
        .collect();
    spec.project(&mut delta);
    finish(model, window, spec, delta)
}

fn finish(
    model: &ForecastModel,
    window: &Window,
    spec: &AttackSpec,
    delta: Vec<f64>,
) -> Result<Perturbation> {
    let y_before = model.forward(&window.x);
    let y_after = model.forward(&add(&window.x, &delta));
    Ok(Perturbation {
        eps: spec.eps,
        window_len: spec.window_len,
        n_inputs: spec.n_inputs,
        delta,
        y_before,
        y_after,
        est_cost: None,
        success_fraction: None,
    })
}

fn add(x: &[f64], d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + b).collect()
}

/// Iterated signed-gradient steps projected on the box and mask.
///
/// A step is kept only if it does not move the prediction against the attack
/// direction; the first rejected (or stationary) step ends the run. Targeted
/// mode stops as soon as the target is reached.
pub fn iterative_attack(
    model: &ForecastModel,
    window: &Window,
    spec: &AttackSpec,
) -> Result<Perturbation> {
    iterative_attack_from(model, window, spec, None)
}

/// [`iterative_attack`] warm-started from `init` (projected first).
pub fn iterative_attack_from(
    model: &ForecastModel,
    window: &Window,
    spec: &AttackSpec,
    init: Option<&[f64]>,
) -> Result<Perturbation> {
    spec.check(model, window)?;
    let s = spec.direction.sign();
    let mut delta = match init {
        Some(d) if d.len() == spec.mask.len() => d.to_vec(),
        Some(_) => return Err(Error::Contract("warm start has the wrong shape".into())),
        None => vec![0.0; spec.mask.len()],
    };
    for d in &mut delta {
        *d = d.clamp(-spec.eps, spec.eps);
    }
    spec.project(&mut delta);
    let mut y = model.forward(&add(&window.x, &delta));
    for _ in 0..spec.steps {
        if spec.reached(y) {
            break;
        }
        let g = model.gradient(&add(&window.x, &delta));
        let mut cand: Vec<f64> = delta
            .iter()
            .zip(&g)
            .map(|(d, gi)| (d - spec.step_size * sign(s * gi)).clamp(-spec.eps, spec.eps))
            .collect();
        spec.project(&mut cand);
        if cand == delta {
            break;
        }
        let y_cand = model.forward(&add(&window.x, &cand));
        if s * y_cand > s * y {
            break;
        }
        delta = cand;
        y = y_cand;
    }
    finish(model, window, spec, delta)
}

/// Keeps the `k` attackable stocks with the largest cost-normalized leverage
/// `Σ_t |g_{t,i}| / cost_i`, summing over the stock's attackable rows.
/// Ties go to the lexicographically smaller ticker.
pub fn select_sparse_mask(
    model: &ForecastModel,
    window: &Window,
    base_mask: &[bool],
    costs: &[f64],
    tickers: &[String],
    k: usize,
) -> Result<Vec<bool>> {
    let (w, n) = (model.window_len, model.n_inputs);
    if k == 0 {
        return Err(Error::Contract("sparsity k must be >= 1".into()));
    }
    if base_mask.len() != w * n || costs.len() != n || tickers.len() != n {
        return Err(Error::Contract("mask, costs and tickers must match the model shape".into()));
    }
    let g = model.input_gradient(window)?;
    let candidates = mask_stocks(base_mask, w, n);
    if candidates.is_empty() {
        return Err(Error::Attack("no manipulable stocks".into()));
    }
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|i| {
            let leverage: f64 = (0..w)
                .filter(|t| base_mask[t * n + i])
                .map(|t| g[t * n + i].abs())
                .sum();
            (i, leverage / costs[i])
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| tickers[a.0].cmp(&tickers[b.0]))
    });
    let chosen: Vec<usize> = scored.iter().take(k).map(|(i, _)| *i).collect();
    Ok(base_mask
        .iter()
        .enumerate()
        .map(|(idx, &m)| m && chosen.contains(&(idx % n)))
        .collect())
}

/// One `δ` for a whole set of windows, grown by signed steps along the
/// gradient averaged over the windows not yet fooled.
///
/// A step is kept if it does not reduce the fooled fraction and, at equal
/// fraction, does not move the mean prediction against the attack direction.
/// `y_before`/`y_after` are means over the windows; `success_fraction` is
/// the fooled fraction of the returned `δ`.
pub fn universal_perturbation(
    model: &ForecastModel,
    windows: &[Window],
    spec: &AttackSpec,
) -> Result<Perturbation> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Attack("universal perturbation needs at least one window".into()))?;
    for w in windows {
        spec.check(model, w)?;
    }
    let s = spec.direction.sign();
    let clean: Vec<f64> = windows.iter().map(|w| model.forward(&w.x)).collect();
    let evaluate = |delta: &[f64]| -> (Vec<f64>, usize) {
        let ys: Vec<f64> = windows.iter().map(|w| model.forward(&add(&w.x, delta))).collect();
        let fooled = ys
            .iter()
            .zip(&clean)
            .filter(|(y, c)| spec.succeeded(**y, **c))
            .count();
        (ys, fooled)
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut delta = vec![0.0; first.x.len()];
    let (mut ys, mut fooled) = evaluate(&delta);
    let targeted = matches!(spec.mode, AttackMode::Targeted { .. });
    for _ in 0..spec.steps {
        let active: Vec<usize> = (0..windows.len())
            .filter(|&j| !targeted || !spec.succeeded(ys[j], clean[j]))
            .collect();
        if active.is_empty() {
            break;
        }
        let mut g_avg = vec![0.0; delta.len()];
        for &j in &active {
            let g = model.gradient(&add(&windows[j].x, &delta));
            for (a, gi) in g_avg.iter_mut().zip(g) {
                *a += gi;
            }
        }
        let mut cand: Vec<f64> = delta
            .iter()
            .zip(&g_avg)
            .map(|(d, gi)| (d - spec.step_size * sign(s * gi)).clamp(-spec.eps, spec.eps))
            .collect();
        spec.project(&mut cand);
        if cand == delta {
            break;
        }
        let (ys_c, fooled_c) = evaluate(&cand);
        let better = fooled_c > fooled || (fooled_c == fooled && s * mean(&ys_c) <= s * mean(&ys));
        if !better {
            break;
        }
        delta = cand;
        ys = ys_c;
        fooled = fooled_c;
    }
    Ok(Perturbation {
        eps: spec.eps,
        window_len: spec.window_len,
        n_inputs: spec.n_inputs,
        delta,
        y_before: mean(&clean),
        y_after: mean(&ys),
        est_cost: None,
        success_fraction: Some(fooled as f64 / windows.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> ForecastModel {
        ForecastModel::linear(1, 2, vec![0.5, -0.3], 0.0).unwrap()
    }

    fn window(x: Vec<f64>, w: usize, n: usize) -> Window {
        Window::new(x, w, n, 0).unwrap()
    }

    #[test]
    fn fgsm_linear_closed_form() {
        let m = linear();
        let x = window(vec![0.02, 0.01], 1, 2);
        let spec = AttackSpec::full(1, 2, 0.1, AttackMode::Untargeted);
        let p = fgsm(&m, &x, &spec).unwrap();
        assert_eq!(p.delta, vec![-0.1, 0.1]);
        assert!((p.y_after - p.y_before + 0.08).abs() < 1e-15);
    }

    #[test]
    fn fgsm_zero_gradient_is_a_no_op() {
        let m = ForecastModel::linear(1, 2, vec![0.0, 0.0], 0.01).unwrap();
        let x = window(vec![0.02, 0.01], 1, 2);
        let p = fgsm(&m, &x, &AttackSpec::full(1, 2, 0.1, AttackMode::Untargeted)).unwrap();
        assert_eq!(p.delta, vec![0.0, 0.0]);
        assert_eq!(p.y_after, p.y_before);
        assert!(p.support().is_empty());
    }

    #[test]
    fn empty_mask_is_an_attack_error() {
        let m = linear();
        let x = window(vec![0.02, 0.01], 1, 2);
        let spec = AttackSpec::full(1, 2, 0.1, AttackMode::Untargeted).with_mask(vec![false; 2]);
        match fgsm(&m, &x, &spec) {
            Err(Error::Attack(msg)) => assert!(msg.contains("no attackable coordinates")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn upward_attack_negates_direction() {
        let m = linear();
        let x = window(vec![0.02, 0.01], 1, 2);
        let mut spec = AttackSpec::full(1, 2, 0.1, AttackMode::Untargeted);
        spec.direction = Direction::Up;
        let p = fgsm(&m, &x, &spec).unwrap();
        assert_eq!(p.delta, vec![0.1, -0.1]);
        assert!(p.y_after > p.y_before);
    }

    #[test]
    fn iterative_saturates_to_fgsm_on_linear() {
        let m = ForecastModel::linear(2, 2, vec![0.5, -0.3, 0.0, 1.2], 0.001).unwrap();
        let x = window(vec![0.01, -0.02, 0.003, 0.0], 2, 2);
        let base = AttackSpec::full(2, 2, 0.05, AttackMode::Untargeted);
        let one_shot = fgsm(&m, &x, &base).unwrap();
        let it = iterative_attack(&m, &x, &base.clone().with_steps(20, 0.005)).unwrap();
        assert_eq!(it.delta, one_shot.delta);
        let k1 = iterative_attack(&m, &x, &base.with_steps(1, 0.05)).unwrap();
        assert_eq!(k1.delta, one_shot.delta);
    }

    #[test]
    fn targeted_iterative_stops_at_target() {
        let m = linear();
        let x = window(vec![0.0, 0.0], 1, 2);
        let spec = AttackSpec::full(1, 2, 0.1, AttackMode::Targeted { target: -0.01 })
            .with_steps(50, 0.001);
        let p = iterative_attack(&m, &x, &spec).unwrap();
        assert!(p.y_after <= -0.01);
        // Each step lowers ŷ by 0.0008; the first crossing is at step 13.
        assert!(p.y_after > -0.01 - 0.0008 - 1e-12);
        p.check_feasible(&spec).unwrap();
    }

    #[test]
    fn sparse_selection_picks_highest_leverage() {
        let m = ForecastModel::linear(1, 2, vec![0.8, -0.2], 0.0).unwrap();
        let x = window(vec![0.0, 0.0], 1, 2);
        let tickers = vec!["A".to_string(), "B".to_string()];
        let mask = select_sparse_mask(&m, &x, &[true, true], &[1.0, 1.0], &tickers, 1).unwrap();
        assert_eq!(mask, vec![true, false]);
        let all = select_sparse_mask(&m, &x, &[true, false], &[1.0, 1.0], &tickers, 2).unwrap();
        assert_eq!(all, vec![true, false]);
        // Equal leverage: ticker order decides.
        let tied = ForecastModel::linear(1, 2, vec![0.5, 0.5], 0.0).unwrap();
        let swapped = vec!["Z".to_string(), "B".to_string()];
        let pick = select_sparse_mask(&tied, &x, &[true, true], &[1.0, 1.0], &swapped, 1).unwrap();
        assert_eq!(pick, vec![false, true]);
        assert!(matches!(
            select_sparse_mask(&m, &x, &[false, false], &[1.0, 1.0], &tickers, 1),
            Err(Error::Attack(_))
        ));
    }

    #[test]
    fn too_wide_mask_violates_sparsity() {
        let m = linear();
        let x = window(vec![0.0, 0.0], 1, 2);
        let mut spec = AttackSpec::full(1, 2, 0.1, AttackMode::Untargeted);
        spec.sparsity_k = 1;
        assert!(matches!(fgsm(&m, &x, &spec), Err(Error::Attack(_))));
    }

    #[test]
    fn universal_on_linear_reaches_every_window() {
        let m = linear();
        let windows: Vec<Window> = [[0.02, 0.01], [-0.01, 0.03], [0.05, -0.02]]
            .iter()
            .map(|x| window(x.to_vec(), 1, 2))
            .collect();
        let target = -0.01;
        let spec = AttackSpec::full(1, 2, 0.1, AttackMode::Targeted { target })
            .with_steps(10, 0.01);
        let p = universal_perturbation(&m, &windows, &spec).unwrap();
        assert_eq!(p.success_fraction, Some(1.0));
        for w in &windows {
            assert!(m.forward(&add(&w.x, &p.delta)) <= target);
        }
    }

    #[test]
    fn perturbation_json_is_sparse() {
        let mut p = Perturbation::zero(2, 3, 0.01, 0.0);
        p.delta[4] = -0.01;
        let json = p.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["delta"], serde_json::json!([[1, 1, -0.01]]));
        assert_eq!(v["mask_stocks"], serde_json::json!([1]));
        let back = Perturbation::from_json(&json).unwrap();
        assert_eq!(back, p);
    }
}
