//! Next-step index return forecasters over windows of per-stock log-returns.
//!
//! Two model families: a ridge-regression linear model solved in closed form
//! and a one-hidden-layer tanh network trained by mini-batch momentum SGD.
//! Both expose the exact gradient of the prediction with respect to the input
//! window, which is what the attacks consume.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{IndexSpec, PricePanel, StockMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Linear,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "LINEAR",
            ModelKind::Mlp => "MLP",
        })
    }
}

/// `W×N` block of log-returns flattened row-major (row = step, column = stock).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x: Vec<f64>,
    pub window_len: usize,
    pub n_inputs: usize,
    /// Absolute step of the last row.
    pub end_step: usize,
}

impl Window {
    pub fn new(x: Vec<f64>, window_len: usize, n_inputs: usize, end_step: usize) -> Result<Self> {
        if x.len() != window_len * n_inputs {
            return Err(Error::Contract(format!(
                "window of {} values does not match {window_len}x{n_inputs}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("window contains non-finite values".into()));
        }
        Ok(Self {
            x,
            window_len,
            n_inputs,
            end_step,
        })
    }

    pub fn at(&self, step: usize, stock: usize) -> f64 {
        self.x[step * self.n_inputs + stock]
    }

    /// The last `len` rows.
    pub fn suffix(&self, len: usize) -> Result<Window> {
        if len > self.window_len {
            return Err(Error::Contract(format!(
                "cannot take {len} rows from a window of {}",
                self.window_len
            )));
        }
        let start = (self.window_len - len) * self.n_inputs;
        Ok(Window {
            x: self.x[start..].to_vec(),
            window_len: len,
            n_inputs: self.n_inputs,
            end_step: self.end_step,
        })
    }

    pub fn add(&self, delta: &[f64]) -> Result<Window> {
        if delta.len() != self.x.len() {
            return Err(Error::Contract("perturbation shape does not match window".into()));
        }
        Ok(Window {
            x: self.x.iter().zip(delta).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }
}

/// Window of returns ending at panel row `end_row` (needs `end_row >= window_len`).
pub fn window_at(panel: &PricePanel, end_row: usize, window_len: usize) -> Result<Window> {
    if window_len == 0 || end_row < window_len || end_row >= panel.n_steps() {
        return Err(Error::Contract(format!(
            "no {window_len}-step window ends at row {end_row} of a {}-row panel",
            panel.n_steps()
        )));
    }
    let mut x = Vec::with_capacity(window_len * panel.n_stocks());
    for s in end_row + 1 - window_len..=end_row {
        x.extend(panel.log_returns(s));
    }
    Window::new(x, window_len, panel.n_stocks(), panel.t0() + end_row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Window,
    pub label: f64,
}

/// One sample per end row `t ∈ [W, T-2]`, labelled with the next index log-return.
pub fn build_dataset(
    panel: &PricePanel,
    spec: &IndexSpec,
    meta: &[StockMeta],
    window_len: usize,
) -> Result<Vec<Sample>> {
    let t_len = panel.n_steps();
    if window_len == 0 || t_len <= window_len + 1 {
        return Err(Error::Dataset(format!(
            "{t_len} steps is too short for window length {window_len} (need more than {})",
            window_len + 1
        )));
    }
    let index = spec.resolve(meta)?;
    let levels: Vec<f64> = (0..t_len).map(|t| index.level(panel.row(t))).collect();
    let returns: Vec<Vec<f64>> = (1..t_len).map(|t| panel.log_returns(t)).collect();
    let n = panel.n_stocks();
    let mut out = Vec::with_capacity(t_len - 1 - window_len);
    for t in window_len..=t_len - 2 {
        let mut x = Vec::with_capacity(window_len * n);
        for s in t + 1 - window_len..=t {
            x.extend_from_slice(&returns[s - 1]);
        }
        let window = Window::new(x, window_len, n, panel.t0() + t)?;
        out.push(Sample {
            window,
            label: (levels[t + 1] / levels[t]).ln(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    /// Ridge penalty on LINEAR weights (bias unpenalized).
    pub ridge: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Scale of the random initialization of MLP weights.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            hidden: 8,
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Sell,
    Hold,
    Buy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub sell: f64,
    pub buy: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.sell < 0.0 && self.buy > 0.0) {
            return Err(Error::validation(
                "thresholds",
                "need sell threshold < 0 < buy threshold",
            ));
        }
        Ok(())
    }

    /// Boundaries are inclusive on both sides.
    pub fn action(&self, predicted: f64) -> Action {
        if predicted <= self.sell {
            Action::Sell
        } else if predicted >= self.buy {
            Action::Buy
        } else {
            Action::Hold
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub predicted_return: f64,
    pub action: Action,
}

impl Signal {
    /// Distance of the prediction below the sell threshold; positive means a
    /// SELL with that much margin.
    pub fn sell_confidence(&self, thresholds: &Thresholds) -> f64 {
        thresholds.sell - self.predicted_return
    }
}

/// Trained forecaster. Parameter layout:
/// LINEAR `[θ (W·N), b]`; MLP `[U (H×W·N row-major), c (H), v (H), b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub kind: ModelKind,
    #[serde(rename = "W")]
    pub window_len: usize,
    #[serde(rename = "N")]
    pub n_inputs: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    pub params: Vec<f64>,
    pub train_seed: u64,
    pub train_mse: f64,
}

impl ForecastModel {
    pub fn linear(window_len: usize, n_inputs: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        let mut params = weights;
        params.push(bias);
        let model = Self {
            kind: ModelKind::Linear,
            window_len,
            n_inputs,
            hidden: 0,
            params,
            train_seed: 0,
            train_mse: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn mlp(
        window_len: usize,
        n_inputs: usize,
        hidden: usize,
        u: Vec<f64>,
        c: Vec<f64>,
        v: Vec<f64>,
        b: f64,
    ) -> Result<Self> {
        let mut params = u;
        params.extend(c);
        params.extend(v);
        params.push(b);
        let model = Self {
            kind: ModelKind::Mlp,
            window_len,
            n_inputs,
            hidden,
            params,
            train_seed: 0,
            train_mse: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn input_len(&self) -> usize {
        self.window_len * self.n_inputs
    }

    fn expected_params(&self) -> usize {
        let d = self.input_len();
        match self.kind {
            ModelKind::Linear => d + 1,
            ModelKind::Mlp => self.hidden * d + 2 * self.hidden + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.n_inputs == 0 {
            return Err(Error::Contract("model needs W >= 1 and N >= 1".into()));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::Contract("MLP needs a hidden width >= 1".into()));
        }
        if self.params.len() != self.expected_params() {
            return Err(Error::Contract(format!(
                "{} model with W={} N={} H={} needs {} parameters, found {}",
                self.kind,
                self.window_len,
                self.n_inputs,
                self.hidden,
                self.expected_params(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Contract("model has non-finite parameters".into()));
        }
        Ok(())
    }

    /// LINEAR weights θ (without the bias).
    pub fn linear_weights(&self) -> Option<&[f64]> {
        match self.kind {
            ModelKind::Linear => Some(&self.params[..self.input_len()]),
            ModelKind::Mlp => None,
        }
    }

    fn mlp_parts(&self) -> (&[f64], &[f64], &[f64], f64) {
        let d = self.input_len();
        let h = self.hidden;
        let (u, rest) = self.params.split_at(h * d);
        let (c, rest) = rest.split_at(h);
        let (v, b) = rest.split_at(h);
        (u, c, v, b[0])
    }

    fn check_shape(&self, window: &Window) -> Result<()> {
        if window.window_len != self.window_len || window.n_inputs != self.n_inputs {
            return Err(Error::Contract(format!(
                "model expects a {}x{} window, got {}x{}",
                self.window_len, self.n_inputs, window.window_len, window.n_inputs
            )));
        }
        Ok(())
    }

    /// Raw prediction on a flattened input; the caller guarantees the length.
    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_len());
        match self.kind {
            ModelKind::Linear => {
                let d = self.input_len();
                dot(&self.params[..d], x) + self.params[d]
            }
            ModelKind::Mlp => {
                let (u, c, v, b) = self.mlp_parts();
                let d = self.input_len();
                (0..self.hidden)
                    .map(|j| v[j] * (dot(&u[j * d..(j + 1) * d], x) + c[j]).tanh())
                    .sum::<f64>()
                    + b
            }
        }
    }

    /// `∂ŷ/∂x` on a flattened input.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_len());
        let d = self.input_len();
        match self.kind {
            ModelKind::Linear => self.params[..d].to_vec(),
            ModelKind::Mlp => {
                let (u, c, v, _) = self.mlp_parts();
                let mut g = vec![0.0; d];
                for j in 0..self.hidden {
                    let row = &u[j * d..(j + 1) * d];
                    let a = (dot(row, x) + c[j]).tanh();
                    let back = v[j] * (1.0 - a * a);
                    if back != 0.0 {
                        for (gi, ui) in g.iter_mut().zip(row) {
                            *gi += ui * back;
                        }
                    }
                }
                g
            }
        }
    }

    pub fn predict_return(&self, window: &Window) -> Result<f64> {
        self.check_shape(window)?;
        Ok(self.forward(&window.x))
    }

    pub fn predict(&self, window: &Window, thresholds: &Thresholds) -> Result<Signal> {
        let predicted_return = self.predict_return(window)?;
        Ok(Signal {
            predicted_return,
            action: thresholds.action(predicted_return),
        })
    }

    pub fn input_gradient(&self, window: &Window) -> Result<Vec<f64>> {
        self.check_shape(window)?;
        Ok(self.gradient(&window.x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean squared prediction error over a dataset.
pub fn mse(model: &ForecastModel, data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter()
        .map(|s| (model.forward(&s.window.x) - s.label).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

pub fn train(kind: ModelKind, data: &[Sample], hp: &TrainParams) -> Result<ForecastModel> {
    let first = data
        .first()
        .ok_or_else(|| Error::Training("empty dataset".into()))?;
    let (w, n) = (first.window.window_len, first.window.n_inputs);
    if data
        .iter()
        .any(|s| s.window.window_len != w || s.window.n_inputs != n)
    {
        return Err(Error::Training("dataset windows have mixed shapes".into()));
    }
    let mut model = match kind {
        ModelKind::Linear => train_ridge(data, w, n, hp.ridge)?,
        ModelKind::Mlp => train_mlp(data, w, n, hp)?,
    };
    model.train_seed = hp.seed;
    model.train_mse = mse(&model, data);
    Ok(model)
}

fn train_ridge(data: &[Sample], w: usize, n: usize, ridge: f64) -> Result<ForecastModel> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Training("ridge penalty must be finite and >= 0".into()));
    }
    let d = w * n;
    let mut gram = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut rhs = DVector::<f64>::zeros(d + 1);
    let mut row = vec![0.0; d + 1];
    for s in data {
        row[..d].copy_from_slice(&s.window.x);
        row[d] = 1.0;
        for i in 0..=d {
            rhs[i] += row[i] * s.label;
            for j in 0..=i {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..=d {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let solution = gram
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .filter(|sol| sol.iter().all(|v| v.is_finite()))
        .ok_or_else(|| {
            if ridge == 0.0 {
                Error::Training(
                    "normal equations are singular; use a ridge penalty > 0".into(),
                )
            } else {
                Error::Training("normal equations are not positive definite".into())
            }
        })?;
    ForecastModel::linear(w, n, solution.as_slice()[..d].to_vec(), solution[d])
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Mini-batch momentum SGD on standardized features and labels; the affine
/// standardization is folded back into the parameters afterwards, so the
/// returned network consumes raw log-returns.
fn train_mlp(data: &[Sample], w: usize, n: usize, hp: &TrainParams) -> Result<ForecastModel> {
    let d = w * n;
    let h = hp.hidden;
    if h == 0 || hp.batch_size == 0 {
        return Err(Error::Training("MLP needs hidden >= 1 and batch_size >= 1".into()));
    }
    let feat: Vec<(f64, f64)> = (0..d)
        .map(|i| mean_std(data.iter().map(move |s| s.window.x[i])))
        .collect();
    let (y_mean, y_std) = mean_std(data.iter().map(|s| s.label));
    let xs: Vec<Vec<f64>> = data
        .iter()
        .map(|s| {
            s.window
                .x
                .iter()
                .zip(&feat)
                .map(|(v, (m, sd))| (v - m) / sd)
                .collect()
        })
        .collect();
    let ys: Vec<f64> = data.iter().map(|s| (s.label - y_mean) / y_std).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let u_scale = hp.init_scale / (d as f64).sqrt();
    let v_scale = hp.init_scale / (h as f64).sqrt();
    // Layout matches ForecastModel: [U, c, v, b].
    let n_params = h * d + 2 * h + 1;
    let mut theta = vec![0.0; n_params];
    for p in &mut theta[..h * d] {
        *p = u_scale * rng.sample::<f64, _>(StandardNormal);
    }
    for p in &mut theta[h * d + h..h * d + 2 * h] {
        *p = v_scale * rng.sample::<f64, _>(StandardNormal);
    }
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut hidden_act = vec![0.0; h];

    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in batch {
                let x = &xs[k];
                let (u, rest) = theta.split_at(h * d);
                let (c, rest) = rest.split_at(h);
                let (v, b) = rest.split_at(h);
                let mut y_hat = b[0];
                for j in 0..h {
                    hidden_act[j] = (dot(&u[j * d..(j + 1) * d], x) + c[j]).tanh();
                    y_hat += v[j] * hidden_act[j];
                }
                let err = y_hat - ys[k];
                grad[n_params - 1] += err;
                for j in 0..h {
                    let a = hidden_act[j];
                    grad[h * d + h + j] += err * a;
                    let back = err * v[j] * (1.0 - a * a);
                    grad[h * d + j] += back;
                    for (gi, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gi += back * xi;
                    }
                }
            }
            let scale = hp.learning_rate / batch.len() as f64;
            for ((p, vel), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
                *vel = hp.momentum * *vel - scale * g;
                *p += *vel;
            }
        }
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(
                "MLP parameters diverged; lower the learning rate".into(),
            ));
        }
    }

    // Fold standardization: U' = U/s, c' = c - U'·m, v' = v·s_y, b' = b·s_y + m_y.
    let (u, rest) = theta.split_at(h * d);
    let (c, rest) = rest.split_at(h);
    let (v, b) = rest.split_at(h);
    let mut u_raw = vec![0.0; h * d];
    let mut c_raw = c.to_vec();
    for j in 0..h {
        for i in 0..d {
            let (m, sd) = feat[i];
            let val = u[j * d + i] / sd;
            u_raw[j * d + i] = val;
            c_raw[j] -= val * m;
        }
    }
    let v_raw = v.iter().map(|vj| vj * y_std).collect();
    let b_raw = b[0] * y_std + y_mean;
    ForecastModel::mlp(w, n, h, u_raw, c_raw, v_raw, b_raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{IndexSpec, PricePanel};

    fn thresholds() -> Thresholds {
        Thresholds {
            sell: -0.001,
            buy: 0.001,
        }
    }

    fn meta(t: &str) -> StockMeta {
        StockMeta {
            ticker: t.into(),
            shares_outstanding: 1000.0,
            adv: 1e6,
            lambda_impact: 0.1,
            half_spread: 0.0,
        }
    }

    #[test]
    fn dataset_counts_and_constant_prices() {
        let w = 3;
        let rows = vec![vec![10.0, 20.0]; w + 2];
        let panel = PricePanel::new(vec!["A".into(), "B".into()], rows, 0).unwrap();
        let m = [meta("A"), meta("B")];
        let spec = IndexSpec {
            members: vec!["A".into(), "B".into()],
            divisor: 1.0,
        };
        let data = build_dataset(&panel, &spec, &m, w).unwrap();
        assert_eq!(data.len(), 1);
        assert!(data[0].window.x.iter().all(|v| *v == 0.0));
        assert_eq!(data[0].label, 0.0);

        let short = PricePanel::new(vec!["A".into()], vec![vec![1.0]; w + 1], 0).unwrap();
        let spec1 = IndexSpec {
            members: vec!["A".into()],
            divisor: 1.0,
        };
        assert!(matches!(
            build_dataset(&short, &spec1, &m[..1], w),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn single_member_label_is_next_stock_return() {
        let prices = [100.0, 101.0, 99.5, 102.0, 103.0, 100.0];
        let panel =
            PricePanel::new(vec!["A".into()], prices.iter().map(|p| vec![*p]).collect(), 0)
                .unwrap();
        let spec = IndexSpec {
            members: vec!["A".into()],
            divisor: 0.5,
        };
        let data = build_dataset(&panel, &spec, &[meta("A")], 2).unwrap();
        assert_eq!(data.len(), 3);
        for s in &data {
            let t = s.window.end_step;
            let own = (prices[t + 1] / prices[t]).ln();
            assert!((s.label - own).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_prediction_and_gradient() {
        let m = ForecastModel::linear(1, 2, vec![0.5, -0.3], 0.0).unwrap();
        let x = Window::new(vec![0.02, 0.01], 1, 2, 0).unwrap();
        let sig = m.predict(&x, &thresholds()).unwrap();
        assert!((sig.predicted_return - 0.007).abs() < 1e-15);
        assert_eq!(sig.action, Action::Buy);
        assert_eq!(m.input_gradient(&x).unwrap(), vec![0.5, -0.3]);
    }

    #[test]
    fn zero_input_zero_bias_mlp_holds() {
        let m = ForecastModel::mlp(1, 2, 2, vec![1.0, 2.0, -1.0, 0.5], vec![0.0; 2], vec![0.3, 0.7], 0.0)
            .unwrap();
        let x = Window::new(vec![0.0, 0.0], 1, 2, 0).unwrap();
        let sig = m.predict(&x, &thresholds()).unwrap();
        assert_eq!(sig.predicted_return, 0.0);
        assert_eq!(sig.action, Action::Hold);
    }

    #[test]
    fn sell_boundary_is_inclusive() {
        let t = thresholds();
        assert_eq!(t.action(t.sell), Action::Sell);
        assert_eq!(t.action(t.buy), Action::Buy);
        assert_eq!(t.action(0.0), Action::Hold);
    }

    #[test]
    fn dead_mlp_has_zero_gradient() {
        let m = ForecastModel::mlp(2, 1, 3, vec![0.0; 6], vec![0.1, -0.2, 0.3], vec![1.0; 3], 0.0)
            .unwrap();
        let x = Window::new(vec![0.3, -0.1], 2, 1, 0).unwrap();
        assert_eq!(m.input_gradient(&x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let m = ForecastModel::linear(1, 2, vec![0.5, -0.3], 0.0).unwrap();
        let x = Window::new(vec![0.0; 3], 1, 3, 0).unwrap();
        assert!(matches!(m.predict_return(&x), Err(Error::Contract(_))));
        assert!(matches!(m.input_gradient(&x), Err(Error::Contract(_))));
    }

    fn synthetic(theta: &[f64], bias: f64, w: usize, n: usize, count: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let x: Vec<f64> = (0..w * n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let label = dot(theta, &x) + bias;
                Sample {
                    window: Window::new(x, w, n, k).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn ridge_recovers_generating_coefficients() {
        let theta = [0.4, -1.2, 0.05, 2.0, -0.7, 0.3];
        let data = synthetic(&theta, 0.0, 3, 2, 200, 5);
        let hp0 = TrainParams {
            ridge: 0.0,
            ..Default::default()
        };
        let model = train(ModelKind::Linear, &data, &hp0).unwrap();
        for (a, b) in model.linear_weights().unwrap().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }

        let hp = TrainParams {
            ridge: 1e-10,
            ..Default::default()
        };
        let model = train(ModelKind::Linear, &data, &hp).unwrap();
        for (a, b) in model.linear_weights().unwrap().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ridge_null_labels_give_null_model() {
        let mut data = synthetic(&[1.0, 2.0], 0.0, 1, 2, 20, 1);
        data.iter_mut().for_each(|s| s.label = 0.0);
        let model = train(ModelKind::Linear, &data, &TrainParams::default()).unwrap();
        assert!(model.params.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn singular_ridge_without_penalty_fails() {
        let data: Vec<Sample> = (0..10)
            .map(|k| Sample {
                window: Window::new(vec![0.0, 0.0], 1, 2, k).unwrap(),
                label: 0.01,
            })
            .collect();
        let hp = TrainParams {
            ridge: 0.0,
            ..Default::default()
        };
        match train(ModelKind::Linear, &data, &hp) {
            Err(Error::Training(msg)) => assert!(msg.contains("ridge")),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn mlp_training_is_deterministic_and_learns() {
        let theta = [0.4, -0.3, 0.2, 0.1];
        let data = synthetic(&theta, 0.01, 2, 2, 256, 9);
        let hp = TrainParams {
            hidden: 6,
            epochs: 60,
            seed: 17,
            ..Default::default()
        };
        let a = train(ModelKind::Mlp, &data, &hp).unwrap();
        let b = train(ModelKind::Mlp, &data, &hp).unwrap();
        assert_eq!(a, b);
        let variance = {
            let (_, sd) = mean_std(data.iter().map(|s| s.label));
            sd * sd
        };
        assert!(a.train_mse < 0.05 * variance, "mse {} vs var {variance}", a.train_mse);

        let other = train(ModelKind::Mlp, &data, &TrainParams { seed: 18, ..hp }).unwrap();
        assert_ne!(a.params, other.params);
    }

    #[test]
    fn json_round_trip() {
        let m = ForecastModel::mlp(1, 2, 1, vec![0.1, 0.2], vec![0.0], vec![1.5], -0.25).unwrap();
        let back = ForecastModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for key in ["kind", "W", "N", "H", "params", "train_seed", "train_mse"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["kind"], "MLP");
    }
}
