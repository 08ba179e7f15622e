//! Receding-horizon ("diachronic") attack planning.
//!
//! The attacked window ends `horizon` steps in the future. Its first
//! `W - horizon` rows are already-realized history; the remaining rows are
//! filled in one step at a time. At each step the planner rebuilds the window
//! from what actually happened, assumes zero clean return for the steps still
//! ahead, re-runs the iterative attack on the remaining rows (warm-started
//! from the previous plan) and emits the targets for the next step only.

use serde::{Deserialize, Serialize};

use super::{iterative_attack_from, AttackSpec};
use crate::error::{Error, Result};
use crate::forecast::{ForecastModel, Window};
use crate::market::Market;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlanEventKind {
    Planned,
    /// Masked stocks that stopped being manipulable and were dropped.
    Replan { dropped: Vec<usize> },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvent {
    /// Attack step, `0..horizon`.
    pub step: usize,
    #[serde(flatten)]
    pub kind: PlanEventKind,
    /// Surrogate prediction on the planned window after this step's replan.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step: usize,
    /// `(stock, target log-return)` for the active masked stocks.
    pub targets: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct DiachronicPlanner<'m> {
    model: &'m ForecastModel,
    spec: AttackSpec,
    horizon: usize,
    per_stock_budget: f64,
    /// Full `W×N` window: history rows, realized rows so far, zeros ahead.
    base: Vec<f64>,
    plan: Vec<f64>,
    /// Targets handed out so far, by window coordinate.
    emitted: Vec<f64>,
    active: Vec<bool>,
    step: usize,
    awaiting_observation: bool,
    failed: bool,
    events: Vec<PlanEvent>,
}

impl<'m> DiachronicPlanner<'m> {
    /// `history` holds the `W - horizon` realized rows preceding the attack.
    /// Only the last `horizon` rows of `spec.mask` are used.
    pub fn new(
        model: &'m ForecastModel,
        history: &[Vec<f64>],
        spec: &AttackSpec,
        horizon: usize,
        per_stock_budget: f64,
    ) -> Result<Self> {
        spec.validate()?;
        let (w, n) = (spec.window_len, spec.n_inputs);
        if model.window_len != w || model.n_inputs != n {
            return Err(Error::Contract("attack spec does not match the model".into()));
        }
        if horizon == 0 || horizon > w {
            return Err(Error::Contract(format!(
                "horizon {horizon} must lie in 1..={w}"
            )));
        }
        if history.len() != w - horizon || history.iter().any(|r| r.len() != n) {
            return Err(Error::Contract(format!(
                "planner needs {} history rows of {n} returns",
                w - horizon
            )));
        }
        let mut base: Vec<f64> = history.iter().flatten().copied().collect();
        base.resize(w * n, 0.0);
        let mut spec = spec.clone();
        for t in 0..w - horizon {
            spec.mask[t * n..(t + 1) * n].iter_mut().for_each(|m| *m = false);
        }
        let mut active = vec![false; n];
        for i in spec.mask_stocks() {
            active[i] = true;
        }
        Ok(Self {
            model,
            spec,
            horizon,
            per_stock_budget,
            base,
            plan: vec![0.0; w * n],
            emitted: vec![0.0; w * n],
            active,
            step: 0,
            awaiting_observation: false,
            failed: false,
            events: Vec::new(),
        })
    }

    pub fn events(&self) -> &[PlanEvent] {
        &self.events
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn is_done(&self) -> bool {
        self.failed || self.step >= self.horizon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The current planned `δ` over the full window (realized rows included).
    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    /// Every target emitted so far, as a `W×N` δ.
    pub fn emitted(&self) -> &[f64] {
        &self.emitted
    }

    /// Stocks still in the plan.
    pub fn active_stocks(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    fn row_of(&self, step: usize) -> usize {
        self.spec.window_len - self.horizon + step
    }

    /// Re-checks manipulability at current market prices, replans the
    /// remaining rows and returns the next step's targets. `None` once the
    /// horizon is exhausted or the plan has failed.
    pub fn next_targets(&mut self, market: &Market) -> Result<Option<PlanStep>> {
        if self.is_done() {
            return Ok(None);
        }
        if self.awaiting_observation {
            return Err(Error::Contract("observe the realized row before replanning".into()));
        }
        let n = self.spec.n_inputs;
        if market.n_stocks() != n {
            return Err(Error::Contract("market and planner disagree on N".into()));
        }

        let dropped: Vec<usize> = self
            .active_stocks()
            .into_iter()
            .filter(|&i| market.move_cost(i, self.spec.eps) > self.per_stock_budget)
            .collect();
        for &i in &dropped {
            self.active[i] = false;
        }

        let current = self.row_of(self.step);
        let mut step_spec = self.spec.clone();
        for (k, m) in step_spec.mask.iter_mut().enumerate() {
            *m = *m && k / n >= current && self.active[k % n];
        }
        let window = Window::new(self.base.clone(), self.spec.window_len, n, 0)?;
        if !step_spec.mask.iter().any(|m| *m) {
            let reason = if dropped.is_empty() {
                "no attackable coordinates remain".to_string()
            } else {
                format!("stocks {dropped:?} are no longer manipulable and none remain")
            };
            self.failed = true;
            let predicted = self.model.forward(&window.add(&self.plan)?.x);
            self.events.push(PlanEvent {
                step: self.step,
                kind: PlanEventKind::Failed { reason },
                predicted,
            });
            return Ok(None);
        }

        // Realized rows are already in `base`; only the remaining rows carry δ.
        let warm: Vec<f64> = self
            .plan
            .iter()
            .zip(&step_spec.mask)
            .map(|(d, m)| if *m { *d } else { 0.0 })
            .collect();
        let result = iterative_attack_from(self.model, &window, &step_spec, Some(&warm))?;
        for (k, d) in result.delta.iter().enumerate() {
            if k / n >= current {
                self.plan[k] = *d;
            }
        }

        let kind = if dropped.is_empty() {
            PlanEventKind::Planned
        } else {
            PlanEventKind::Replan { dropped }
        };
        self.events.push(PlanEvent {
            step: self.step,
            kind,
            predicted: result.y_after,
        });

        let targets: Vec<(usize, f64)> = self
            .active_stocks()
            .into_iter()
            .filter(|&i| self.spec.mask[current * n + i])
            .map(|i| (i, self.plan[current * n + i]))
            .collect();
        for &(i, d) in &targets {
            self.emitted[current * n + i] = d;
        }
        self.awaiting_observation = true;
        Ok(Some(PlanStep {
            step: self.step,
            targets,
        }))
    }

    /// Records the realized log-returns of every stock for the step just played.
    pub fn observe(&mut self, realized: &[f64]) -> Result<()> {
        let n = self.spec.n_inputs;
        if realized.len() != n {
            return Err(Error::Contract("realized row has the wrong length".into()));
        }
        if !self.awaiting_observation {
            return Err(Error::Contract("no pending step to observe".into()));
        }
        let row = self.row_of(self.step);
        self.base[row * n..(row + 1) * n].copy_from_slice(realized);
        // The realized row already contains whatever the attacker achieved.
        self.plan[row * n..(row + 1) * n].iter_mut().for_each(|d| *d = 0.0);
        self.awaiting_observation = false;
        self.step += 1;
        Ok(())
    }

    /// The window as realized so far (history plus observed rows).
    pub fn realized_window(&self) -> Result<Window> {
        Window::new(self.base.clone(), self.spec.window_len, self.spec.n_inputs, 0)
    }
}
