//! Model-following traders and the sell-off feedback loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{Action, ForecastModel, Thresholds, Window};
use crate::market::{Market, ResolvedIndex, TradeSource};

#[derive(Debug, Clone, PartialEq)]
pub struct Follower {
    pub model: ForecastModel,
    /// Notional capital, in currency.
    pub capital: f64,
    /// Fraction of current holdings liquidated on a SELL signal.
    pub sell_fraction: f64,
    /// Shares held per stock.
    pub holdings: Vec<f64>,
    initial: Vec<f64>,
}

impl Follower {
    pub fn new(model: ForecastModel, capital: f64, sell_fraction: f64) -> Self {
        Self {
            model,
            capital,
            sell_fraction,
            holdings: Vec::new(),
            initial: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation {
    pub followers: Vec<Follower>,
    /// Fraction of market participation that follows models; scales holdings.
    pub phi: f64,
    pub thresholds: Thresholds,
    /// Followers buy back on BUY signals when set.
    pub recovery: bool,
}

impl AgentPopulation {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::validation("agents.phi", "must lie in [0, 1]"));
        }
        for (j, f) in self.followers.iter().enumerate() {
            if !(f.capital >= 0.0 && f.capital.is_finite()) {
                return Err(Error::validation(format!("agents.followers[{j}].capital"), "must be >= 0"));
            }
            if !(0.0..=1.0).contains(&f.sell_fraction) {
                return Err(Error::validation(
                    format!("agents.followers[{j}].sell_fraction"),
                    "must lie in [0, 1]",
                ));
            }
        }
        self.thresholds.validate()
    }

    /// Index-proportional holdings worth `phi · capital` at `prices`.
    pub fn initialize_holdings(&mut self, index: &ResolvedIndex, prices: &[f64]) -> Result<()> {
        self.validate()?;
        let weights = index.weights(prices);
        for f in &mut self.followers {
            let mut h = vec![0.0; prices.len()];
            for &(i, w) in &weights {
                h[i] = self.phi * f.capital * w / prices[i];
            }
            f.initial = h.clone();
            f.holdings = h;
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.followers.iter().map(|f| f.model.window_len).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub actions: Vec<Action>,
    /// Signed shares traded by each follower this step.
    pub agent_volume: Vec<f64>,
    /// Aggregate signed shares per stock.
    pub volumes: Vec<f64>,
    /// Price change per stock caused by the agents.
    pub price_moves: Vec<f64>,
}

/// Each follower reads its own window; SELL liquidates `sell_fraction` of
/// every holding. Orders are aggregated per stock and pushed through the
/// impact model. A stock whose aggregate order would be rejected is not traded.
pub fn step_agents(
    population: &mut AgentPopulation,
    windows: &[Window],
    market: &mut Market,
) -> Result<AgentStep> {
    let n = market.n_stocks();
    if windows.len() != population.followers.len() {
        return Err(Error::Contract("one window per follower is required".into()));
    }
    let mut orders = vec![vec![0.0; n]; population.followers.len()];
    let mut actions = Vec::with_capacity(windows.len());
    for ((f, w), q) in population.followers.iter().zip(windows).zip(&mut orders) {
        if f.holdings.len() != n {
            return Err(Error::Contract("follower holdings are not initialized".into()));
        }
        let action = f.model.predict(w, &population.thresholds)?.action;
        match action {
            Action::Sell => {
                for (qi, h) in q.iter_mut().zip(&f.holdings) {
                    *qi = -f.sell_fraction * h;
                }
            }
            Action::Buy if population.recovery => {
                for ((qi, h), h0) in q.iter_mut().zip(&f.holdings).zip(&f.initial) {
                    *qi = f.sell_fraction * (h0 - h).max(0.0);
                }
            }
            _ => {}
        }
        actions.push(action);
    }

    let mut volumes = vec![0.0; n];
    for q in &orders {
        for (v, qi) in volumes.iter_mut().zip(q) {
            *v += qi;
        }
    }
    let mut price_moves = vec![0.0; n];
    let mut executed = vec![false; n];
    for i in 0..n {
        if volumes[i] == 0.0 {
            continue;
        }
        if let Ok(fill) = market.execute_external(i, volumes[i], TradeSource::Agent) {
            price_moves[i] = fill.price_change;
            executed[i] = true;
        }
    }
    let mut agent_volume = vec![0.0; orders.len()];
    for ((f, q), av) in population.followers.iter_mut().zip(&orders).zip(&mut agent_volume) {
        for i in 0..n {
            if executed[i] {
                f.holdings[i] += q[i];
                *av += q[i];
            }
        }
    }
    for i in 0..n {
        if !executed[i] {
            volumes[i] = 0.0;
        }
    }
    Ok(AgentStep {
        actions,
        agent_volume,
        volumes,
        price_moves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub step: usize,
    pub agent_id: usize,
    pub signal: Action,
    pub volume: f64,
    pub index_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRun {
    /// Index level before the first step, then after each step.
    pub index_path: Vec<f64>,
    pub events: Vec<FeedbackEvent>,
    /// Steps in which at least one follower sold.
    pub cascades: Vec<usize>,
    pub max_drawdown: f64,
    /// Completed log-return rows appended during the run.
    pub realized_rows: Vec<Vec<f64>>,
}

impl FeedbackRun {
    /// Event log CSV `step,agent_id,signal,volume,index_value`.
    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "agent_id", "signal", "volume", "index_value"])?;
        for e in &self.events {
            let signal = match e.signal {
                Action::Sell => "SELL",
                Action::Hold => "HOLD",
                Action::Buy => "BUY",
            };
            w.write_record([
                e.step.to_string(),
                e.agent_id.to_string(),
                signal.to_string(),
                e.volume.to_string(),
                e.index_value.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }
}

/// Largest peak-to-trough fractional decline along `path`.
pub fn max_drawdown(path: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0_f64;
    for &v in path {
        peak = peak.max(v);
        if peak > 0.0 {
            worst = worst.max((peak - v) / peak);
        }
    }
    worst
}

/// Simulates `horizon` steps of: exogenous move, follower reactions to the
/// completed history, impact, index recompute.
///
/// `history` holds completed log-return rows (oldest first) and must cover
/// the longest follower window.
pub fn run_feedback(
    population: &mut AgentPopulation,
    market: &mut Market,
    index: &ResolvedIndex,
    history: &[Vec<f64>],
    noise: &[Vec<f64>],
    horizon: usize,
) -> Result<FeedbackRun> {
    if horizon == 0 {
        return Err(Error::Contract("feedback horizon must be >= 1".into()));
    }
    if noise.len() < horizon {
        return Err(Error::Contract("fewer noise rows than the feedback horizon".into()));
    }
    let n = market.n_stocks();
    let max_w = population.max_window();
    if history.len() < max_w || history.iter().any(|r| r.len() != n) {
        return Err(Error::Contract(format!(
            "feedback needs at least {max_w} history rows of {n} returns"
        )));
    }
    let mut rows: Vec<Vec<f64>> = history[history.len() - max_w..].to_vec();
    let mut index_path = vec![index.level(market.prices())];
    let mut events = Vec::new();
    let mut cascades = Vec::new();
    let mut realized_rows = Vec::with_capacity(horizon);

    for (step, exo) in noise.iter().enumerate().take(horizon) {
        let start = market.prices().to_vec();
        market.advance(exo)?;
        let windows = population
            .followers
            .iter()
            .map(|f| {
                let w = f.model.window_len;
                let x: Vec<f64> = rows[rows.len() - w..].iter().flatten().copied().collect();
                Window::new(x, w, n, market.step())
            })
            .collect::<Result<Vec<_>>>()?;
        let outcome = step_agents(population, &windows, market)?;
        let level = index.level(market.prices());
        index_path.push(level);
        if outcome.actions.contains(&Action::Sell) && outcome.volumes.iter().any(|v| *v < 0.0) {
            cascades.push(step);
        }
        for (j, (&a, &v)) in outcome.actions.iter().zip(&outcome.agent_volume).enumerate() {
            events.push(FeedbackEvent {
                step,
                agent_id: j,
                signal: a,
                volume: v,
                index_value: level,
            });
        }
        let row: Vec<f64> = market
            .prices()
            .iter()
            .zip(&start)
            .map(|(p, q)| (p / q).ln())
            .collect();
        rows.remove(0);
        rows.push(row.clone());
        realized_rows.push(row);
    }
    Ok(FeedbackRun {
        max_drawdown: max_drawdown(&index_path),
        index_path,
        events,
        cascades,
        realized_rows,
    })
}
