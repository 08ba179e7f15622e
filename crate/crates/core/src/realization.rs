//! Turning planned log-return targets into trades.
//!
//! Within a step the market moves first (exogenous returns), then the
//! attacker trades. Each order pins the step's return of its stock to the
//! target: after the planned fill, up to `max_retrades` corrective fills close
//! any gap the exogenous move opened. A single global budget bounds spend.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{DiachronicPlanner, Perturbation, PlanEvent};
use crate::error::{Error, Result};
use crate::market::{Market, PricePanel};

/// One planned step return for one stock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Step offset from the start of the plan.
    pub step: usize,
    pub stock: usize,
    pub log_return: f64,
}

/// Targets for the rows of `perturbation` from `first_row` on; row
/// `first_row` becomes plan step 0.
pub fn targets_from_perturbation(perturbation: &Perturbation, first_row: usize) -> Vec<Target> {
    perturbation
        .support()
        .into_iter()
        .filter(|(t, _)| *t >= first_row)
        .map(|(t, i)| Target {
            step: t - first_row,
            stock: i,
            log_return: perturbation.at(t, i),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub step: usize,
    pub stock: usize,
    pub ticker: String,
    pub target_frac: f64,
    pub shares: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradePlan {
    pub orders: Vec<Order>,
    pub total_budget: f64,
    /// Spend if no exogenous move intervenes.
    pub est_cost: f64,
}

impl TradePlan {
    pub fn n_steps(&self) -> usize {
        self.orders.last().map_or(0, |o| o.step + 1)
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.total_budget = budget;
        self
    }
}

/// Compiles targets into orders against `market` and prices them on a
/// noise-free copy. Fails if the estimate exceeds `budget`.
pub fn compile_plan(targets: &[Target], market: &Market, budget: f64) -> Result<TradePlan> {
    let mut sorted: Vec<Target> = targets
        .iter()
        .copied()
        .filter(|t| t.log_return != 0.0)
        .collect();
    sorted.sort_by_key(|t| (t.step, t.stock));
    if let Some(d) = sorted.windows(2).find(|w| (w[0].step, w[0].stock) == (w[1].step, w[1].stock)) {
        return Err(Error::Contract(format!(
            "two targets for stock {} at step {}",
            d[0].stock, d[0].step
        )));
    }
    let mut orders = Vec::with_capacity(sorted.len());
    for t in &sorted {
        if t.stock >= market.n_stocks() {
            return Err(Error::Contract(format!("target for unknown stock {}", t.stock)));
        }
        let target_frac = t.log_return.exp_m1();
        let shares = market.invert_impact(t.stock, target_frac)?;
        orders.push(Order {
            step: t.step,
            stock: t.stock,
            ticker: market.meta()[t.stock].ticker.clone(),
            target_frac,
            shares,
        });
    }

    let mut sim = market.clone();
    let mut est_cost = 0.0;
    let zero = vec![0.0; market.n_stocks()];
    let mut k = 0;
    for step in 0..orders.last().map_or(0, |o| o.step + 1) {
        sim.advance(&zero)?;
        while k < orders.len() && orders[k].step == step {
            est_cost += sim.execute_trade(orders[k].stock, orders[k].shares)?.cost;
            k += 1;
        }
    }
    if est_cost > budget {
        return Err(Error::PlanOverBudget {
            estimated: est_cost,
            budget,
            shortfall: est_cost - budget,
        });
    }
    Ok(TradePlan {
        orders,
        total_budget: budget,
        est_cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizeConfig {
    /// Allowed |achieved − target| in fractional price move.
    pub tolerance: f64,
    pub max_retrades: usize,
}

impl Default for RealizeConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_retrades: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Realized,
    Partial,
    Aborted,
}

/// One executed fill (planned or corrective).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    pub step: usize,
    pub ticker: String,
    pub stock: usize,
    /// 0 for the planned fill, then 1.. for corrections.
    pub attempt: usize,
    pub target_frac: f64,
    /// Move since the start of the step, after this fill.
    pub achieved_frac: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub fills: Vec<FillReport>,
    pub residual_max: f64,
    pub total_spend: f64,
    pub budget: f64,
    pub outcome: Outcome,
    pub tolerance: f64,
}

impl ExecutionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV rows `step,ticker,target_frac,achieved_frac,cost`, one per fill.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "ticker", "target_frac", "achieved_frac", "cost"])?;
        for f in &self.fills {
            w.write_record([
                f.step.to_string(),
                f.ticker.clone(),
                f.target_frac.to_string(),
                f.achieved_frac.to_string(),
                f.cost.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, json: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        let f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(f)
    }
}

/// Mutable bookkeeping shared by static and receding-horizon execution.
struct Executor<'a> {
    market: &'a mut Market,
    cfg: RealizeConfig,
    budget: f64,
    spend: f64,
    residual_max: f64,
    partial: bool,
    aborted: bool,
    fills: Vec<FillReport>,
    panel: PricePanel,
}

impl<'a> Executor<'a> {
    fn new(market: &'a mut Market, cfg: RealizeConfig, budget: f64) -> Result<Self> {
        let tickers = market.meta().iter().map(|m| m.ticker.clone()).collect();
        let panel = PricePanel::new(tickers, vec![market.prices().to_vec()], market.step())?;
        Ok(Self {
            market,
            cfg,
            budget,
            spend: 0.0,
            residual_max: 0.0,
            partial: false,
            aborted: false,
            fills: Vec::new(),
            panel,
        })
    }

    /// Runs one step; returns the realized log-returns of every stock.
    fn step(
        &mut self,
        step: usize,
        exogenous: &[f64],
        orders: &[(usize, f64, f64)],
    ) -> Result<Vec<f64>> {
        let start = self.market.prices().to_vec();
        self.market.advance(exogenous)?;
        for &(stock, target_frac, planned_shares) in orders {
            if self.aborted {
                break;
            }
            self.fill_order(step, stock, target_frac, planned_shares, start[stock])?;
        }
        let now = self.market.prices().to_vec();
        self.panel.push_row(&now)?;
        Ok(now.iter().zip(&start).map(|(p, q)| (p / q).ln()).collect())
    }

    fn fill_order(
        &mut self,
        step: usize,
        stock: usize,
        target_frac: f64,
        planned_shares: f64,
        reference: f64,
    ) -> Result<()> {
        let goal = reference * (1.0 + target_frac);
        let cap = self.market.price_cap();
        let mut shares = planned_shares;
        let mut residual;
        let mut attempt = 0;
        loop {
            let cost = self.market.move_cost_of_shares(stock, shares);
            if self.spend + cost > self.budget {
                self.aborted = true;
                return Ok(());
            }
            let fill = self.market.execute_trade(stock, shares)?;
            self.spend += fill.cost;
            let achieved = self.market.prices()[stock] / reference - 1.0;
            residual = (achieved - target_frac).abs();
            self.fills.push(FillReport {
                step,
                ticker: self.market.meta()[stock].ticker.clone(),
                stock,
                attempt,
                target_frac,
                achieved_frac: achieved,
                cost: fill.cost,
            });
            if residual <= self.cfg.tolerance || attempt >= self.cfg.max_retrades {
                break;
            }
            attempt += 1;
            let needed = goal / self.market.prices()[stock] - 1.0;
            let limit = cap * (1.0 - 1e-9);
            shares = self
                .market
                .invert_impact(stock, needed.clamp(-limit, limit))?;
        }
        self.residual_max = self.residual_max.max(residual);
        if residual > self.cfg.tolerance {
            self.partial = true;
        }
        Ok(())
    }

    fn report(self) -> (ExecutionReport, PricePanel) {
        let outcome = if self.aborted {
            Outcome::Aborted
        } else if self.partial || self.residual_max > self.cfg.tolerance || self.spend > self.budget {
            Outcome::Partial
        } else {
            Outcome::Realized
        };
        (
            ExecutionReport {
                fills: self.fills,
                residual_max: self.residual_max,
                total_spend: self.spend,
                budget: self.budget,
                outcome,
                tolerance: self.cfg.tolerance,
            },
            self.panel,
        )
    }
}

/// Result of executing a plan: the report plus the price path it produced
/// (row 0 is the pre-plan state).
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub report: ExecutionReport,
    pub panel: PricePanel,
}

/// Executes `plan` step by step. `noise` supplies one row of exogenous
/// log-returns per plan step.
pub fn realize(
    plan: &TradePlan,
    market: &mut Market,
    noise: &[Vec<f64>],
    cfg: RealizeConfig,
) -> Result<Realization> {
    let n_steps = plan.n_steps();
    if noise.len() < n_steps {
        return Err(Error::Contract(format!(
            "plan spans {n_steps} steps but only {} noise rows were given",
            noise.len()
        )));
    }
    let mut exec = Executor::new(market, cfg, plan.total_budget)?;
    let mut k = 0;
    for (step, row) in noise.iter().enumerate().take(n_steps) {
        let mut orders = Vec::new();
        while k < plan.orders.len() && plan.orders[k].step == step {
            let o = &plan.orders[k];
            orders.push((o.stock, o.target_frac, o.shares));
            k += 1;
        }
        exec.step(step, row, &orders)?;
        if exec.aborted {
            break;
        }
    }
    let (report, panel) = exec.report();
    Ok(Realization { report, panel })
}

/// A scheduled change to a stock's liquidity, applied before planning `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidityShock {
    pub step: usize,
    pub stock: usize,
    pub adv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiachronicRun {
    pub realization: Realization,
    pub events: Vec<PlanEvent>,
    /// Realized log-returns, one row per executed step.
    pub realized_rows: Vec<Vec<f64>>,
    /// Targets actually handed to the executor, as a `W×N` δ.
    pub emitted: Vec<f64>,
}

/// Drives a receding-horizon planner against a live market: each step
/// applies scheduled shocks, asks the planner for targets, lets the market
/// move, executes and feeds the realized returns back.
pub fn realize_diachronic(
    planner: &mut DiachronicPlanner<'_>,
    market: &mut Market,
    noise: &[Vec<f64>],
    shocks: &[LiquidityShock],
    budget: f64,
    cfg: RealizeConfig,
) -> Result<DiachronicRun> {
    if noise.len() < planner.horizon() {
        return Err(Error::Contract("fewer noise rows than planning horizon".into()));
    }
    let mut exec = Executor::new(market, cfg, budget)?;
    let mut realized_rows = Vec::new();
    for (step, row) in noise.iter().enumerate().take(planner.horizon()) {
        for s in shocks.iter().filter(|s| s.step == step) {
            exec.market.meta_mut()[s.stock].adv = s.adv;
        }
        let Some(plan_step) = planner.next_targets(exec.market)? else {
            break;
        };
        let mut orders = Vec::new();
        for &(stock, d) in &plan_step.targets {
            if d == 0.0 {
                continue;
            }
            let frac = d.exp_m1();
            orders.push((stock, frac, exec.market.invert_impact(stock, frac)?));
        }
        let realized = exec.step(step, row, &orders)?;
        planner.observe(&realized)?;
        realized_rows.push(realized);
        if exec.aborted {
            break;
        }
    }
    let (report, panel) = exec.report();
    Ok(DiachronicRun {
        realization: Realization { report, panel },
        events: planner.events().to_vec(),
        realized_rows,
        emitted: planner.emitted().to_vec(),
    })
}
