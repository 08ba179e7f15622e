//! Synthetic correlated market, cap-weighted index, and linear market impact.
//!
//! Prices follow a correlated geometric random walk driven by a Cholesky
//! factor. Trades move prices through a linear permanent impact
//! `Δp/p = λ·q/ADV`, which is exactly invertible.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the fractional price move a single attacker trade may target.
pub const DEFAULT_PRICE_CAP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockMeta {
    pub ticker: String,
    pub shares_outstanding: f64,
    /// Average traded volume per step, in shares.
    pub adv: f64,
    /// Dimensionless permanent impact coefficient λ.
    pub lambda_impact: f64,
    /// Half bid-ask spread as a fraction of price.
    pub half_spread: f64,
}

impl StockMeta {
    pub fn validate(&self) -> Result<()> {
        let key = |f: &str| format!("stocks.{}.{}", self.ticker, f);
        if self.ticker.is_empty() {
            return Err(Error::validation("stocks.ticker", "empty ticker"));
        }
        if !(self.shares_outstanding > 0.0 && self.shares_outstanding.is_finite()) {
            return Err(Error::validation(key("shares_outstanding"), "must be > 0"));
        }
        if !(self.adv > 0.0 && self.adv.is_finite()) {
            return Err(Error::validation(key("adv"), "must be > 0"));
        }
        if !(self.lambda_impact > 0.0 && self.lambda_impact.is_finite()) {
            return Err(Error::validation(key("lambda_impact"), "must be > 0"));
        }
        if !(0.0..0.05).contains(&self.half_spread) {
            return Err(Error::validation(key("half_spread"), "must lie in [0, 0.05)"));
        }
        Ok(())
    }
}

/// Drift and Cholesky factor of per-step log-returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnModel {
    pub drift: Vec<f64>,
    /// Lower-triangular `L` with `Σ = L·Lᵀ`, stored row by row.
    pub cov_factor: Vec<Vec<f64>>,
}

impl ReturnModel {
    pub fn n_stocks(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.drift.len();
        if n == 0 {
            return Err(Error::validation("market.drift", "need at least one stock"));
        }
        if self.drift.iter().any(|m| !m.is_finite()) {
            return Err(Error::validation("market.drift", "non-finite drift"));
        }
        if self.cov_factor.len() != n || self.cov_factor.iter().any(|r| r.len() != n) {
            return Err(Error::validation(
                "market.cov_factor",
                format!("expected a {n}x{n} matrix"),
            ));
        }
        for (i, row) in self.cov_factor.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::validation("market.cov_factor", "non-finite entry"));
                }
                if j > i && v != 0.0 {
                    return Err(Error::validation(
                        "market.cov_factor",
                        format!("entry ({i},{j}) above the diagonal must be zero"),
                    ));
                }
            }
            // Zero diagonals are allowed: degenerate (perfectly correlated or
            // constant) stocks are legitimate test markets.
            if row[i] < 0.0 {
                return Err(Error::validation(
                    "market.cov_factor",
                    format!("diagonal entry {i} must be non-negative"),
                ));
            }
        }
        Ok(())
    }

    /// Draws one vector of log-returns `μ + L·z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.drift.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| {
                let row = &self.cov_factor[i];
                self.drift[i] + (0..=i).map(|j| row[j] * z[j]).sum::<f64>()
            })
            .collect()
    }

    /// Draws `n_steps` rows of log-returns from a fresh generator seeded with `seed`.
    pub fn sample_stream(&self, n_steps: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_steps).map(|_| self.sample(&mut rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub n_steps: usize,
    pub returns: ReturnModel,
    pub initial_prices: Vec<f64>,
    pub seed: u64,
}

impl MarketParams {
    pub fn n_stocks(&self) -> usize {
        self.returns.n_stocks()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::validation("market.n_steps", "must be >= 1"));
        }
        self.returns.validate()?;
        if self.initial_prices.len() != self.n_stocks() {
            return Err(Error::validation(
                "market.initial_prices",
                "length must equal the number of stocks",
            ));
        }
        if self.initial_prices.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::validation("market.initial_prices", "prices must be > 0"));
        }
        Ok(())
    }
}

/// `T×N` matrix of strictly positive prices, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    tickers: Vec<String>,
    prices: Vec<f64>,
    t0: usize,
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, rows: Vec<Vec<f64>>, t0: usize) -> Result<Self> {
        let n = tickers.len();
        if n == 0 {
            return Err(Error::Contract("panel needs at least one ticker".into()));
        }
        let unique: HashSet<&String> = tickers.iter().collect();
        if unique.len() != n {
            return Err(Error::Contract("panel tickers must be unique".into()));
        }
        let mut prices = Vec::with_capacity(rows.len() * n);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Contract(format!(
                    "row {t} has {} prices, expected {n}",
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
                return Err(Error::Contract(format!("row {t} has non-positive price {p}")));
            }
            prices.extend(row);
        }
        Ok(Self { tickers, prices, t0 })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_steps(&self) -> usize {
        self.prices.len() / self.tickers.len()
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn price(&self, t: usize, stock: usize) -> f64 {
        self.prices[t * self.n_stocks() + stock]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_stocks();
        &self.prices[t * n..(t + 1) * n]
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.n_steps() - 1)
    }

    /// Log-return `log(p_t / p_{t-1})` of every stock; `t >= 1`.
    pub fn log_returns(&self, t: usize) -> Vec<f64> {
        let prev = self.row(t - 1);
        self.row(t)
            .iter()
            .zip(prev)
            .map(|(p, q)| (p / q).ln())
            .collect()
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_stocks() {
            return Err(Error::Contract("row length mismatch".into()));
        }
        if row.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Contract("non-positive price".into()));
        }
        self.prices.extend_from_slice(row);
        Ok(())
    }

    /// Rows `from..` as a new panel whose `t0` is shifted accordingly.
    pub fn tail_from(&self, from: usize) -> PricePanel {
        let n = self.n_stocks();
        PricePanel {
            tickers: self.tickers.clone(),
            prices: self.prices[from * n..].to_vec(),
            t0: self.t0 + from,
        }
    }

    /// CSV with header `step,<tickers...>` and prices at 10 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("step");
        for t in &self.tickers {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for t in 0..self.n_steps() {
            let _ = write!(out, "{}", self.t0 + t);
            for &p in self.row(t) {
                out.push(',');
                out.push_str(&format_sig(p, 10));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = match lines.next() {
            Some(h) => h.map_err(|e| Error::Serde(e.to_string()))?,
            None => return Err(Error::Serde("empty panel CSV".into())),
        };
        let mut cols = header.trim().split(',');
        if cols.next() != Some("step") {
            return Err(Error::Serde("panel CSV must start with a `step` column".into()));
        }
        let tickers: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut t0 = None;
        for line in lines {
            let line = line.map_err(|e| Error::Serde(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim().split(',');
            let step: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Serde(format!("bad step in `{line}`")))?;
            t0.get_or_insert(step);
            let row = fields
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Serde(format!("bad price in `{line}`: {e}")))?;
            rows.push(row);
        }
        PricePanel::new(tickers, rows, t0.unwrap_or(0))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f)
    }
}

/// Formats `v` with `digits` significant digits in plain decimal notation.
pub fn format_sig(v: f64, digits: i32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (digits - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Simulates `n_steps` rows of prices; row 0 holds the initial prices.
pub fn generate_market(params: &MarketParams, meta: &[StockMeta]) -> Result<PricePanel> {
    params.validate()?;
    if meta.len() != params.n_stocks() {
        return Err(Error::validation(
            "stocks",
            format!(
                "{} stock entries for a {}-stock market",
                meta.len(),
                params.n_stocks()
            ),
        ));
    }
    for m in meta {
        m.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut prices = params.initial_prices.clone();
    let mut rows = Vec::with_capacity(params.n_steps);
    rows.push(params.initial_prices.clone());
    for step in 1..params.n_steps {
        let r = params.returns.sample(&mut rng);
        for (p, ri) in prices.iter_mut().zip(&r) {
            *p *= ri.exp();
            let p = *p;
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Generation {
                    step,
                    reason: format!("price {p} left the representable positive range"),
                });
            }
        }
        rows.push(prices.clone());
    }
    let tickers = meta.iter().map(|m| m.ticker.clone()).collect();
    PricePanel::new(tickers, rows, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub members: Vec<String>,
    pub divisor: f64,
}

impl IndexSpec {
    /// Chooses the divisor so the index equals `base` at `prices`.
    pub fn with_base(
        members: Vec<String>,
        meta: &[StockMeta],
        prices: &[f64],
        base: f64,
    ) -> Result<Self> {
        let provisional = IndexSpec {
            members,
            divisor: 1.0,
        };
        let cap = provisional.resolve(meta)?.level(prices);
        if !(cap > 0.0 && base > 0.0) {
            return Err(Error::Config("index base and capitalization must be > 0".into()));
        }
        Ok(IndexSpec {
            divisor: cap / base,
            ..provisional
        })
    }

    pub fn resolve(&self, meta: &[StockMeta]) -> Result<ResolvedIndex> {
        if self.members.is_empty() {
            return Err(Error::Config("index has no members".into()));
        }
        if !(self.divisor > 0.0 && self.divisor.is_finite()) {
            return Err(Error::Config("index divisor must be > 0".into()));
        }
        let mut members = Vec::with_capacity(self.members.len());
        for name in &self.members {
            let i = meta
                .iter()
                .position(|m| &m.ticker == name)
                .ok_or_else(|| Error::Config(format!("unknown index member `{name}`")))?;
            members.push((i, meta[i].shares_outstanding));
        }
        Ok(ResolvedIndex {
            members,
            divisor: self.divisor,
        })
    }
}

/// Index with members resolved to stock positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedIndex {
    /// (stock position, shares outstanding)
    pub members: Vec<(usize, f64)>,
    pub divisor: f64,
}

impl ResolvedIndex {
    pub fn level(&self, prices: &[f64]) -> f64 {
        self.members
            .iter()
            .map(|&(i, shares)| shares * prices[i])
            .sum::<f64>()
            / self.divisor
    }

    /// Capitalization weight of each member at `prices`, keyed by stock position.
    pub fn weights(&self, prices: &[f64]) -> Vec<(usize, f64)> {
        let total: f64 = self.members.iter().map(|&(i, s)| s * prices[i]).sum();
        self.members
            .iter()
            .map(|&(i, s)| (i, s * prices[i] / total))
            .collect()
    }
}

/// Index level at panel row `t`.
pub fn index_value(
    panel: &PricePanel,
    spec: &IndexSpec,
    meta: &[StockMeta],
    t: usize,
) -> Result<f64> {
    if t >= panel.n_steps() {
        return Err(Error::Contract(format!(
            "step {t} outside a panel of {} rows",
            panel.n_steps()
        )));
    }
    Ok(spec.resolve(meta)?.level(panel.row(t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub prices: Vec<f64>,
    /// Cumulative attacker spend, in currency.
    pub spend: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub stock: usize,
    pub shares: f64,
    pub price_before: f64,
    pub price_change: f64,
    pub cost: f64,
}

impl Fill {
    pub fn fraction(&self) -> f64 {
        self.price_change / self.price_before
    }
}

/// Price change and cash cost of trading `q` shares at price `p`.
///
/// Cost is the half-spread plus half the permanent impact (average execution
/// price between pre- and post-trade).
pub fn trade_impact(meta: &StockMeta, p: f64, q: f64) -> (f64, f64) {
    let dp = p * meta.lambda_impact * (q / meta.adv);
    let cost = q.abs() * p * meta.half_spread + q.abs() * dp.abs() / 2.0;
    (dp, cost)
}

/// Applies a billed trade to `state`. The trade is rejected, leaving `state`
/// untouched, if the resulting price would not be positive.
pub fn execute_trade(
    state: &mut MarketState,
    stock: usize,
    meta: &StockMeta,
    q: f64,
) -> Result<Fill> {
    let fill = price_trade(&state.prices, stock, meta, q)?;
    state.prices[stock] += fill.price_change;
    state.spend += fill.cost;
    Ok(fill)
}

fn price_trade(prices: &[f64], stock: usize, meta: &StockMeta, q: f64) -> Result<Fill> {
    if !q.is_finite() {
        return Err(Error::Contract(format!("non-finite order size for {}", meta.ticker)));
    }
    let p = *prices
        .get(stock)
        .ok_or_else(|| Error::Contract(format!("unknown stock position {stock}")))?;
    let (dp, cost) = trade_impact(meta, p, q);
    let new_price = p + dp;
    if !(new_price > 0.0) {
        return Err(Error::TradeRejected {
            ticker: meta.ticker.clone(),
            price: new_price,
        });
    }
    Ok(Fill {
        stock,
        shares: q,
        price_before: p,
        price_change: dp,
        cost,
    })
}

/// Signed shares that move the price by exactly `fraction·p`.
pub fn invert_impact(meta: &StockMeta, _price: f64, fraction: f64, cap: f64) -> Result<f64> {
    if !fraction.is_finite() || fraction.abs() >= cap {
        return Err(Error::Infeasible {
            ticker: meta.ticker.clone(),
            fraction,
            cap,
        });
    }
    Ok(fraction * meta.adv / meta.lambda_impact)
}

/// Cost of moving a stock priced `p` by `fraction·p` in one trade.
pub fn move_cost(meta: &StockMeta, p: f64, fraction: f64) -> f64 {
    let q = fraction * meta.adv / meta.lambda_impact;
    trade_impact(meta, p, q).1
}

/// Stocks whose move by `eps_max·p` costs no more than `per_stock_budget`.
pub fn classify_manipulable(
    meta: &[StockMeta],
    prices: &[f64],
    eps_max: f64,
    per_stock_budget: f64,
) -> Vec<bool> {
    meta.iter()
        .zip(prices)
        .map(|(m, &p)| move_cost(m, p, eps_max) <= per_stock_budget)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeSource {
    Attacker,
    Agent,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub step: usize,
    pub stock: usize,
    pub shares: f64,
    pub source: TradeSource,
}

/// A live market: per-stock metadata, mutable state and a trade log.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    meta: Vec<StockMeta>,
    state: MarketState,
    price_cap: f64,
    log: Vec<TradeRecord>,
}

impl Market {
    pub fn new(meta: Vec<StockMeta>, prices: Vec<f64>, step: usize) -> Result<Self> {
        if meta.len() != prices.len() {
            return Err(Error::Contract("meta and price vectors differ in length".into()));
        }
        for m in &meta {
            m.validate()?;
        }
        if prices.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Contract("market prices must be > 0".into()));
        }
        Ok(Self {
            meta,
            state: MarketState {
                prices,
                spend: 0.0,
                step,
            },
            price_cap: DEFAULT_PRICE_CAP,
            log: Vec::new(),
        })
    }

    /// Market positioned at the last row of `panel`.
    pub fn from_panel(meta: Vec<StockMeta>, panel: &PricePanel) -> Result<Self> {
        let step = panel.t0() + panel.n_steps() - 1;
        Self::new(meta, panel.last_row().to_vec(), step)
    }

    pub fn with_price_cap(mut self, cap: f64) -> Self {
        self.price_cap = cap;
        self
    }

    pub fn meta(&self) -> &[StockMeta] {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut [StockMeta] {
        &mut self.meta
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn prices(&self) -> &[f64] {
        &self.state.prices
    }

    pub fn spend(&self) -> f64 {
        self.state.spend
    }

    pub fn step(&self) -> usize {
        self.state.step
    }

    pub fn price_cap(&self) -> f64 {
        self.price_cap
    }

    pub fn n_stocks(&self) -> usize {
        self.meta.len()
    }

    pub fn trade_log(&self) -> &[TradeRecord] {
        &self.log
    }

    /// Applies exogenous log-returns to every stock and advances one step.
    pub fn advance(&mut self, log_returns: &[f64]) -> Result<()> {
        if log_returns.len() != self.n_stocks() {
            return Err(Error::Contract("exogenous return vector has wrong length".into()));
        }
        let next: Vec<f64> = self
            .state
            .prices
            .iter()
            .zip(log_returns)
            .map(|(p, r)| p * r.exp())
            .collect();
        if let Some(p) = next.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::Generation {
                step: self.state.step + 1,
                reason: format!("exogenous move produced price {p}"),
            });
        }
        self.state.prices = next;
        self.state.step += 1;
        Ok(())
    }

    /// Billed attacker trade.
    pub fn execute_trade(&mut self, stock: usize, q: f64) -> Result<Fill> {
        let meta = self
            .meta
            .get(stock)
            .ok_or_else(|| Error::Contract(format!("unknown stock position {stock}")))?;
        let fill = execute_trade(&mut self.state, stock, meta, q)?;
        self.record(stock, q, TradeSource::Attacker);
        Ok(fill)
    }

    /// Unbilled trade by another participant; moves prices through the same impact model.
    pub fn execute_external(&mut self, stock: usize, q: f64, source: TradeSource) -> Result<Fill> {
        let meta = self
            .meta
            .get(stock)
            .ok_or_else(|| Error::Contract(format!("unknown stock position {stock}")))?;
        let fill = price_trade(&self.state.prices, stock, meta, q)?;
        self.state.prices[stock] += fill.price_change;
        self.record(stock, q, source);
        Ok(fill)
    }

    /// Shares that move `stock` by `fraction` of its current price.
    pub fn invert_impact(&self, stock: usize, fraction: f64) -> Result<f64> {
        invert_impact(&self.meta[stock], self.state.prices[stock], fraction, self.price_cap)
    }

    pub fn move_cost(&self, stock: usize, fraction: f64) -> f64 {
        move_cost(&self.meta[stock], self.state.prices[stock], fraction)
    }

    /// Cost the attacker would pay for `shares` of `stock` right now.
    pub fn move_cost_of_shares(&self, stock: usize, shares: f64) -> f64 {
        trade_impact(&self.meta[stock], self.state.prices[stock], shares).1
    }

    fn record(&mut self, stock: usize, shares: f64, source: TradeSource) {
        if shares != 0.0 {
            self.log.push(TradeRecord {
                step: self.state.step,
                stock,
                shares,
                source,
            });
        }
    }
}
