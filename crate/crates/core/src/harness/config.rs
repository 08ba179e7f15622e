//! Scenario files: one TOML document fixes a whole experiment.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::forecast::{ModelKind, Thresholds, TrainParams};
use crate::market::{MarketParams, ReturnModel, StockMeta, DEFAULT_PRICE_CAP};
use crate::transfer::VictimSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Sub-seed for a named stage: the first 8 bytes (little endian) of
/// `SHA-256(master.to_le_bytes() ‖ name)`.
pub fn sub_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StockConfig {
    pub ticker: String,
    pub shares_outstanding: f64,
    pub adv: f64,
    pub lambda_impact: f64,
    pub half_spread: f64,
    pub initial_price: f64,
    /// Per-step log-return volatility; ignored when `market.cov_factor` is set.
    #[serde(default)]
    pub vol: f64,
    #[serde(default)]
    pub drift: f64,
}

impl StockConfig {
    pub fn meta(&self) -> StockMeta {
        StockMeta {
            ticker: self.ticker.clone(),
            shares_outstanding: self.shares_outstanding,
            adv: self.adv,
            lambda_impact: self.lambda_impact,
            half_spread: self.half_spread,
        }
    }

    pub fn market_cap(&self) -> f64 {
        self.shares_outstanding * self.initial_price
    }
}

fn default_price_cap() -> f64 {
    DEFAULT_PRICE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub n_steps: usize,
    /// Uniform pairwise correlation used to build `Σ` from the stock vols.
    #[serde(default)]
    pub correlation: f64,
    /// Explicit lower-triangular factor; overrides vols and correlation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_factor: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_price_cap")]
    pub price_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    /// Defaults to every stock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<String>>,
    pub base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub kind: ModelKind,
    pub window_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimGrid {
    pub kinds: Vec<ModelKind>,
    pub window_lens: Vec<usize>,
    /// Independently seeded replicas per (kind, W).
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Fgsm,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub eps: f64,
    /// Trailing window rows the attacker realizes, one per market step.
    pub attack_rows: usize,
    pub sparsity_k: usize,
    /// Prediction the attack aims for; defaults to the sell threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub steps: usize,
    pub step_size: f64,
    pub per_stock_budget: f64,
    pub budget: f64,
    pub tolerance: f64,
    pub max_retrades: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Notional capital of each follower.
    pub capital: f64,
    pub sell_fraction: f64,
    pub phi: f64,
    pub phi_grid: Vec<f64>,
    #[serde(default)]
    pub recovery: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    pub adv_ratio: f64,
    pub adv_eps: f64,
    pub smooth_width: usize,
    pub detect_z: f64,
    pub detect_count: usize,
    pub normal_flow_fraction: f64,
    /// Steps of attack-free flow used for the false-positive rate.
    pub null_steps: usize,
    /// Upper end of the ε search for `attack_eps_to_flip`.
    pub flip_eps_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessConfig {
    /// Required fraction of victims signalling SELL.
    pub transfer_fraction: f64,
    /// Required index drawdown.
    pub drop_pct: f64,
    /// Feedback steps after the attack in which the drawdown must occur.
    pub horizon_steps: usize,
}

/// Provenance of a config produced by [`super::scale_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleMeta {
    pub factor: f64,
    pub parent_stocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub stocks: Vec<StockConfig>,
    pub market: MarketConfig,
    pub index: IndexConfig,
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub training: TrainParams,
    pub thresholds: Thresholds,
    pub victims: VictimGrid,
    pub attack: AttackConfig,
    pub agents: AgentConfig,
    pub defense: DefenseSection,
    pub success: SuccessConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleMeta>,
}

fn check(ok: bool, key: impl Into<String>, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(key, reason))
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            Error::validation(key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// First 12 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash12(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
    }

    pub fn seed(&self, stage: &str) -> u64 {
        sub_seed(self.master_seed, stage)
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn meta(&self) -> Vec<StockMeta> {
        self.stocks.iter().map(StockConfig::meta).collect()
    }

    pub fn tickers(&self) -> Vec<String> {
        self.stocks.iter().map(|s| s.ticker.clone()).collect()
    }

    pub fn index_members(&self) -> Vec<String> {
        self.index.members.clone().unwrap_or_else(|| self.tickers())
    }

    pub fn initial_prices(&self) -> Vec<f64> {
        self.stocks.iter().map(|s| s.initial_price).collect()
    }

    /// The attack target; defaults to the sell threshold.
    pub fn attack_target(&self) -> f64 {
        self.attack.target.unwrap_or(self.thresholds.sell)
    }

    pub fn cov_factor(&self) -> Result<Vec<Vec<f64>>> {
        if let Some(l) = &self.market.cov_factor {
            return Ok(l.clone());
        }
        let n = self.n_stocks();
        let rho = self.market.correlation;
        let sigma = DMatrix::from_fn(n, n, |i, j| {
            let c = if i == j { 1.0 } else { rho };
            c * self.stocks[i].vol * self.stocks[j].vol
        });
        if self.stocks.iter().all(|s| s.vol == 0.0) {
            return Ok(vec![vec![0.0; n]; n]);
        }
        let chol = sigma.cholesky().ok_or_else(|| {
            Error::validation(
                "market.correlation",
                "vols and correlation do not form a positive-definite covariance",
            )
        })?;
        let l = chol.l();
        Ok((0..n).map(|i| (0..n).map(|j| l[(i, j)]).collect()).collect())
    }

    pub fn return_model(&self) -> Result<ReturnModel> {
        Ok(ReturnModel {
            drift: self.stocks.iter().map(|s| s.drift).collect(),
            cov_factor: self.cov_factor()?,
        })
    }

    pub fn market_params(&self) -> Result<MarketParams> {
        Ok(MarketParams {
            n_steps: self.market.n_steps,
            returns: self.return_model()?,
            initial_prices: self.initial_prices(),
            seed: self.seed("market"),
        })
    }

    pub fn train_params(&self, seed: u64) -> TrainParams {
        TrainParams {
            seed,
            ..self.training
        }
    }

    /// Grid order: kind, then W, then replica.
    pub fn victim_specs(&self) -> Vec<VictimSpec> {
        let mut out = Vec::new();
        for &kind in &self.victims.kinds {
            for &w in &self.victims.window_lens {
                for r in 0..self.victims.replicas {
                    out.push(VictimSpec {
                        kind,
                        seed: self.seed(&format!("victim/{kind}/{w}/{r}")),
                        window_len: w,
                        hidden: self.victims.hidden,
                        ridge: None,
                    });
                }
            }
        }
        out
    }

    pub fn defense_config(&self) -> DefenseConfig {
        let d = &self.defense;
        DefenseConfig {
            adv_ratio: d.adv_ratio,
            adv_eps: d.adv_eps,
            smooth_width: d.smooth_width,
            detect_z: d.detect_z,
            detect_count: d.detect_count,
            normal_flow_fraction: d.normal_flow_fraction,
            seed: self.seed("defense"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            "unsupported schema version",
        )?;
        check(!self.stocks.is_empty(), "stocks", "need at least one stock")?;
        for (i, s) in self.stocks.iter().enumerate() {
            let key = |f: &str| format!("stocks[{i}].{f}");
            s.meta().validate().map_err(|e| match e {
                Error::Validation { key: k, reason } => Error::Validation {
                    key: format!("stocks[{i}].{}", k.rsplit('.').next().unwrap_or(&k)),
                    reason,
                },
                other => other,
            })?;
            check(
                s.initial_price > 0.0 && s.initial_price.is_finite(),
                key("initial_price"),
                "must be > 0",
            )?;
            check(s.vol >= 0.0 && s.vol.is_finite(), key("vol"), "must be >= 0")?;
            check(s.drift.is_finite(), key("drift"), "must be finite")?;
            if self.stocks[..i].iter().any(|o| o.ticker == s.ticker) {
                return Err(Error::validation(key("ticker"), "duplicate ticker"));
            }
        }
        let n = self.n_stocks();
        let w = self.surrogate.window_len;
        check(
            (-1.0..1.0).contains(&self.market.correlation),
            "market.correlation",
            "must lie in [-1, 1)",
        )?;
        check(
            self.market.price_cap > 0.0 && self.market.price_cap < 1.0,
            "market.price_cap",
            "must lie in (0, 1)",
        )?;
        self.market_params()?.validate()?;
        check(self.index.base > 0.0, "index.base", "must be > 0")?;
        let members = self.index_members();
        check(!members.is_empty(), "index.members", "must not be empty")?;
        for (k, m) in members.iter().enumerate() {
            check(
                self.stocks.iter().any(|s| &s.ticker == m),
                format!("index.members[{k}]"),
                "unknown ticker",
            )?;
        }
        check(w >= 1, "surrogate.window_len", "must be >= 1")?;
        check(
            self.market.n_steps > w + 1,
            "market.n_steps",
            "must exceed surrogate.window_len + 1",
        )?;
        self.thresholds.validate().map_err(|e| Error::validation("thresholds", e.to_string()))?;
        check(self.training.epochs >= 1, "training.epochs", "must be >= 1")?;
        check(self.training.batch_size >= 1, "training.batch_size", "must be >= 1")?;
        check(self.training.hidden >= 1, "training.hidden", "must be >= 1")?;
        check(self.training.ridge >= 0.0, "training.ridge", "must be >= 0")?;

        check(!self.victims.kinds.is_empty(), "victims.kinds", "must not be empty")?;
        check(self.victims.replicas >= 1, "victims.replicas", "must be >= 1")?;
        check(!self.victims.window_lens.is_empty(), "victims.window_lens", "must not be empty")?;
        for (k, &vw) in self.victims.window_lens.iter().enumerate() {
            check(
                vw >= 1 && vw <= w,
                format!("victims.window_lens[{k}]"),
                "must lie in 1..=surrogate.window_len",
            )?;
        }

        let a = &self.attack;
        check(a.eps > 0.0 && a.eps.is_finite(), "attack.eps", "must be > 0")?;
        check(
            a.eps.exp_m1().abs() < self.market.price_cap,
            "attack.eps",
            "moves of size eps exceed market.price_cap",
        )?;
        check(
            a.attack_rows >= 1 && a.attack_rows <= w,
            "attack.attack_rows",
            "must lie in 1..=surrogate.window_len",
        )?;
        check(
            a.sparsity_k >= 1 && a.sparsity_k <= n,
            "attack.sparsity_k",
            "must lie in 1..=number of stocks",
        )?;
        check(a.steps >= 1, "attack.steps", "must be >= 1")?;
        check(a.step_size > 0.0, "attack.step_size", "must be > 0")?;
        check(a.per_stock_budget >= 0.0, "attack.per_stock_budget", "must be >= 0")?;
        check(a.budget >= 0.0, "attack.budget", "must be >= 0")?;
        check(a.tolerance > 0.0, "attack.tolerance", "must be > 0")?;
        check(self.attack_target().is_finite(), "attack.target", "must be finite")?;

        let g = &self.agents;
        check(g.capital >= 0.0, "agents.capital", "must be >= 0")?;
        check(in_unit(g.sell_fraction), "agents.sell_fraction", "must lie in [0, 1]")?;
        check(in_unit(g.phi), "agents.phi", "must lie in [0, 1]")?;
        for (k, &p) in g.phi_grid.iter().enumerate() {
            check(in_unit(p), format!("agents.phi_grid[{k}]"), "must lie in [0, 1]")?;
        }
        check(
            g.phi_grid.windows(2).all(|p| p[0] < p[1]),
            "agents.phi_grid",
            "must be strictly increasing",
        )?;

        self.defense_config().validate(w)?;
        check(self.defense.null_steps >= 1, "defense.null_steps", "must be >= 1")?;
        check(self.defense.flip_eps_max > 0.0, "defense.flip_eps_max", "must be > 0")?;

        let s = &self.success;
        check(in_unit(s.transfer_fraction), "success.transfer_fraction", "must lie in [0, 1]")?;
        check(s.drop_pct >= 0.0, "success.drop_pct", "must be >= 0")?;
        check(s.horizon_steps >= 1, "success.horizon_steps", "must be >= 1")?;
        if let Some(m) = &self.scale {
            check(m.factor > 0.0 && m.factor <= 1.0, "scale.factor", "must lie in (0, 1]")?;
        }
        Ok(())
    }
}

/// Keeps the `⌈factor·N⌉` largest-cap stocks (original order preserved) and
/// scales budgets and follower capital by the same factor.
pub fn scale_scenario(config: &ScenarioConfig, factor: f64) -> Result<ScenarioConfig> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::validation("factor", "must lie in (0, 1]"));
    }
    let n = config.n_stocks();
    let keep_n = (factor * n as f64).ceil() as usize;
    if keep_n == 0 {
        return Err(Error::validation("factor", "scaled scenario has no stocks"));
    }
    let mut by_cap: Vec<usize> = (0..n).collect();
    by_cap.sort_by(|&a, &b| {
        config.stocks[b]
            .market_cap()
            .partial_cmp(&config.stocks[a].market_cap())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = by_cap[..keep_n].to_vec();
    keep.sort_unstable();

    let mut out = config.clone();
    out.stocks = keep.iter().map(|&i| config.stocks[i].clone()).collect();
    if let Some(l) = config.market.cov_factor.as_ref().filter(|_| keep_n < n) {
        let sigma = DMatrix::from_fn(keep_n, keep_n, |a, b| {
            let (i, j) = (keep[a], keep[b]);
            (0..n).map(|k| l[i][k] * l[j][k]).sum::<f64>()
        });
        let chol = sigma.cholesky().ok_or_else(|| {
            Error::validation("market.cov_factor", "scaled covariance is not positive definite")
        })?;
        let lk = chol.l();
        out.market.cov_factor =
            Some((0..keep_n).map(|i| (0..keep_n).map(|j| lk[(i, j)]).collect()).collect());
    }
    if let Some(members) = &config.index.members {
        let kept: Vec<String> = members
            .iter()
            .filter(|m| out.stocks.iter().any(|s| &s.ticker == *m))
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(Error::validation("index.members", "no index member survives scaling"));
        }
        out.index.members = Some(kept);
    }
    out.attack.sparsity_k = config.attack.sparsity_k.min(keep_n);
    out.attack.budget *= factor;
    out.attack.per_stock_budget *= factor;
    out.agents.capital *= factor;
    out.defense.detect_count = config.defense.detect_count.min(keep_n);
    out.scale = Some(ScaleMeta {
        factor,
        parent_stocks: config.scale.as_ref().map_or(n, |m| m.parent_stocks),
    });
    out.validate()?;
    Ok(out)
}
