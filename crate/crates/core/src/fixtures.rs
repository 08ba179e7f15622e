//! Bundled scenarios used by the tests, the CLI docs and the FFI smoke test.

use crate::error::Result;
use crate::harness::ScenarioConfig;
use crate::market::{Market, ReturnModel, StockMeta};
use crate::realization::{compile_plan, Target, TradePlan};

pub const DEMO_TOML: &str = include_str!("../scenarios/demo.toml");

pub fn demo_config() -> ScenarioConfig {
    ScenarioConfig::from_toml(DEMO_TOML).expect("bundled demo config is valid")
}

/// Budget headroom over the noise-free cost estimate of the five-stock plan.
pub const FIVE_STOCK_BUDGET_MARGIN: f64 = 1.05;

pub fn five_stock_market() -> Market {
    let spec = [
        ("AAA", 2.0e8, 2.0e6, 0.10, 0.0005, 100.0),
        ("BBB", 1.5e8, 1.5e6, 0.12, 0.0005, 80.0),
        ("CCC", 1.0e8, 1.0e6, 0.15, 0.0008, 60.0),
        ("DDD", 8.0e7, 8.0e5, 0.20, 0.0010, 40.0),
        ("EEE", 5.0e7, 5.0e5, 0.25, 0.0015, 25.0),
    ];
    let meta = spec
        .iter()
        .map(|&(t, s, adv, l, hs, _)| StockMeta {
            ticker: t.into(),
            shares_outstanding: s,
            adv,
            lambda_impact: l,
            half_spread: hs,
        })
        .collect();
    let prices = spec.iter().map(|s| s.5).collect();
    Market::new(meta, prices, 0).expect("fixture market is valid")
}

/// Three steps of alternating ±1% log-return targets on all five stocks.
pub fn five_stock_targets() -> Vec<Target> {
    (0..3)
        .flat_map(|step| {
            (0..5).map(move |stock| Target {
                step,
                stock,
                log_return: if (step + stock) % 2 == 0 { -0.01 } else { 0.01 },
            })
        })
        .collect()
}

pub fn five_stock_plan(market: &Market) -> Result<TradePlan> {
    let plan = compile_plan(&five_stock_targets(), market, f64::INFINITY)?;
    let budget = plan.est_cost * FIVE_STOCK_BUDGET_MARGIN;
    Ok(plan.with_budget(budget))
}

/// Independent exogenous returns with per-step volatility `sigma`.
pub fn iid_noise(n_stocks: usize, sigma: f64) -> ReturnModel {
    ReturnModel {
        drift: vec![0.0; n_stocks],
        cov_factor: (0..n_stocks)
            .map(|i| (0..n_stocks).map(|j| if i == j { sigma } else { 0.0 }).collect())
            .collect(),
    }
}
