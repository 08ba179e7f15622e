use bta_core::agents::{max_drawdown, run_feedback, AgentPopulation, Follower};
use bta_core::forecast::{Action, ForecastModel, Thresholds};
use bta_core::market::{IndexSpec, Market, StockMeta};
use proptest::prelude::*;

fn meta(n: usize) -> Vec<StockMeta> {
    (0..n)
        .map(|i| StockMeta {
            ticker: format!("S{i}"),
            shares_outstanding: 1e7,
            adv: 1e6,
            lambda_impact: 0.1,
            half_spread: 0.0,
        })
        .collect()
}

fn constant(bias: f64, n: usize) -> ForecastModel {
    ForecastModel::linear(1, n, vec![0.0; n], bias).unwrap()
}

fn population(bias: f64, phi: f64, count: usize, recovery: bool) -> AgentPopulation {
    AgentPopulation {
        followers: (0..count).map(|_| Follower::new(constant(bias, 3), 1e7, 0.5)).collect(),
        phi,
        thresholds: Thresholds { sell: -0.001, buy: 0.001 },
        recovery,
    }
}

fn setup(pop: &mut AgentPopulation) -> (Market, bta_core::market::ResolvedIndex) {
    let m = meta(3);
    let prices = vec![50.0, 40.0, 30.0];
    let names = m.iter().map(|s| s.ticker.clone()).collect();
    let index = IndexSpec::with_base(names, &m, &prices, 1000.0).unwrap().resolve(&m).unwrap();
    pop.initialize_holdings(&index, &prices).unwrap();
    (Market::new(m, prices, 0).unwrap(), index)
}

fn brute_drawdown(path: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..path.len() {
        for j in i..path.len() {
            worst = worst.max((path[i] - path[j]) / path[i]);
        }
    }
    worst
}

proptest! {
    #[test]
    fn drawdown_matches_pairwise_search(path in prop::collection::vec(1.0..100.0f64, 1..60)) {
        let dd = max_drawdown(&path);
        prop_assert!((0.0..1.0).contains(&dd));
        prop_assert!((dd - brute_drawdown(&path)).abs() < 1e-12);
    }

    #[test]
    fn rising_paths_have_no_drawdown(mut path in prop::collection::vec(1.0..100.0f64, 1..60)) {
        path.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(max_drawdown(&path), 0.0);
    }
}

#[test]
fn sellers_liquidate_geometrically() {
    let mut pop = population(-0.01, 0.5, 2, false);
    let (mut market, index) = setup(&mut pop);
    let h0 = pop.followers[0].holdings.clone();
    let history = vec![vec![0.0; 3]];
    let noise = vec![vec![0.0; 3]; 4];
    let run = run_feedback(&mut pop, &mut market, &index, &history, &noise, 4).unwrap();
    for (h, h0) in pop.followers[0].holdings.iter().zip(&h0) {
        assert!((h - h0 * 0.5f64.powi(4)).abs() < 1e-6 * h0);
    }
    assert!(run.index_path.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(run.cascades, vec![0, 1, 2, 3]);
    assert!(run.events.iter().all(|e| e.signal == Action::Sell && e.volume < 0.0));
    assert_eq!(run.max_drawdown, max_drawdown(&run.index_path));
}

#[test]
fn zero_participation_leaves_only_exogenous_moves() {
    let mut pop = population(-0.01, 0.0, 3, false);
    let (mut market, index) = setup(&mut pop);
    let noise = vec![vec![0.001, -0.002, 0.0005]; 3];
    let run = run_feedback(&mut pop, &mut market, &index, &[vec![0.0; 3]], &noise, 3).unwrap();
    assert!(run.cascades.is_empty());
    assert!(market.trade_log().is_empty());
    for (t, row) in run.realized_rows.iter().enumerate() {
        for (a, b) in row.iter().zip(&noise[t]) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn holders_do_not_trade() {
    let mut pop = population(0.0, 1.0, 2, true);
    let (mut market, index) = setup(&mut pop);
    let run = run_feedback(&mut pop, &mut market, &index, &[vec![0.0; 3]], &vec![vec![0.0; 3]; 2], 2).unwrap();
    assert!(run.index_path.iter().all(|v| (v - 1000.0).abs() < 1e-9));
    assert!(run.events.iter().all(|e| e.signal == Action::Hold && e.volume == 0.0));
}

#[test]
fn buyers_with_full_holdings_stay_put() {
    // Recovery only buys back what was sold.
    let mut pop = population(0.01, 1.0, 2, true);
    let (mut market, index) = setup(&mut pop);
    let before = pop.followers[0].holdings.clone();
    run_feedback(&mut pop, &mut market, &index, &[vec![0.0; 3]], &vec![vec![0.0; 3]; 3], 3).unwrap();
    assert_eq!(pop.followers[0].holdings, before);
}

#[test]
fn invalid_population_is_rejected() {
    let mut pop = population(0.0, 1.5, 1, false);
    let m = meta(3);
    let names = m.iter().map(|s| s.ticker.clone()).collect();
    let index = IndexSpec::with_base(names, &m, &[1.0; 3], 10.0).unwrap().resolve(&m).unwrap();
    assert!(pop.initialize_holdings(&index, &[1.0; 3]).is_err());
}
