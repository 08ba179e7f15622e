use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttackMethod, Run, ScenarioConfig, Stage};
use crate::agents::{max_drawdown, run_feedback, AgentPopulation, Follower};
use crate::attack::{
    fgsm, iterative_attack, select_sparse_mask, universal_perturbation, AttackMode, AttackSpec,
    Perturbation,
};
use crate::defense::{
    adversarial_mse, adversarial_train, eps_to_flip, detect_coordination, moving_median,
    smoothed_mse, write_defense_csv, DefenseRow, FlowLog,
};
use crate::error::{Error, Result};
use crate::forecast::{build_dataset, mse, train, Action, ForecastModel, Sample, Window};
use crate::market::{
    classify_manipulable, generate_market, IndexSpec, Market, PricePanel, TradeRecord,
    TradeSource,
};
use crate::realization::{compile_plan, realize, targets_from_perturbation, RealizeConfig, TradePlan};
use crate::transfer::{
    evaluate_transfer, evaluate_transfer_realized, train_ensemble, TransferReport, Victim,
    VictimEnsemble, VictimSpec,
};

const SCENARIO: &str = "scenario.toml";
const PANEL: &str = "panel.csv";
const SURROGATE: &str = "surrogate.json";
const VICTIMS: &str = "victims.json";
const TRAIN_METRICS: &str = "train_metrics.csv";
const PERTURBATION: &str = "perturbation.json";
const UNIVERSAL: &str = "universal.json";
const PLAN: &str = "trade_plan.json";
const ATTACK_SUMMARY: &str = "attack_summary.json";
const EXECUTION_JSON: &str = "execution.json";
const EXECUTION_CSV: &str = "execution.csv";
const ATTACK_PATH: &str = "attack_path.csv";
const COUNTERFACTUAL: &str = "counterfactual_path.csv";
const ATTACKER_TRADES: &str = "attacker_trades.csv";
const FEEDBACK_EVENTS: &str = "feedback_events.csv";
const INDEX_PATH: &str = "index_path.csv";
const PHI_SWEEP: &str = "phi_sweep.csv";
const TRANSFER: &str = "transfer.csv";
const TRANSFER_SYNTHETIC: &str = "transfer_synthetic.csv";
const TRANSFER_SUMMARY: &str = "transfer_summary.json";
const DEFENSE: &str = "defense.csv";
const REPORT: &str = "report.json";

/// Stages whose outputs `stage` reads, in pipeline order.
fn prerequisites(stage: Stage) -> &'static [Stage] {
    use Stage::*;
    match stage {
        Generate => &[],
        Train => &[Generate],
        Attack => &[Generate, Train],
        Realize => &[Generate, Attack],
        Feedback => &[Generate, Train, Realize],
        Transfer | Defend => &[Generate, Train, Attack, Realize],
        Report => &[Generate, Train, Attack, Realize, Feedback, Transfer, Defend],
    }
}

pub(super) fn run(run: &Run, stage: Stage) -> Result<Vec<PathBuf>> {
    // Point at the earliest missing stage rather than whichever file is read first.
    let artifacts = stage_artifacts();
    for dep in prerequisites(stage) {
        for f in &artifacts[dep.name()] {
            run.require(*dep, f)?;
        }
    }
    match stage {
        Stage::Generate => generate(run),
        Stage::Train => train_stage(run),
        Stage::Attack => attack(run),
        Stage::Realize => realize_stage(run),
        Stage::Feedback => feedback(run),
        Stage::Transfer => transfer(run),
        Stage::Defend => defend(run),
        Stage::Report => report(run),
    }
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

fn load_panel(run: &Run) -> Result<PricePanel> {
    PricePanel::read_csv(&run.require(Stage::Generate, PANEL)?)
}

fn index_spec(cfg: &ScenarioConfig, panel: &PricePanel) -> Result<IndexSpec> {
    IndexSpec::with_base(cfg.index_members(), &cfg.meta(), panel.row(0), cfg.index.base)
}

fn live_market(cfg: &ScenarioConfig, panel: &PricePanel) -> Result<Market> {
    Ok(Market::from_panel(cfg.meta(), panel)?.with_price_cap(cfg.market.price_cap))
}

/// The window the attacker targets: the last `W − attack_rows` observed
/// return rows followed by `attack_rows` rows of zero (the assumed clean
/// future the attacker will overwrite).
pub fn attack_window(cfg: &ScenarioConfig, panel: &PricePanel) -> Result<Window> {
    let w = cfg.surrogate.window_len;
    let h = cfg.attack.attack_rows;
    let n = panel.n_stocks();
    let t = panel.n_steps();
    if t < w - h + 1 {
        return Err(Error::Contract("panel too short for the attack window".into()));
    }
    let mut x = Vec::with_capacity(w * n);
    for r in t - (w - h)..t {
        x.extend(panel.log_returns(r));
    }
    x.resize(w * n, 0.0);
    Window::new(x, w, n, panel.t0() + t - 1 + h)
}

/// Observed history followed by the rows of `path` (row 0 is the pre-attack state).
fn window_with_path(cfg: &ScenarioConfig, panel: &PricePanel, path: &PricePanel) -> Result<Window> {
    let clean = attack_window(cfg, panel)?;
    let h = cfg.attack.attack_rows;
    let n = panel.n_stocks();
    let mut x = clean.x[..(clean.window_len - h) * n].to_vec();
    for r in 1..=h {
        if r < path.n_steps() {
            x.extend(path.log_returns(r));
        } else {
            return Err(Error::Contract("attack path shorter than attack_rows".into()));
        }
    }
    Window::new(x, clean.window_len, n, clean.end_step)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VictimDoc {
    id: usize,
    spec: VictimSpec,
    model: ForecastModel,
}

fn load_victims(run: &Run) -> Result<VictimEnsemble> {
    let docs: Vec<VictimDoc> = serde_json::from_str(&run.read(Stage::Train, VICTIMS)?)?;
    Ok(VictimEnsemble {
        victims: docs
            .into_iter()
            .map(|d| Victim {
                spec: d.spec,
                model: d.model,
            })
            .collect(),
    })
}

fn load_surrogate(run: &Run) -> Result<ForecastModel> {
    ForecastModel::load(&run.require(Stage::Train, SURROGATE)?)
}

fn generate(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let panel = generate_market(&cfg.market_params()?, &cfg.meta())?;
    let scenario = run.write(SCENARIO, cfg.to_toml()?)?;
    let panel_path = run.path(PANEL);
    panel.write_csv(&panel_path)?;
    Ok(vec![scenario, panel_path])
}

fn train_stage(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let panel = load_panel(run)?;
    let meta = cfg.meta();
    let index = index_spec(cfg, &panel)?;
    let data = build_dataset(&panel, &index, &meta, cfg.surrogate.window_len)?;
    let surrogate = train(cfg.surrogate.kind, &data, &cfg.train_params(cfg.seed("surrogate")))?;
    let ensemble = train_ensemble(&panel, &index, &meta, &cfg.victim_specs(), &cfg.training)?;

    let surrogate_path = run.path(SURROGATE);
    surrogate.save(&surrogate_path)?;
    let docs: Vec<VictimDoc> = ensemble
        .victims
        .iter()
        .enumerate()
        .map(|(id, v)| VictimDoc {
            id,
            spec: v.spec.clone(),
            model: v.model.clone(),
        })
        .collect();
    let victims_path = run.write(VICTIMS, serde_json::to_string_pretty(&docs)?)?;

    let row = |name: String, m: &ForecastModel| {
        vec![
            name,
            m.kind.to_string(),
            m.window_len.to_string(),
            m.hidden.to_string(),
            m.train_seed.to_string(),
            m.train_mse.to_string(),
        ]
    };
    let mut rows = vec![row("surrogate".into(), &surrogate)];
    rows.extend(docs.iter().map(|d| row(format!("victim_{}", d.id), &d.model)));
    let metrics = run.write(
        TRAIN_METRICS,
        to_csv(&["model", "kind", "W", "H", "seed", "train_mse"], rows)?,
    )?;
    Ok(vec![surrogate_path, victims_path, metrics])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AttackSummary {
    manipulable: Vec<String>,
    /// Stock positions chosen by sparse selection.
    selected: Vec<usize>,
    selected_tickers: Vec<String>,
    move_costs: Vec<f64>,
    target: f64,
    y_clean: f64,
    y_adv: f64,
    adv_action: Action,
    est_cost: f64,
    universal_success_fraction: f64,
}

/// Mask over the trailing `attack_rows` rows of the chosen stocks.
fn row_mask(cfg: &ScenarioConfig, n: usize, stocks: &[bool]) -> Vec<bool> {
    let w = cfg.surrogate.window_len;
    let first = w - cfg.attack.attack_rows;
    (0..w * n).map(|k| k / n >= first && stocks[k % n]).collect()
}

fn attack(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let a = &cfg.attack;
    let surrogate = load_surrogate(run)?;
    let panel = load_panel(run)?;
    let meta = cfg.meta();
    let tickers = cfg.tickers();
    let n = meta.len();
    let w = cfg.surrogate.window_len;
    let market = live_market(cfg, &panel)?;
    let window = attack_window(cfg, &panel)?;

    let move_frac = a.eps.exp_m1();
    let manipulable = classify_manipulable(&meta, market.prices(), move_frac, a.per_stock_budget);
    let costs: Vec<f64> = (0..n).map(|i| market.move_cost(i, move_frac)).collect();
    let target = cfg.attack_target();
    let base = AttackSpec::full(w, n, a.eps, AttackMode::Targeted { target })
        .with_mask(row_mask(cfg, n, &manipulable))
        .with_steps(a.steps, a.step_size);
    let mask = select_sparse_mask(&surrogate, &window, &base.mask, &costs, &tickers, a.sparsity_k)?;
    let mut spec = base.with_mask(mask);
    spec.sparsity_k = a.sparsity_k;
    spec.validate()?;

    let mut p = match a.method {
        AttackMethod::Fgsm => fgsm(&surrogate, &window, &spec)?,
        AttackMethod::Iterative => iterative_attack(&surrogate, &window, &spec)?,
    };
    p.check_feasible(&spec)?;
    let targets = targets_from_perturbation(&p, w - a.attack_rows);
    let plan = compile_plan(&targets, &market, a.budget)?;
    p.est_cost = Some(plan.est_cost);

    let index = index_spec(cfg, &panel)?;
    let windows: Vec<Window> = build_dataset(&panel, &index, &meta, w)?
        .into_iter()
        .map(|s| s.window)
        .collect();
    let universal = universal_perturbation(&surrogate, &windows, &spec)?;
    universal.check_feasible(&spec)?;

    let selected = spec.mask_stocks();
    let summary = AttackSummary {
        manipulable: tickers
            .iter()
            .zip(&manipulable)
            .filter(|(_, m)| **m)
            .map(|(t, _)| t.clone())
            .collect(),
        selected_tickers: selected.iter().map(|&i| tickers[i].clone()).collect(),
        selected,
        move_costs: costs,
        target,
        y_clean: p.y_before,
        y_adv: p.y_after,
        adv_action: cfg.thresholds.action(p.y_after),
        est_cost: plan.est_cost,
        universal_success_fraction: universal.success_fraction.unwrap_or(0.0),
    };

    let p_path = run.path(PERTURBATION);
    p.save(&p_path)?;
    let u_path = run.path(UNIVERSAL);
    universal.save(&u_path)?;
    let plan_path = run.write(PLAN, serde_json::to_string_pretty(&plan)?)?;
    let summary_path = run.write(ATTACK_SUMMARY, serde_json::to_string_pretty(&summary)?)?;
    Ok(vec![p_path, u_path, plan_path, summary_path])
}

fn realize_stage(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let plan: TradePlan = serde_json::from_str(&run.read(Stage::Attack, PLAN)?)?;
    let panel = load_panel(run)?;
    let mut market = live_market(cfg, &panel)?;
    let mut counterfactual = market.clone();
    let steps = cfg.attack.attack_rows;
    let noise = cfg.return_model()?.sample_stream(steps, cfg.seed("realize"));
    let rc = RealizeConfig {
        tolerance: cfg.attack.tolerance,
        max_retrades: cfg.attack.max_retrades,
    };
    let real = realize(&plan, &mut market, &noise, rc)?;
    let mut path = real.panel;
    // The plan may end early (trailing zero targets or an abort); the market
    // keeps moving without the attacker.
    for row in &noise[path.n_steps() - 1..] {
        market.advance(row)?;
        path.push_row(market.prices())?;
    }
    let mut cf_path = PricePanel::new(
        cfg.tickers(),
        vec![counterfactual.prices().to_vec()],
        counterfactual.step(),
    )?;
    for row in &noise {
        counterfactual.advance(row)?;
        cf_path.push_row(counterfactual.prices())?;
    }

    let json = run.path(EXECUTION_JSON);
    let csv_path = run.path(EXECUTION_CSV);
    real.report.save(&json, &csv_path)?;
    let path_file = run.path(ATTACK_PATH);
    path.write_csv(&path_file)?;
    let cf_file = run.path(COUNTERFACTUAL);
    cf_path.write_csv(&cf_file)?;
    let tickers = cfg.tickers();
    let trades = market
        .trade_log()
        .iter()
        .filter(|r| r.source == TradeSource::Attacker)
        .map(|r| {
            vec![
                r.step.to_string(),
                r.stock.to_string(),
                tickers[r.stock].clone(),
                r.shares.to_string(),
            ]
        });
    let trades_file = run.write(ATTACKER_TRADES, to_csv(&["step", "stock", "ticker", "shares"], trades)?)?;
    Ok(vec![json, csv_path, path_file, cf_file, trades_file])
}

fn load_attacker_trades(run: &Run) -> Result<Vec<TradeRecord>> {
    #[derive(Deserialize)]
    struct Row {
        step: usize,
        stock: usize,
        #[allow(dead_code)]
        ticker: String,
        shares: f64,
    }
    let p = run.require(Stage::Realize, ATTACKER_TRADES)?;
    let mut r = csv::Reader::from_path(&p)?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(TradeRecord {
                step: row.step,
                stock: row.stock,
                shares: row.shares,
                source: TradeSource::Attacker,
            })
        })
        .collect()
}

struct FeedbackOutcome {
    /// Pre-attack level, one level per attack step, then one per feedback step.
    path: Vec<f64>,
    run: crate::agents::FeedbackRun,
}

fn simulate_feedback(
    cfg: &ScenarioConfig,
    panel: &PricePanel,
    attack_path: &PricePanel,
    ensemble: &VictimEnsemble,
    phi: f64,
) -> Result<FeedbackOutcome> {
    let meta = cfg.meta();
    let index = index_spec(cfg, panel)?.resolve(&meta)?;
    let horizon = cfg.success.horizon_steps;
    let mut history: Vec<Vec<f64>> = (1..panel.n_steps()).map(|t| panel.log_returns(t)).collect();
    history.extend((1..attack_path.n_steps()).map(|t| attack_path.log_returns(t)));
    let noise = cfg.return_model()?.sample_stream(horizon, cfg.seed("feedback"));
    let mut market = live_market(cfg, attack_path)?;
    let mut population = AgentPopulation {
        followers: ensemble
            .victims
            .iter()
            .map(|v| Follower::new(v.model.clone(), cfg.agents.capital, cfg.agents.sell_fraction))
            .collect(),
        phi,
        thresholds: cfg.thresholds,
        recovery: cfg.agents.recovery,
    };
    population.validate()?;
    population.initialize_holdings(&index, attack_path.row(0))?;
    let fb = run_feedback(&mut population, &mut market, &index, &history, &noise, horizon)?;
    let mut path: Vec<f64> = (0..attack_path.n_steps())
        .map(|t| index.level(attack_path.row(t)))
        .collect();
    path.extend_from_slice(&fb.index_path[1..]);
    Ok(FeedbackOutcome { path, run: fb })
}

fn feedback(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let panel = load_panel(run)?;
    let attack_path = PricePanel::read_csv(&run.require(Stage::Realize, ATTACK_PATH)?)?;
    let ensemble = load_victims(run)?;

    let main = simulate_feedback(cfg, &panel, &attack_path, &ensemble, cfg.agents.phi)?;
    let mut events = Vec::new();
    main.run.write_events_csv(&mut events)?;
    let events_path = run.write(FEEDBACK_EVENTS, events)?;

    let start = attack_path.t0();
    let n_attack = attack_path.n_steps() - 1;
    let index_rows = main.path.iter().enumerate().map(|(k, v)| {
        let phase = match k {
            0 => "pre",
            k if k <= n_attack => "attack",
            _ => "feedback",
        };
        vec![(start + k).to_string(), phase.to_string(), v.to_string()]
    });
    let index_path = run.write(INDEX_PATH, to_csv(&["step", "phase", "index_value"], index_rows)?)?;

    let mut sweep = Vec::with_capacity(cfg.agents.phi_grid.len());
    for &phi in &cfg.agents.phi_grid {
        let out = simulate_feedback(cfg, &panel, &attack_path, &ensemble, phi)?;
        sweep.push(vec![
            phi.to_string(),
            max_drawdown(&out.path).to_string(),
            out.run.cascades.len().to_string(),
        ]);
    }
    let sweep_path = run.write(PHI_SWEEP, to_csv(&["phi", "max_drawdown", "cascade_steps"], sweep)?)?;
    Ok(vec![events_path, index_path, sweep_path])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRates {
    pub transfer_rate: f64,
    pub clean_false_sell_rate: f64,
    pub newly_flipped_rate: f64,
}

impl From<&TransferReport> for TransferRates {
    fn from(r: &TransferReport) -> Self {
        Self {
            transfer_rate: r.transfer_rate,
            clean_false_sell_rate: r.clean_false_sell_rate,
            newly_flipped_rate: r.newly_flipped_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TransferSummary {
    synthetic: TransferRates,
    realized: TransferRates,
}

fn transfer(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let panel = load_panel(run)?;
    let ensemble = load_victims(run)?;
    let p = Perturbation::load(&run.require(Stage::Attack, PERTURBATION)?)?;
    let attack_path = PricePanel::read_csv(&run.require(Stage::Realize, ATTACK_PATH)?)?;
    let cf_path = PricePanel::read_csv(&run.require(Stage::Realize, COUNTERFACTUAL)?)?;

    let clean = attack_window(cfg, &panel)?;
    let synthetic = evaluate_transfer(&ensemble, &clean, &p, &cfg.thresholds)?;
    let realized = evaluate_transfer_realized(
        &ensemble,
        &window_with_path(cfg, &panel, &cf_path)?,
        &window_with_path(cfg, &panel, &attack_path)?,
        &cfg.thresholds,
    )?;

    let mut buf = Vec::new();
    realized.write_csv(&mut buf)?;
    let real_path = run.write(TRANSFER, buf)?;
    let mut buf = Vec::new();
    synthetic.write_csv(&mut buf)?;
    let syn_path = run.write(TRANSFER_SYNTHETIC, buf)?;
    let summary = TransferSummary {
        synthetic: (&synthetic).into(),
        realized: (&realized).into(),
    };
    let summary_path = run.write(TRANSFER_SUMMARY, serde_json::to_string_pretty(&summary)?)?;
    Ok(vec![real_path, syn_path, summary_path])
}

fn smoothed_adv_mse(model: &ForecastModel, data: &[Sample], eps: f64, m: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let spec = AttackSpec::full(model.window_len, model.n_inputs, eps, AttackMode::Untargeted);
    let mut total = 0.0;
    for s in data {
        let adv = if eps > 0.0 {
            s.window.add(&fgsm(model, &s.window, &spec)?.delta)?
        } else {
            s.window.clone()
        };
        let y = model.predict_return(&moving_median(&adv, m)?)?;
        total += (y - s.label).powi(2);
    }
    Ok(total / data.len() as f64)
}

fn defend(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let d = &cfg.defense;
    let dc = cfg.defense_config();
    let panel = load_panel(run)?;
    let meta = cfg.meta();
    let plain = load_surrogate(run)?;
    let summary: AttackSummary = serde_json::from_str(&run.read(Stage::Attack, ATTACK_SUMMARY)?)?;
    let trades = load_attacker_trades(run)?;
    let attack_path = PricePanel::read_csv(&run.require(Stage::Realize, ATTACK_PATH)?)?;

    let index = index_spec(cfg, &panel)?;
    let data = build_dataset(&panel, &index, &meta, cfg.surrogate.window_len)?;
    let hp = cfg.train_params(cfg.seed("surrogate"));
    let adv = adversarial_train(cfg.surrogate.kind, &data, &hp, &dc)?;

    let window = attack_window(cfg, &panel)?;
    let mut stocks = vec![false; meta.len()];
    for &i in &summary.selected {
        stocks[i] = true;
    }
    let mask = row_mask(cfg, meta.len(), &stocks);
    let flip = |m: &ForecastModel| {
        eps_to_flip(m, &window, &mask, cfg.attack_target(), cfg.attack.steps, d.flip_eps_max, 1e-6)
    };

    let n_attack = attack_path.n_steps() - 1;
    let mut attack_flow = FlowLog::background(
        &meta,
        attack_path.t0() + 1,
        n_attack,
        d.normal_flow_fraction,
        cfg.seed("background"),
    );
    attack_flow.add_records(&trades);
    let attack_alarms = detect_coordination(&attack_flow, &meta, &dc);
    let null_flow = FlowLog::background(&meta, 0, d.null_steps, d.normal_flow_fraction, cfg.seed("null"));
    let null_alarms = detect_coordination(&null_flow, &meta, &dc);

    let rows = vec![
        DefenseRow {
            defense: "none".into(),
            param: 0.0,
            clean_mse: Some(mse(&plain, &data)),
            adv_mse: Some(adversarial_mse(&plain, &data, d.adv_eps)?),
            attack_eps_to_flip: flip(&plain)?,
            alarm_rate: None,
            false_positive_rate: None,
        },
        DefenseRow {
            defense: "adversarial_training".into(),
            param: d.adv_ratio,
            clean_mse: Some(adv.clean_mse),
            adv_mse: Some(adv.adv_mse),
            attack_eps_to_flip: flip(&adv.model)?,
            alarm_rate: None,
            false_positive_rate: None,
        },
        DefenseRow {
            defense: "smoothing".into(),
            param: d.smooth_width as f64,
            clean_mse: Some(smoothed_mse(&plain, &data, d.smooth_width)?),
            adv_mse: Some(smoothed_adv_mse(&plain, &data, d.adv_eps, d.smooth_width)?),
            attack_eps_to_flip: None,
            alarm_rate: None,
            false_positive_rate: None,
        },
        DefenseRow {
            defense: "detection".into(),
            param: d.detect_z,
            clean_mse: None,
            adv_mse: None,
            attack_eps_to_flip: None,
            alarm_rate: Some(attack_alarms.alarm_rate()),
            false_positive_rate: Some(null_alarms.alarm_rate()),
        },
    ];
    let mut buf = Vec::new();
    write_defense_csv(&rows, &mut buf)?;
    Ok(vec![run.write(DEFENSE, buf)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessFlags {
    pub transfer_rate: f64,
    pub max_drawdown: f64,
    /// Enough victims signal SELL on the realized window.
    pub success_i: bool,
    /// The index drawdown reaches `drop_pct` within the horizon.
    pub success_ii: bool,
}

/// Recomputes both success flags from `transfer.csv` and `index_path.csv`.
pub fn evaluate_success(dir: &Path, cfg: &ScenarioConfig) -> Result<SuccessFlags> {
    #[derive(Deserialize)]
    struct TransferCsvRow {
        flipped: bool,
    }
    #[derive(Deserialize)]
    struct IndexCsvRow {
        phase: String,
        index_value: f64,
    }
    let need = |stage: Stage, name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Dependency {
                stage: stage.name().into(),
                path: p,
            })
        }
    };
    let flips: Vec<bool> = csv::Reader::from_path(need(Stage::Transfer, TRANSFER)?)?
        .deserialize::<TransferCsvRow>()
        .map(|r| r.map(|r| r.flipped))
        .collect::<std::result::Result<_, _>>()?;
    let transfer_rate = if flips.is_empty() {
        0.0
    } else {
        flips.iter().filter(|f| **f).count() as f64 / flips.len() as f64
    };

    let rows: Vec<IndexCsvRow> = csv::Reader::from_path(need(Stage::Feedback, INDEX_PATH)?)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let mut path = Vec::with_capacity(rows.len());
    let mut feedback_steps = 0;
    for r in rows {
        if r.phase == "feedback" {
            if feedback_steps == cfg.success.horizon_steps {
                break;
            }
            feedback_steps += 1;
        }
        path.push(r.index_value);
    }
    let dd = max_drawdown(&path);
    Ok(SuccessFlags {
        transfer_rate,
        max_drawdown: dd,
        success_i: transfer_rate >= cfg.success.transfer_fraction,
        success_ii: dd >= cfg.success.drop_pct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub master_seed: u64,
    /// Artifact file names per stage.
    pub artifacts: BTreeMap<String, Vec<String>>,
    pub transfer_fraction: f64,
    pub drop_pct: f64,
    pub horizon_steps: usize,
    pub transfer_rate: f64,
    pub clean_false_sell_rate: f64,
    pub synthetic_transfer_rate: f64,
    pub synthetic_clean_false_sell_rate: f64,
    pub max_drawdown: f64,
    /// Smallest swept φ whose drawdown reaches `drop_pct`.
    pub phi_star: Option<f64>,
    pub realization_outcome: String,
    pub attack_spend: f64,
    pub success_i: bool,
    pub success_ii: bool,
}

impl RunReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(REPORT);
        if !p.exists() {
            return Err(Error::Dependency {
                stage: Stage::Report.name().into(),
                path: p,
            });
        }
        let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

fn stage_artifacts() -> BTreeMap<String, Vec<String>> {
    let table: [(Stage, &[&str]); 7] = [
        (Stage::Generate, &[SCENARIO, PANEL]),
        (Stage::Train, &[SURROGATE, VICTIMS, TRAIN_METRICS]),
        (Stage::Attack, &[PERTURBATION, UNIVERSAL, PLAN, ATTACK_SUMMARY]),
        (
            Stage::Realize,
            &[EXECUTION_JSON, EXECUTION_CSV, ATTACK_PATH, COUNTERFACTUAL, ATTACKER_TRADES],
        ),
        (Stage::Feedback, &[FEEDBACK_EVENTS, INDEX_PATH, PHI_SWEEP]),
        (Stage::Transfer, &[TRANSFER, TRANSFER_SYNTHETIC, TRANSFER_SUMMARY]),
        (Stage::Defend, &[DEFENSE]),
    ];
    table
        .into_iter()
        .map(|(s, files)| (s.name().to_string(), files.iter().map(|f| f.to_string()).collect()))
        .collect()
}

fn report(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let artifacts = stage_artifacts();
    for (stage, files) in &artifacts {
        let stage: Stage = stage.parse()?;
        for f in files {
            run.require(stage, f)?;
        }
    }
    let flags = evaluate_success(&run.dir, cfg)?;
    let summary: TransferSummary = serde_json::from_str(&run.read(Stage::Transfer, TRANSFER_SUMMARY)?)?;
    let exec: serde_json::Value = serde_json::from_str(&run.read(Stage::Realize, EXECUTION_JSON)?)?;

    #[derive(Deserialize)]
    struct SweepRow {
        phi: f64,
        max_drawdown: f64,
    }
    let sweep: Vec<SweepRow> = csv::Reader::from_path(run.require(Stage::Feedback, PHI_SWEEP)?)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let phi_star = sweep
        .iter()
        .find(|r| r.max_drawdown >= cfg.success.drop_pct)
        .map(|r| r.phi);

    let report = RunReport {
        config_hash: cfg.hash12()?,
        master_seed: cfg.master_seed,
        artifacts,
        transfer_fraction: cfg.success.transfer_fraction,
        drop_pct: cfg.success.drop_pct,
        horizon_steps: cfg.success.horizon_steps,
        transfer_rate: flags.transfer_rate,
        clean_false_sell_rate: summary.realized.clean_false_sell_rate,
        synthetic_transfer_rate: summary.synthetic.transfer_rate,
        synthetic_clean_false_sell_rate: summary.synthetic.clean_false_sell_rate,
        max_drawdown: flags.max_drawdown,
        phi_star,
        realization_outcome: exec["outcome"].as_str().unwrap_or("").to_string(),
        attack_spend: exec["total_spend"].as_f64().unwrap_or(f64::NAN),
        success_i: flags.success_i,
        success_ii: flags.success_ii,
    };
    Ok(vec![run.write(REPORT, serde_json::to_string_pretty(&report)?)?])
}
