//! Black-box transfer of surrogate-crafted perturbations to victim models.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::Perturbation;
use crate::error::{Error, Result};
use crate::forecast::{
    build_dataset, train, Action, ForecastModel, ModelKind, Thresholds, TrainParams, Window,
};
use crate::market::{IndexSpec, PricePanel, StockMeta};

/// One grid entry; unset fields fall back to the base training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimSpec {
    pub kind: ModelKind,
    pub seed: u64,
    pub window_len: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub ridge: Option<f64>,
}

impl VictimSpec {
    pub fn train_params(&self, base: &TrainParams) -> TrainParams {
        TrainParams {
            seed: self.seed,
            hidden: self.hidden.unwrap_or(base.hidden),
            ridge: self.ridge.unwrap_or(base.ridge),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Victim {
    pub spec: VictimSpec,
    pub model: ForecastModel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VictimEnsemble {
    pub victims: Vec<Victim>,
}

/// Trains every grid entry in grid order.
pub fn train_ensemble(
    panel: &PricePanel,
    index: &IndexSpec,
    meta: &[StockMeta],
    grid: &[VictimSpec],
    base: &TrainParams,
) -> Result<VictimEnsemble> {
    if grid.is_empty() {
        return Err(Error::validation("victims", "victim grid is empty"));
    }
    let mut datasets: Vec<(usize, Vec<crate::forecast::Sample>)> = Vec::new();
    let mut victims = Vec::with_capacity(grid.len());
    for spec in grid {
        if !datasets.iter().any(|(w, _)| *w == spec.window_len) {
            datasets.push((
                spec.window_len,
                build_dataset(panel, index, meta, spec.window_len)?,
            ));
        }
        let data = &datasets
            .iter()
            .find(|(w, _)| *w == spec.window_len)
            .expect("dataset built above")
            .1;
        let model = train(spec.kind, data, &spec.train_params(base))?;
        victims.push(Victim {
            spec: spec.clone(),
            model,
        });
    }
    Ok(VictimEnsemble { victims })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub victim_id: usize,
    pub kind: ModelKind,
    pub seed: u64,
    #[serde(rename = "W")]
    pub window_len: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    pub y_clean: f64,
    pub y_adv: f64,
    pub clean_sell: bool,
    /// The victim signals SELL on the adversarial input.
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    /// Fraction of victims at SELL on the adversarial input.
    pub transfer_rate: f64,
    /// Fraction of victims at SELL on the clean input.
    pub clean_false_sell_rate: f64,
    /// Fraction moved from HOLD/BUY to SELL by the perturbation.
    pub newly_flipped_rate: f64,
}

impl TransferReport {
    pub fn from_rows(rows: Vec<TransferRow>) -> Self {
        let count = rows.len().max(1) as f64;
        let rate = |f: &dyn Fn(&TransferRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / count;
        let transfer_rate = rate(&|r| r.flipped);
        let clean_false_sell_rate = rate(&|r| r.clean_sell);
        let newly_flipped_rate = rate(&|r| r.flipped && !r.clean_sell);
        Self {
            rows,
            transfer_rate,
            clean_false_sell_rate,
            newly_flipped_rate,
        }
    }

    /// CSV `victim_id,kind,seed,W,H,y_clean,y_adv,flipped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["victim_id", "kind", "seed", "W", "H", "y_clean", "y_adv", "flipped"])?;
        for r in &self.rows {
            w.write_record([
                r.victim_id.to_string(),
                r.kind.to_string(),
                r.seed.to_string(),
                r.window_len.to_string(),
                r.hidden.to_string(),
                r.y_clean.to_string(),
                r.y_adv.to_string(),
                r.flipped.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates every victim on the suffix of `clean` and `adversarial` that
/// matches its window length.
pub fn evaluate_pair(
    ensemble: &VictimEnsemble,
    clean: &Window,
    adversarial: &Window,
    thresholds: &Thresholds,
) -> Result<TransferReport> {
    if clean.window_len != adversarial.window_len || clean.n_inputs != adversarial.n_inputs {
        return Err(Error::Contract("clean and adversarial windows differ in shape".into()));
    }
    let mut rows = Vec::with_capacity(ensemble.victims.len());
    for (id, v) in ensemble.victims.iter().enumerate() {
        let w = v.model.window_len;
        if w > clean.window_len {
            return Err(Error::Contract(format!(
                "victim {id} needs {w} rows but the window has {}",
                clean.window_len
            )));
        }
        let y_clean = v.model.predict_return(&clean.suffix(w)?)?;
        let y_adv = v.model.predict_return(&adversarial.suffix(w)?)?;
        rows.push(TransferRow {
            victim_id: id,
            kind: v.model.kind,
            seed: v.spec.seed,
            window_len: w,
            hidden: v.model.hidden,
            y_clean,
            y_adv,
            clean_sell: thresholds.action(y_clean) == Action::Sell,
            flipped: thresholds.action(y_adv) == Action::Sell,
        });
    }
    Ok(TransferReport::from_rows(rows))
}

/// Synthetic mode: the adversarial input is `window + δ`.
pub fn evaluate_transfer(
    ensemble: &VictimEnsemble,
    window: &Window,
    perturbation: &Perturbation,
    thresholds: &Thresholds,
) -> Result<TransferReport> {
    let adv = window.add(&perturbation.delta)?;
    evaluate_pair(ensemble, window, &adv, thresholds)
}

/// Realized mode: the adversarial input is the window observed after the
/// attack was executed in the market.
pub fn evaluate_transfer_realized(
    ensemble: &VictimEnsemble,
    counterfactual: &Window,
    realized: &Window,
    thresholds: &Thresholds,
) -> Result<TransferReport> {
    evaluate_pair(ensemble, counterfactual, realized, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> Thresholds {
        Thresholds {
            sell: -0.001,
            buy: 0.001,
        }
    }

    fn victim(model: ForecastModel, seed: u64) -> Victim {
        Victim {
            spec: VictimSpec {
                kind: model.kind,
                seed,
                window_len: model.window_len,
                hidden: None,
                ridge: None,
            },
            model,
        }
    }

    #[test]
    fn zero_delta_rates_coincide() {
        let ens = VictimEnsemble {
            victims: vec![
                victim(ForecastModel::linear(2, 1, vec![0.1, 0.2], -0.002).unwrap(), 1),
                victim(ForecastModel::linear(1, 1, vec![0.3], 0.0).unwrap(), 2),
            ],
        };
        let w = Window::new(vec![0.01, -0.02], 2, 1, 0).unwrap();
        let p = Perturbation::zero(2, 1, 0.01, 0.0);
        let rep = evaluate_transfer(&ens, &w, &p, &t()).unwrap();
        assert_eq!(rep.transfer_rate, rep.clean_false_sell_rate);
        assert_eq!(rep.rows[1].window_len, 1);
    }

    #[test]
    fn longer_victim_window_is_a_contract_error() {
        let ens = VictimEnsemble {
            victims: vec![victim(ForecastModel::linear(3, 1, vec![0.1; 3], 0.0).unwrap(), 1)],
        };
        let w = Window::new(vec![0.0, 0.0], 2, 1, 0).unwrap();
        let p = Perturbation::zero(2, 1, 0.01, 0.0);
        assert!(matches!(evaluate_transfer(&ens, &w, &p, &t()), Err(Error::Contract(_))));
    }

    #[test]
    fn rates_are_row_counts() {
        let rows: Vec<TransferRow> = (0..4)
            .map(|k| TransferRow {
                victim_id: k,
                kind: ModelKind::Linear,
                seed: 0,
                window_len: 1,
                hidden: 0,
                y_clean: 0.0,
                y_adv: 0.0,
                clean_sell: k == 0,
                flipped: k < 3,
            })
            .collect();
        let rep = TransferReport::from_rows(rows);
        assert_eq!(rep.transfer_rate, 0.75);
        assert_eq!(rep.clean_false_sell_rate, 0.25);
        assert_eq!(rep.newly_flipped_rate, 0.5);
    }
}
