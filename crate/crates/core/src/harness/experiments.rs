//! Hyperparameter sweep and decoder ablation tables.

use std::fmt::Write as _;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate_samples;
use super::train::train_with_text;
use crate::cmla::TextEncoderHandle;
use crate::error::{arg_err, Result};
use crate::model::{DecoderSwitches, Network};
use crate::sample::BitemporalSample;
use crate::taxonomy::ClassTaxonomy;

/// `(tau, lambda)` pairs of the published hard-mask analysis.
pub const DEFAULT_GRID: [(f64, f64); 6] = [
    (0.80, 0.30),
    (0.80, 0.40),
    (0.80, 0.50),
    (0.80, 0.60),
    (0.85, 0.40),
    (0.75, 0.40),
];

const fn switches(msde: bool, dpse: bool, drsa: bool) -> DecoderSwitches {
    DecoderSwitches { msde, dpse, drsa }
}

/// The decoder component ablation rows, in table order.
pub const ABLATIONS: [(&str, DecoderSwitches); 5] = [
    ("none", switches(false, false, false)),
    ("dpse+drsa", switches(false, true, true)),
    ("msde+drsa", switches(true, false, true)),
    ("msde+dpse", switches(true, true, false)),
    ("all", switches(true, true, true)),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub lambda: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub switches: DecoderSwitches,
    pub parameters: usize,
    pub f1: f64,
    pub iou: f64,
    pub fscd: Option<f64>,
}

fn shared_text(cfg: &TrainConfig) -> Result<Arc<TextEncoderHandle>> {
    Ok(Arc::new(TextEncoderHandle::from_spec(
        &cfg.model.text_encoder,
        cfg.model.cmla.dim,
    )?))
}

/// Trains and scores one model per `(tau, lambda)` cell. Scores come from
/// `eval`, or from `train` when `eval` is empty.
pub fn sweep_tau_lambda(
    base: &TrainConfig,
    grid: &[(f64, f64)],
    taxonomy: &ClassTaxonomy,
    train: &[BitemporalSample],
    eval: &[BitemporalSample],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return arg_err("sweep grid is empty");
    }
    let eval = if eval.is_empty() { train } else { eval };
    let text = shared_text(base)?;
    grid.iter()
        .map(|&(tau, lambda)| {
            let mut cfg = base.clone();
            cfg.loss.tau = tau;
            cfg.loss.lambda_aux = lambda;
            info!("sweep cell tau={tau} lambda={lambda}");
            let out = train_with_text(&cfg, taxonomy, train, &[], text.clone())?;
            let net = out.best.to_network_with_text(text.clone())?;
            let r = evaluate_samples(&net, eval, cfg.batch_size)?.report;
            Ok(SweepRow {
                tau,
                lambda,
                f1: r.f1,
                iou: r.iou,
                oa: r.oa,
            })
        })
        .collect()
}

/// Trains and scores one model per decoder ablation row.
pub fn ablate_decoder(
    base: &TrainConfig,
    taxonomy: &ClassTaxonomy,
    train: &[BitemporalSample],
    eval: &[BitemporalSample],
) -> Result<Vec<AblationRow>> {
    let eval = if eval.is_empty() { train } else { eval };
    let text = shared_text(base)?;
    ABLATIONS
        .iter()
        .map(|&(name, switches)| {
            let mut cfg = base.clone();
            cfg.model.decoder.switches = switches;
            info!("ablation row {name}");
            let out = train_with_text(&cfg, taxonomy, train, &[], text.clone())?;
            let net = out.best.to_network_with_text(text.clone())?;
            let r = evaluate_samples(&net, eval, cfg.batch_size)?.report;
            Ok(AblationRow {
                name: name.to_owned(),
                switches,
                parameters: net.count_parameters(),
                f1: r.f1,
                iou: r.iou,
                fscd: r.fscd,
            })
        })
        .collect()
}

/// Trainable parameter count of `cfg` without training it.
pub fn count_parameters(cfg: &TrainConfig, taxonomy: &ClassTaxonomy) -> Result<usize> {
    let text = Arc::new(TextEncoderHandle::stub(cfg.model.cmla.dim)?);
    Ok(Network::with_text(&cfg.model, taxonomy, text)?.count_parameters())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("| tau | lambda | F1 | IoU | OA |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {:.2} | {:.2} | {} | {} | {} |",
            r.tau,
            r.lambda,
            pct(r.f1),
            pct(r.iou),
            pct(r.oa)
        );
    }
    s
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { " " };
    let mut s = String::from("| MSDE | DPSE | DRSA | params | F1 | IoU | F_scd |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            mark(r.switches.msde),
            mark(r.switches.dpse),
            mark(r.switches.drsa),
            r.parameters,
            pct(r.f1),
            pct(r.iou),
            r.fscd.map_or("-".into(), pct)
        );
    }
    s
}
