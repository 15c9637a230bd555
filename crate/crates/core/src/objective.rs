//! Co-training losses: cross-entropy plus soft Dice on the main prediction,
//! and cross-entropy on the class score map restricted to low-confidence
//! pixels.
//!
//! Each loss is a single graph node whose gradient with respect to the
//! logits is computed alongside the value.

use fcd_autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, CoreError, Result};
use crate::taxonomy::IGNORE_LABEL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_aux: f64,
    pub ce_weight: f64,
    pub dice_weight: f64,
    pub dice_smooth: f64,
    pub epsilon: f64,
    pub ignore_index: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.80,
            lambda_aux: 0.4,
            ce_weight: 0.5,
            dice_weight: 0.5,
            dice_smooth: 1.0,
            epsilon: 1e-6,
            ignore_index: IGNORE_LABEL,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CoreError::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.lambda_aux.is_nan() || self.lambda_aux < 0.0 {
            return Err(CoreError::Config(format!("lambda_aux {} is negative", self.lambda_aux)));
        }
        if !(self.dice_smooth >= 0.0 && self.epsilon >= 0.0) {
            return Err(CoreError::Config("dice_smooth and epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-pixel boolean selection, `B * H * W` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardMask {
    pub mask: Vec<bool>,
}

impl HardMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// A loss value with a flag raised when no pixel contributed.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub loss: Var,
    pub degenerate: bool,
}

struct Layout {
    n: usize,
    k: usize,
    p: usize,
}

fn layout(logits: &Tensor, labels: &[u8], ignore: u8) -> Result<Layout> {
    let s = logits.shape();
    if s.len() != 4 {
        return arg_err(format!("logits must be (B, K, H, W), got {s:?}"));
    }
    let (n, k, p) = (s[0], s[1], s[2] * s[3]);
    if labels.len() != n * p {
        return arg_err(format!("{} labels for logits {s:?}", labels.len()));
    }
    if let Some(&v) = labels.iter().find(|&&v| v != ignore && v as usize >= k) {
        return arg_err(format!("label {v} outside 0..{k}"));
    }
    Ok(Layout { n, k, p })
}

/// Softmax over the class axis, written into a `(B, K, H, W)` buffer.
pub fn softmax_classes(logits: &Tensor) -> Tensor {
    let s = logits.shape();
    let (n, k, p) = (s[0], s[1], s[2] * s[3]);
    let z = logits.data();
    let mut out = vec![0.0; z.len()];
    for i in 0..n {
        for px in 0..p {
            let at = |c: usize| (i * k + c) * p + px;
            let m = (0..k).map(|c| z[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..k {
                let e = (z[at(c)] - m).exp();
                out[at(c)] = e;
                sum += e;
            }
            for c in 0..k {
                out[at(c)] /= sum;
            }
        }
    }
    Tensor::new(s, out).expect("same shape")
}

fn scalar_loss(value: f64, grad: Tensor, input: &Var) -> Var {
    Var::from_op(Tensor::scalar(value), vec![input.clone()], move |a| {
        vec![Some(grad.scale(a.grad.item()))]
    })
}

fn zero_loss(input: &Var) -> Var {
    scalar_loss(0.0, Tensor::zeros(input.shape()), input)
}

/// `ce_weight * CE + dice_weight * Dice` over non-ignored pixels of the
/// whole batch. Dice averages over classes present in the labels.
pub fn main_loss(logits: &Var, labels: &[u8], cfg: &LossConfig) -> Result<LossValue> {
    let Layout { n, k, p } = layout(logits.value(), labels, cfg.ignore_index)?;
    let valid = labels.iter().filter(|&&v| v != cfg.ignore_index).count();
    if valid == 0 {
        log::warn!("main loss: every pixel carries the ignore label");
        return Ok(LossValue {
            loss: zero_loss(logits),
            degenerate: true,
        });
    }
    let prob = softmax_classes(logits.value());
    let pr = prob.data();
    let at = |i: usize, c: usize, px: usize| (i * k + c) * p + px;

    let mut ce = 0.0;
    let mut inter = vec![0.0; k];
    let mut psum = vec![0.0; k];
    let mut ysum = vec![0.0; k];
    for i in 0..n {
        for px in 0..p {
            let y = labels[i * p + px];
            if y == cfg.ignore_index {
                continue;
            }
            let y = y as usize;
            ce -= pr[at(i, y, px)].max(f64::MIN_POSITIVE).ln();
            inter[y] += pr[at(i, y, px)];
            ysum[y] += 1.0;
            for c in 0..k {
                psum[c] += pr[at(i, c, px)];
            }
        }
    }
    ce /= valid as f64;
    let present: Vec<usize> = (0..k).filter(|&c| ysum[c] > 0.0).collect();
    let s = cfg.dice_smooth;
    let np = present.len() as f64;
    let coef: f64 = present
        .iter()
        .map(|&c| (2.0 * inter[c] + s) / (psum[c] + ysum[c] + s))
        .sum::<f64>()
        / np;
    let dice = 1.0 - coef;
    let value = cfg.ce_weight * ce + cfg.dice_weight * dice;

    // d(loss)/dp, then through the softmax
    let mut is_present = vec![false; k];
    present.iter().for_each(|&c| is_present[c] = true);
    let mut grad = vec![0.0; pr.len()];
    let mut gp = vec![0.0; k];
    for i in 0..n {
        for px in 0..p {
            let y = labels[i * p + px];
            if y == cfg.ignore_index {
                continue;
            }
            let y = y as usize;
            for c in 0..k {
                gp[c] = 0.0;
                if is_present[c] {
                    let den = psum[c] + ysum[c] + s;
                    let yc = if c == y { 1.0 } else { 0.0 };
                    gp[c] = -cfg.dice_weight * (2.0 * yc * den - (2.0 * inter[c] + s)) / (den * den * np);
                }
            }
            let dot: f64 = (0..k).map(|c| pr[at(i, c, px)] * gp[c]).sum();
            for c in 0..k {
                let pc = pr[at(i, c, px)];
                let yc = if c == y { 1.0 } else { 0.0 };
                grad[at(i, c, px)] = cfg.ce_weight * (pc - yc) / valid as f64 + pc * (gp[c] - dot);
            }
        }
    }
    let grad = Tensor::new(logits.shape(), grad)?;
    Ok(LossValue {
        loss: scalar_loss(value, grad, logits),
        degenerate: false,
    })
}

/// Pixels whose top class probability is below `tau`, from given
/// `(B, K, H, W)` probabilities. Ignored pixels are never selected.
pub fn hard_mask_from_probs(prob: &Tensor, labels: &[u8], cfg: &LossConfig) -> Result<HardMask> {
    let Layout { n, k, p } = layout(prob, labels, cfg.ignore_index)?;
    let d = prob.data();
    let mut mask = vec![false; n * p];
    for i in 0..n {
        for px in 0..p {
            if labels[i * p + px] == cfg.ignore_index {
                continue;
            }
            let pmax = (0..k)
                .map(|c| d[(i * k + c) * p + px])
                .fold(f64::NEG_INFINITY, f64::max);
            mask[i * p + px] = pmax < cfg.tau;
        }
    }
    Ok(HardMask { mask })
}

/// Hard mask from logits; the selection carries no gradient.
pub fn hard_mask(logits: &Tensor, labels: &[u8], cfg: &LossConfig) -> Result<HardMask> {
    hard_mask_from_probs(&softmax_classes(logits), labels, cfg)
}

/// Sum of per-pixel cross-entropy over masked pixels divided by
/// `count + epsilon`.
pub fn aux_loss(scores: &Var, labels: &[u8], mask: &HardMask, cfg: &LossConfig) -> Result<Var> {
    let Layout { n, k, p } = layout(scores.value(), labels, cfg.ignore_index)?;
    if mask.mask.len() != n * p {
        return arg_err(format!("mask of {} pixels for {} labels", mask.mask.len(), n * p));
    }
    let count = mask.count();
    if count == 0 {
        return Ok(zero_loss(scores));
    }
    let denom = count as f64 + cfg.epsilon;
    let prob = softmax_classes(scores.value());
    let pr = prob.data();
    let mut total = 0.0;
    let mut grad = vec![0.0; pr.len()];
    for i in 0..n {
        for px in 0..p {
            let y = labels[i * p + px];
            if !mask.mask[i * p + px] || y == cfg.ignore_index {
                continue;
            }
            let y = y as usize;
            total -= pr[(i * k + y) * p + px].max(f64::MIN_POSITIVE).ln();
            for c in 0..k {
                let yc = if c == y { 1.0 } else { 0.0 };
                grad[(i * k + c) * p + px] = (pr[(i * k + c) * p + px] - yc) / denom;
            }
        }
    }
    let grad = Tensor::new(scores.shape(), grad)?;
    Ok(scalar_loss(total / denom, grad, scores))
}

/// `main + lambda * aux`.
pub fn total_loss(main: &Var, aux: &Var, cfg: &LossConfig) -> Result<Var> {
    Ok(main.add(&aux.scale(cfg.lambda_aux))?)
}

/// Scalar form of [`total_loss`].
pub fn total_loss_value(main: f64, aux: f64, cfg: &LossConfig) -> f64 {
    main + cfg.lambda_aux * aux
}
