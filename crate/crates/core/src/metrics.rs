//! Confusion-matrix metrics for binary and semantic change maps.
//!
//! Binary scores treat every class `>= 1` as "change". Semantic scores follow
//! the SECOND benchmark convention: `F_scd` pools the change-class diagonal,
//! `SCD_IoU_mean` averages change-class IoU, and `SeK` weights a kappa that
//! ignores the no-change/no-change cell by `exp(IoU_change - 1)`.
//! A zero denominator yields 0 and a named flag, never NaN.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, CoreError, Result};
use crate::sample::LabelMap;
use crate::taxonomy::{Mode, IGNORE_LABEL};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return arg_err(format!("{} counts for a {k}x{k} matrix", counts.len()));
        }
        Ok(Self { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        (0..self.k).map(|c| self.get(r, c)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    /// Adds one prediction/label pair given as row-major slices of width `width`.
    pub fn accumulate_slices(&mut self, pred: &[u8], gt: &[u8], width: usize) -> Result<()> {
        if pred.len() != gt.len() {
            return arg_err(format!("prediction has {} pixels, label has {}", pred.len(), gt.len()));
        }
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == IGNORE_LABEL {
                continue;
            }
            if p as usize >= self.k {
                return Err(CoreError::PredictionRange {
                    value: p,
                    y: i / width.max(1),
                    x: i % width.max(1),
                    classes: self.k,
                });
            }
            if g as usize >= self.k {
                return arg_err(format!("label {g} at pixel {i} outside 0..{}", self.k));
            }
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return arg_err(format!(
                "prediction {}x{} vs label {}x{}",
                pred.height, pred.width, gt.height, gt.width
            ));
        }
        self.accumulate_slices(&pred.data, &gt.data, gt.width)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return arg_err(format!("merging {}-class into {}-class matrix", other.k, self.k));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Collapses every class `>= 1` into a single change class.
    pub fn binarize(&self) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::new(2);
        for r in 0..self.k {
            for c in 0..self.k {
                let (br, bc) = (usize::from(r > 0), usize::from(c > 0));
                out.counts[br * 2 + bc] += self.get(r, c);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub degenerate: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScdMetrics {
    pub fscd: f64,
    pub sek: f64,
    pub scd_iou_mean: f64,
    pub degenerate: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub fscd: Option<f64>,
    pub sek: Option<f64>,
    pub scd_iou_mean: Option<f64>,
    pub degenerate_flags: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(name.to_owned());
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    ratio(2.0 * p * r, p + r, name, flags)
}

pub fn binary_metrics(cm: &ConfusionMatrix) -> Result<BinaryMetrics> {
    if cm.total() == 0 {
        return arg_err("confusion matrix is empty");
    }
    let b = if cm.k == 2 { cm.clone() } else { cm.binarize() };
    let (tn, fp, fn_, tp) = (
        b.get(0, 0) as f64,
        b.get(0, 1) as f64,
        b.get(1, 0) as f64,
        b.get(1, 1) as f64,
    );
    let mut flags = Vec::new();
    let precision = ratio(tp, tp + fp, "precision", &mut flags);
    let recall = ratio(tp, tp + fn_, "recall", &mut flags);
    let f1 = harmonic(precision, recall, "f1", &mut flags);
    let iou = ratio(tp, tp + fp + fn_, "iou", &mut flags);
    let oa = (tp + tn) / (tp + tn + fp + fn_);
    Ok(BinaryMetrics {
        precision,
        recall,
        f1,
        iou,
        oa,
        degenerate: flags,
    })
}

/// Semantic scores; `include_no_change` adds class 0 to the IoU mean.
pub fn scd_metrics_with(cm: &ConfusionMatrix, include_no_change: bool) -> Result<ScdMetrics> {
    if cm.k < 2 {
        return arg_err(format!("semantic metrics need at least 2 classes, got {}", cm.k));
    }
    if cm.total() == 0 {
        return arg_err("confusion matrix is empty");
    }
    let k = cm.k;
    let mut flags = Vec::new();
    let sem_tp: f64 = (1..k).map(|c| cm.get(c, c) as f64).sum();
    let pred_change: f64 = (1..k).map(|c| cm.col_sum(c) as f64).sum();
    let gt_change: f64 = (1..k).map(|c| cm.row_sum(c) as f64).sum();
    let sp = ratio(sem_tp, pred_change, "semantic_precision", &mut flags);
    let sr = ratio(sem_tp, gt_change, "semantic_recall", &mut flags);
    let fscd = harmonic(sp, sr, "fscd", &mut flags);

    let first = if include_no_change { 0 } else { 1 };
    let mut ious = Vec::new();
    for c in first..k {
        let tp = cm.get(c, c) as f64;
        let den = (cm.row_sum(c) + cm.col_sum(c)) as f64 - tp;
        if den == 0.0 {
            flags.push(format!("iou_class_{c}"));
        } else {
            ious.push(tp / den);
        }
    }
    let scd_iou_mean = ratio(ious.iter().sum(), ious.len() as f64, "scd_iou_mean", &mut flags);

    // kappa on the matrix with the no-change/no-change cell removed
    let total = (cm.total() - cm.get(0, 0)) as f64;
    let kappa = if total == 0.0 {
        flags.push("sek_kappa".into());
        0.0
    } else {
        let po = sem_tp / total;
        let pe: f64 = (0..k)
            .map(|c| {
                let zero = if c == 0 { cm.get(0, 0) } else { 0 } as f64;
                (cm.row_sum(c) as f64 - zero) * (cm.col_sum(c) as f64 - zero)
            })
            .sum::<f64>()
            / (total * total);
        if pe == 1.0 {
            flags.push("sek_kappa".into());
            0.0
        } else {
            (po - pe) / (1.0 - pe)
        }
    };
    let iou_change = binary_metrics(cm)?.iou;
    let sek = (iou_change - 1.0).exp() * kappa;
    Ok(ScdMetrics {
        fscd,
        sek,
        scd_iou_mean,
        degenerate: flags,
    })
}

pub fn scd_metrics(cm: &ConfusionMatrix) -> Result<ScdMetrics> {
    scd_metrics_with(cm, false)
}

/// Full report; semantic fields are filled in SCD mode only.
pub fn report(cm: &ConfusionMatrix, mode: Mode) -> Result<MetricsReport> {
    let b = binary_metrics(cm)?;
    let mut flags = b.degenerate.clone();
    let (fscd, sek, miou) = match mode {
        Mode::Scd => {
            let s = scd_metrics(cm)?;
            flags.extend(s.degenerate);
            (Some(s.fscd), Some(s.sek), Some(s.scd_iou_mean))
        }
        Mode::Bcd => (None, None, None),
    };
    Ok(MetricsReport {
        precision: b.precision,
        recall: b.recall,
        f1: b.f1,
        iou: b.iou,
        oa: b.oa,
        fscd,
        sek,
        scd_iou_mean: miou,
        degenerate_flags: flags,
    })
}
