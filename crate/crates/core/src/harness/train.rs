//! The optimisation loop.

use std::sync::Arc;

use fcd_autograd::{AdamW, AdamWConfig, Binding};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{BestRecord, Checkpoint};
use super::config::TrainConfig;
use super::eval::evaluate_samples;
use super::schedule::CosineSchedule;
use crate::cmla::TextEncoderHandle;
use crate::dataset::DatasetManifest;
use crate::error::{arg_err, CoreError, Result};
use crate::metrics::MetricsReport;
use crate::model::{Batch, Network};
use crate::objective::{aux_loss, hard_mask, main_loss, total_loss};
use crate::sample::{BitemporalSample, LabelMap, RgbImage};
use crate::taxonomy::ClassTaxonomy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub main: f64,
    pub aux: f64,
    /// Pixels selected by the hard mask in this batch.
    pub hard_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best: Option<BestRecord>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights of the epoch with the best validation F1.
    pub best: Checkpoint,
    /// Weights after the last step.
    pub last: Checkpoint,
    pub report: TrainReport,
}

/// Training order of epoch `epoch`; depends only on `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn flip_image(img: &RgbImage, h: bool, v: bool) -> RgbImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let sy = if v { img.height - 1 - y } else { y };
            let sx = if h { img.width - 1 - x } else { x };
            out.set_pixel(y, x, img.pixel(sy, sx));
        }
    }
    out
}

fn flip_label(l: &LabelMap, h: bool, v: bool) -> LabelMap {
    let mut out = l.clone();
    for y in 0..l.height {
        for x in 0..l.width {
            let sy = if v { l.height - 1 - y } else { y };
            let sx = if h { l.width - 1 - x } else { x };
            out.set(y, x, l.get(sy, sx));
        }
    }
    out
}

/// Flips both dates and the label together.
pub fn flip_sample(s: &BitemporalSample, horizontal: bool, vertical: bool) -> BitemporalSample {
    BitemporalSample {
        image_t1: flip_image(&s.image_t1, horizontal, vertical),
        image_t2: flip_image(&s.image_t2, horizontal, vertical),
        label: flip_label(&s.label, horizontal, vertical),
        ..s.clone()
    }
}

fn diverged(epoch: usize, step: usize, msg: String) -> CoreError {
    CoreError::Diverged { epoch, step, msg }
}

/// Total optimizer steps a run will take.
pub fn planned_steps(cfg: &TrainConfig, n: usize) -> usize {
    let per_epoch = n.div_ceil(cfg.batch_size);
    let full = cfg.epochs * per_epoch;
    cfg.max_steps.map_or(full, |m| m.min(full))
}

pub fn train(
    cfg: &TrainConfig,
    taxonomy: &ClassTaxonomy,
    train: &[BitemporalSample],
    val: &[BitemporalSample],
) -> Result<TrainOutcome> {
    let text = Arc::new(TextEncoderHandle::from_spec(
        &cfg.model.text_encoder,
        cfg.model.cmla.dim,
    )?);
    train_with_text(cfg, taxonomy, train, val, text)
}

/// Trains on `train`, validating on `val` (or on `train` when `val` is empty).
pub fn train_with_text(
    cfg: &TrainConfig,
    taxonomy: &ClassTaxonomy,
    train: &[BitemporalSample],
    val: &[BitemporalSample],
    text: Arc<TextEncoderHandle>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return arg_err("training set is empty");
    }
    let val = if val.is_empty() { train } else { val };
    let mut net = Network::with_text(&cfg.model, taxonomy, text)?;
    let mut opt = AdamW::new(AdamWConfig {
        beta1: cfg.optimizer.beta1,
        beta2: cfg.optimizer.beta2,
        eps: cfg.optimizer.eps,
        weight_decay: cfg.optimizer.weight_decay,
    });
    let total_steps = planned_steps(cfg, train.len());
    let schedule = CosineSchedule::new(cfg.lr, total_steps);
    info!(
        "training {} parameters on {} samples for {total_steps} steps",
        net.count_parameters(),
        train.len()
    );

    let mut report = TrainReport::default();
    let mut best: Option<(BestRecord, fcd_autograd::ParamStore)> = None;
    let mut step = 0;
    let mut epoch = 0;
    while epoch < cfg.epochs && step < total_steps {
        let order = epoch_order(cfg.seed, epoch, train.len());
        let mut flip_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5bd1_e995);
        flip_rng.set_stream(epoch as u64);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if step == total_steps {
                break;
            }
            let flipped: Vec<BitemporalSample>;
            let picked: Vec<&BitemporalSample> = if cfg.flips {
                flipped = chunk
                    .iter()
                    .map(|&i| flip_sample(&train[i], flip_rng.gen(), flip_rng.gen()))
                    .collect();
                flipped.iter().collect()
            } else {
                chunk.iter().map(|&i| &train[i]).collect()
            };
            let batch = Batch::from_samples(&picked)?;
            let lr = schedule.lr(step);
            let (log, grads) = {
                let b = Binding::train(&net.store);
                let out = net.forward_batch(&b, &batch, true)?;
                let main = main_loss(&out.logits, &batch.labels, &cfg.loss)?;
                let (total, aux, hard_pixels) = if cfg.aux_loss {
                    let mask = hard_mask(out.logits.value(), &batch.labels, &cfg.loss)?;
                    let scores = &out.cmla.as_ref().expect("gated forward").scores;
                    let up = scores.resize_bilinear(batch.height(), batch.width())?;
                    let aux = aux_loss(&up, &batch.labels, &mask, &cfg.loss)?;
                    let aux_value = aux.value().item();
                    (total_loss(&main.loss, &aux, &cfg.loss)?, aux_value, mask.count())
                } else {
                    (main.loss.clone(), 0.0, 0)
                };
                let loss = total.value().item();
                if !loss.is_finite() {
                    return Err(diverged(
                        epoch,
                        step,
                        format!("loss {loss} (main {}) at lr {lr}", main.loss.value().item()),
                    ));
                }
                let grads = b.collect_grads(&total.backward());
                let log = StepLog {
                    epoch,
                    step,
                    lr,
                    loss,
                    main: main.loss.value().item(),
                    aux,
                    hard_pixels,
                };
                (log, grads)
            };
            if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
                return Err(diverged(
                    epoch,
                    step,
                    format!("non-finite gradient for {}", net.store.get(*id).name),
                ));
            }
            opt.step(&mut net.store, &grads, lr);
            debug!(
                "step {step}: loss {:.6} (aux {:.6}, {} hard px)",
                log.loss, log.aux, log.hard_pixels
            );
            epoch_loss += log.loss;
            epoch_steps += 1;
            report.steps.push(log);
            step += 1;
        }

        let last_epoch = epoch + 1 == cfg.epochs || step == total_steps;
        let val_report = if (epoch + 1) % cfg.validate_every == 0 || last_epoch {
            let r = evaluate_samples(&net, val, cfg.batch_size)?.report;
            if best.as_ref().is_none_or(|(b, _)| r.f1 > b.f1) {
                let rec = BestRecord {
                    epoch,
                    f1: r.f1,
                    report: r.clone(),
                };
                best = Some((rec, net.store.clone()));
            }
            Some(r)
        } else {
            None
        };
        let mean_loss = epoch_loss / epoch_steps.max(1) as f64;
        match &val_report {
            Some(r) => info!(
                "epoch {epoch}: loss {mean_loss:.5}, val F1 {:.4} IoU {:.4}",
                r.f1, r.iou
            ),
            None => info!("epoch {epoch}: loss {mean_loss:.5}"),
        }
        report.epochs.push(EpochLog {
            epoch,
            mean_loss,
            val: val_report,
        });
        epoch += 1;
    }

    let (record, best_store) = best.expect("the final epoch is always validated");
    report.best = Some(record.clone());
    let last = Checkpoint::from_network(&net, cfg, epoch - 1, Some(record.clone()));
    net.store = best_store;
    let best = Checkpoint::from_network(&net, cfg, record.epoch, Some(record));
    Ok(TrainOutcome { best, last, report })
}

/// Loads both manifests and trains; they must share a taxonomy.
pub fn train_manifest(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    val: Option<&DatasetManifest>,
) -> Result<TrainOutcome> {
    if manifest.is_empty() {
        return arg_err(format!("no training samples under {}", manifest.split_dir().display()));
    }
    let val_samples = match val {
        Some(v) if v.taxonomy != manifest.taxonomy => {
            return Err(CoreError::TaxonomyMismatch(
                "validation and training splits differ".into(),
            ))
        }
        Some(v) => v.load_all()?,
        None => Vec::new(),
    };
    train(cfg, &manifest.taxonomy, &manifest.load_all()?, &val_samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_a_seeded_permutation() {
        let a = epoch_order(3, 0, 10);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(3, 0, 10));
        assert_ne!(a, epoch_order(3, 1, 10));
    }

    #[test]
    fn double_flip_is_identity() {
        let img = RgbImage::new(2, 3, (0..18).map(|v| v as f64).collect()).unwrap();
        let label = LabelMap::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let s = BitemporalSample {
            id: "x".into(),
            image_t1: img.clone(),
            image_t2: img,
            label,
            prompt: None,
        };
        let f = flip_sample(&s, true, false);
        assert_eq!(f.label.data, vec![2, 1, 0, 5, 4, 3]);
        assert_eq!(f.image_t1.pixel(0, 0), s.image_t1.pixel(0, 2));
        assert_eq!(flip_sample(&flip_sample(&s, true, true), true, true), s);
    }

    #[test]
    fn planned_steps_respects_cap() {
        let mut c = TrainConfig {
            epochs: 20,
            batch_size: 8,
            ..TrainConfig::default()
        };
        assert_eq!(planned_steps(&c, 16), 40);
        assert_eq!(planned_steps(&c, 17), 60);
        c.max_steps = Some(25);
        assert_eq!(planned_steps(&c, 16), 25);
    }
}
