//! Evaluation over a split and prediction rendering.

use std::path::{Path, PathBuf};

use crate::dataset::DatasetManifest;
use crate::error::{arg_err, CoreError, Result};
use crate::metrics::{report, ConfusionMatrix, MetricsReport};
use crate::model::{Batch, Network};
use crate::sample::{BitemporalSample, LabelMap};
use crate::taxonomy::{ClassTaxonomy, IGNORE_LABEL};

use super::checkpoint::Checkpoint;

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Class colours from the taxonomy.
    Scd,
    /// Change/no-change agreement with the ground truth.
    BcdDiff,
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "scd" => Ok(Self::Scd),
            "bcd-diff" | "bcd_diff" => Ok(Self::BcdDiff),
            _ => Err(format!("render mode must be scd or bcd-diff, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Scores the ground truth against itself instead of running the model.
    pub oracle: bool,
    /// Writes `<id>.png` per sample into this directory.
    pub render: Option<(PathBuf, RenderMode)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            oracle: false,
            render: None,
        }
    }
}

const WHITE: [u8; 3] = [255, 255, 255];
const RED: [u8; 3] = [255, 0, 0];
const BLUE: [u8; 3] = [0, 0, 255];
const BLACK: [u8; 3] = [0, 0, 0];

/// Colours a prediction. `BcdDiff` needs the ground truth: TP white, FP red,
/// FN blue, TN and ignored pixels black.
pub fn render_prediction(
    pred: &LabelMap,
    taxonomy: &ClassTaxonomy,
    mode: RenderMode,
    gt: Option<&LabelMap>,
) -> Result<image::RgbImage> {
    let (h, w) = (pred.height, pred.width);
    let mut out = image::RgbImage::new(w as u32, h as u32);
    match mode {
        RenderMode::Scd => {
            for (i, &v) in pred.data.iter().enumerate() {
                let c = taxonomy.color(v).unwrap_or(BLACK);
                out.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb(c));
            }
        }
        RenderMode::BcdDiff => {
            let Some(gt) = gt else {
                return arg_err("bcd-diff rendering needs ground truth");
            };
            if (gt.height, gt.width) != (h, w) {
                return arg_err(format!("ground truth {}x{} vs prediction {h}x{w}", gt.height, gt.width));
            }
            for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
                let c = match (p != 0, g) {
                    (_, IGNORE_LABEL) => BLACK,
                    (true, g) if g != 0 => WHITE,
                    (true, _) => RED,
                    (false, g) if g != 0 => BLUE,
                    (false, _) => BLACK,
                };
                out.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb(c));
            }
        }
    }
    Ok(out)
}

fn save_render(dir: &Path, id: &str, img: &image::RgbImage) -> Result<()> {
    let path = dir.join(format!("{id}.png"));
    img.save(&path).map_err(|source| CoreError::Image { path, source })
}

/// Runs `net` over `samples` and accumulates one confusion matrix.
pub fn evaluate_with(net: &Network, samples: &[BitemporalSample], opts: &EvalOptions) -> Result<Evaluation> {
    if opts.batch_size == 0 {
        return arg_err("batch size must be positive");
    }
    if let Some((dir, _)) = &opts.render {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    }
    let mut cm = ConfusionMatrix::new(net.num_classes());
    for chunk in samples.chunks(opts.batch_size) {
        let preds = if opts.oracle {
            chunk.iter().map(|s| s.label.clone()).collect()
        } else {
            let refs: Vec<&BitemporalSample> = chunk.iter().collect();
            net.predict(&Batch::from_samples(&refs)?)?
        };
        for (s, p) in chunk.iter().zip(&preds) {
            cm.accumulate(p, &s.label)?;
            if let Some((dir, mode)) = &opts.render {
                save_render(dir, &s.id, &render_prediction(p, &net.taxonomy, *mode, Some(&s.label))?)?;
            }
        }
    }
    let report = report(&cm, net.taxonomy.mode)?;
    Ok(Evaluation { confusion: cm, report })
}

pub fn evaluate_samples(net: &Network, samples: &[BitemporalSample], batch_size: usize) -> Result<Evaluation> {
    evaluate_with(
        net,
        samples,
        &EvalOptions {
            batch_size,
            ..EvalOptions::default()
        },
    )
}

/// Streams a split through the checkpointed model.
pub fn evaluate(ckpt: &Checkpoint, manifest: &DatasetManifest, opts: &EvalOptions) -> Result<Evaluation> {
    if ckpt.taxonomy != manifest.taxonomy {
        return Err(CoreError::TaxonomyMismatch(format!(
            "checkpoint has {} {} classes, data at {} has {} {} classes",
            ckpt.taxonomy.num_classes(),
            ckpt.taxonomy.mode,
            manifest.root.display(),
            manifest.taxonomy.num_classes(),
            manifest.taxonomy.mode
        )));
    }
    let net = ckpt.to_network()?;
    let mut cm = ConfusionMatrix::new(net.num_classes());
    for ids in manifest.entries.chunks(opts.batch_size.max(1)) {
        let samples = ids
            .iter()
            .map(|id| manifest.load_sample(id))
            .collect::<Result<Vec<_>>>()?;
        cm.merge(&evaluate_with(&net, &samples, opts)?.confusion)?;
    }
    let report = report(&cm, net.taxonomy.mode)?;
    Ok(Evaluation { confusion: cm, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{default_taxonomy, Mode};

    #[test]
    fn scd_zero_is_black_and_road_is_blue() {
        let t = default_taxonomy(Mode::Scd);
        let img = render_prediction(&LabelMap::filled(2, 2, 0), &t, RenderMode::Scd, None).unwrap();
        assert!(img.pixels().all(|p| p.0 == BLACK));
        let img = render_prediction(&LabelMap::new(1, 2, vec![3, 1]).unwrap(), &t, RenderMode::Scd, None).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, BLUE);
        assert_eq!(img.get_pixel(1, 0).0, RED);
    }

    #[test]
    fn bcd_diff_colours() {
        let t = default_taxonomy(Mode::Scd);
        let pred = LabelMap::new(1, 5, vec![2, 1, 0, 0, 3]).unwrap();
        let gt = LabelMap::new(1, 5, vec![4, 0, 5, 0, 255]).unwrap();
        let img = render_prediction(&pred, &t, RenderMode::BcdDiff, Some(&gt)).unwrap();
        let got: Vec<_> = img.pixels().map(|p| p.0).collect();
        assert_eq!(got, vec![WHITE, RED, BLUE, BLACK, BLACK]);
        assert!(render_prediction(&pred, &t, RenderMode::BcdDiff, None).is_err());
    }
}
