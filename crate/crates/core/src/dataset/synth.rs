//! Seeded generator of farmland-style bitemporal pairs.
//!
//! Backgrounds are striped crop parcels. The second date paints inserted
//! objects over them (rectangles for buildings, thick polylines for roads,
//! blobs for bareland, vegetation and water) and, on a chosen fraction of
//! samples, applies a global colour shift that carries no label change.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{
    load_manifest_with, write_prompts, write_sample, write_taxonomy, DatasetManifest, Split, PROMPTS_FILE,
};
use super::regions::filter_small_regions;
use crate::error::{arg_err, io_err, Result};
use crate::prompt::{Nuisance, PromptRecord, Scene};
use crate::sample::{BitemporalSample, LabelMap, RgbImage};
use crate::taxonomy::{default_taxonomy, Mode};

pub const BARELAND: u8 = 1;
pub const BUILDING: u8 = 2;
pub const ROAD: u8 = 3;
pub const VEGETATION: u8 = 4;
pub const WATER: u8 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Training samples.
    pub n_samples: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub pseudo_change_rate: f64,
    /// Change classes drawn into the second date, cycled across samples.
    pub shape_classes: Vec<u8>,
    pub min_region_px: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 16,
            n_val: 0,
            n_test: 0,
            patch_size: 256,
            seed: 7,
            pseudo_change_rate: 0.25,
            shape_classes: vec![BARELAND, BUILDING, ROAD, VEGETATION, WATER],
            min_region_px: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 32 {
            return arg_err(format!("patch_size {} is below 32", self.patch_size));
        }
        if self.n_samples == 0 {
            return arg_err("n_samples must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.pseudo_change_rate) {
            return arg_err(format!("pseudo_change_rate {} outside [0, 1]", self.pseudo_change_rate));
        }
        if self.shape_classes.is_empty() {
            return arg_err("shape_classes is empty");
        }
        if let Some(c) = self.shape_classes.iter().find(|c| !(1..=5).contains(*c)) {
            return arg_err(format!("shape class {c} is not a change class"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub split: Split,
    pub sample: BitemporalSample,
    pub jittered: bool,
}

fn class_color(class: u8) -> [f64; 3] {
    match class {
        BARELAND => [0.78, 0.62, 0.44],
        BUILDING => [0.82, 0.28, 0.24],
        ROAD => [0.58, 0.58, 0.60],
        VEGETATION => [0.06, 0.30, 0.10],
        _ => [0.12, 0.28, 0.68],
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Farmland parcels: a few rectangular fields, each with its own hue and
/// crop-row stripes.
fn farmland(rng: &mut ChaCha8Rng, p: usize) -> RgbImage {
    let cut_y = rng.gen_range(p / 4..3 * p / 4);
    let cut_x = rng.gen_range(p / 4..3 * p / 4);
    let parcels: Vec<([f64; 3], f64, f64, f64)> = (0..4)
        .map(|_| {
            let base = [
                rng.gen_range(0.40..0.62),
                rng.gen_range(0.55..0.72),
                rng.gen_range(0.18..0.32),
            ];
            let angle = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_4][rng.gen_range(0..3)];
            let period = rng.gen_range(4.0..10.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (base, angle, period, phase)
        })
        .collect();
    let mut img = RgbImage::filled(p, p, [0.0; 3]);
    for y in 0..p {
        for x in 0..p {
            let k = usize::from(y >= cut_y) * 2 + usize::from(x >= cut_x);
            let (base, angle, period, phase) = parcels[k];
            let t = x as f64 * angle.cos() + y as f64 * angle.sin();
            let stripe = 0.06 * (std::f64::consts::TAU * t / period + phase).sin();
            let noise = rng.gen_range(-0.02..0.02);
            img.set_pixel(y, x, base.map(|c| quantize(c + stripe + noise)));
        }
    }
    img
}

fn paint_rect(label: &mut LabelMap, rng: &mut ChaCha8Rng, class: u8) {
    let p = label.height;
    let h = rng.gen_range(p / 8..p / 3);
    let w = rng.gen_range(p / 8..p / 3);
    let y0 = rng.gen_range(0..p - h);
    let x0 = rng.gen_range(0..p - w);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            label.set(y, x, class);
        }
    }
}

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn paint_polyline(label: &mut LabelMap, rng: &mut ChaCha8Rng, class: u8) {
    let p = label.height as f64;
    let half = (p / 12.0).max(4.0) / 2.0;
    // enter on one edge, bend once, leave on another
    let start = if rng.gen_bool(0.5) {
        (0.0, rng.gen_range(0.0..p))
    } else {
        (rng.gen_range(0.0..p), 0.0)
    };
    let mid = (rng.gen_range(0.25 * p..0.75 * p), rng.gen_range(0.25 * p..0.75 * p));
    let end = if rng.gen_bool(0.5) {
        (p - 1.0, rng.gen_range(0.0..p))
    } else {
        (rng.gen_range(0.0..p), p - 1.0)
    };
    for y in 0..label.height {
        for x in 0..label.width {
            let (fx, fy) = (x as f64, y as f64);
            if dist_to_segment(fx, fy, start, mid).min(dist_to_segment(fx, fy, mid, end)) <= half {
                label.set(y, x, class);
            }
        }
    }
}

fn paint_blob(label: &mut LabelMap, rng: &mut ChaCha8Rng, class: u8) {
    let p = label.height as f64;
    let cy = rng.gen_range(0.2 * p..0.8 * p);
    let cx = rng.gen_range(0.2 * p..0.8 * p);
    let lobes: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                cy + rng.gen_range(-0.08 * p..0.08 * p),
                cx + rng.gen_range(-0.08 * p..0.08 * p),
                rng.gen_range(0.08 * p..0.16 * p),
            )
        })
        .collect();
    for y in 0..label.height {
        for x in 0..label.width {
            let (fy, fx) = (y as f64, x as f64);
            if lobes
                .iter()
                .any(|&(ly, lx, r)| (fy - ly).powi(2) + (fx - lx).powi(2) <= r * r)
            {
                label.set(y, x, class);
            }
        }
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn make_sample(cfg: &SynthConfig, index: usize, split: Split) -> SynthSample {
    let p = cfg.patch_size;
    let mut rng = sample_rng(cfg.seed, index);
    let image_t1 = farmland(&mut rng, p);

    let mut objects = LabelMap::filled(p, p, 0);
    let n_obj = rng.gen_range(1..=2);
    for j in 0..n_obj {
        let class = cfg.shape_classes[(index + j * 2) % cfg.shape_classes.len()];
        match class {
            BUILDING => paint_rect(&mut objects, &mut rng, class),
            ROAD => paint_polyline(&mut objects, &mut rng, class),
            _ => paint_blob(&mut objects, &mut rng, class),
        }
    }
    let label = filter_small_regions(&objects, cfg.min_region_px);

    let mut image_t2 = image_t1.clone();
    for y in 0..p {
        for x in 0..p {
            let c = label.get(y, x);
            if c != 0 {
                let base = class_color(c);
                let noise = rng.gen_range(-0.03..0.03);
                image_t2.set_pixel(y, x, base.map(|v| quantize(v + noise)));
            }
        }
    }

    // jitter decision from its own stream so the rate does not move the geometry
    let mut jitter_rng = sample_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, index);
    let jittered = jitter_rng.gen::<f64>() < cfg.pseudo_change_rate;
    if jittered {
        let gain: [f64; 3] = std::array::from_fn(|_| jitter_rng.gen_range(0.8..1.2));
        let offset = jitter_rng.gen_range(-0.06..0.06);
        for px in image_t2.data.chunks_exact_mut(3) {
            for (v, g) in px.iter_mut().zip(gain) {
                *v = quantize(*v * g + offset);
            }
        }
    }

    let nuisances: &[(Nuisance, f64)] = if jittered {
        &[(Nuisance::Illumination, 0.9)]
    } else {
        &[]
    };
    SynthSample {
        split,
        sample: BitemporalSample {
            id: format!("s{index:05}"),
            image_t1,
            image_t2,
            label,
            prompt: Some(PromptRecord::new(Scene::Farmland, nuisances)),
        },
        jittered,
    }
}

/// Builds the dataset in memory. Ids are globally unique across splits.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let plan = [
        (Split::Train, cfg.n_samples),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ];
    let mut out = Vec::with_capacity(cfg.n_samples + cfg.n_val + cfg.n_test);
    let mut index = 0;
    for (split, n) in plan {
        for _ in 0..n {
            out.push(make_sample(cfg, index, split));
            index += 1;
        }
    }
    Ok(out)
}

/// Writes the dataset under `root` and returns the training manifest.
pub fn generate_synthetic(cfg: &SynthConfig, root: &Path) -> Result<DatasetManifest> {
    let samples = synthesize(cfg)?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let taxonomy = default_taxonomy(Mode::Scd);
    write_taxonomy(root, &taxonomy)?;
    for split in Split::ALL {
        let mut prompts = BTreeMap::new();
        for s in samples.iter().filter(|s| s.split == split) {
            write_sample(root, split, &s.sample)?;
            prompts.insert(s.sample.id.clone(), s.sample.prompt.clone().unwrap_or_default());
        }
        if !prompts.is_empty() {
            write_prompts(&root.join(split.as_str()).join(PROMPTS_FILE), &prompts)?;
        }
    }
    Ok(load_manifest_with(root, Split::Train, taxonomy)?.0)
}
