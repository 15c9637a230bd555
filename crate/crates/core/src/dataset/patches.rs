//! Non-overlapping tiling of images and label maps.

use crate::error::{arg_err, Result};
use crate::sample::{LabelMap, RgbImage};
use crate::taxonomy::IGNORE_LABEL;

/// Tile grid for an `height x width` raster cut into `patch`-sized squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 {
            return arg_err("patch size must be positive");
        }
        Ok(Self {
            rows: height.div_ceil(patch),
            cols: width.div_ceil(patch),
            patch,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn crop<T: Copy>(data: &[T], height: usize, width: usize, ch: usize, patch: usize, pad: T) -> Result<Vec<Vec<T>>> {
    let grid = PatchGrid::new(height, width, patch)?;
    let mut out = Vec::with_capacity(grid.len());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let mut p = vec![pad; patch * patch * ch];
            for y in 0..patch {
                let sy = r * patch + y;
                if sy >= height {
                    break;
                }
                let x0 = c * patch;
                let n = patch.min(width.saturating_sub(x0));
                let src = &data[(sy * width + x0) * ch..(sy * width + x0 + n) * ch];
                p[y * patch * ch..(y * patch + n) * ch].copy_from_slice(src);
            }
            out.push(p);
        }
    }
    Ok(out)
}

fn assemble<T: Copy + Default>(
    patches: &[Vec<T>],
    grid: PatchGrid,
    height: usize,
    width: usize,
    ch: usize,
) -> Result<Vec<T>> {
    let patch = grid.patch;
    if patches.len() != grid.len() {
        return arg_err(format!(
            "{} patches for a {}x{} grid",
            patches.len(),
            grid.rows,
            grid.cols
        ));
    }
    if height > grid.rows * patch || width > grid.cols * patch {
        return arg_err("target size exceeds the patch grid");
    }
    let mut out = vec![T::default(); height * width * ch];
    for (i, p) in patches.iter().enumerate() {
        if p.len() != patch * patch * ch {
            return arg_err(format!("patch {i} has {} values", p.len()));
        }
        let (r, c) = (i / grid.cols, i % grid.cols);
        for y in 0..patch {
            let ty = r * patch + y;
            if ty >= height {
                break;
            }
            let x0 = c * patch;
            let n = patch.min(width.saturating_sub(x0));
            out[(ty * width + x0) * ch..(ty * width + x0 + n) * ch]
                .copy_from_slice(&p[y * patch * ch..(y * patch + n) * ch]);
        }
    }
    Ok(out)
}

/// Row-major patches of a label map; padding carries the ignore label.
pub fn crop_label(label: &LabelMap, patch: usize) -> Result<Vec<LabelMap>> {
    Ok(crop(&label.data, label.height, label.width, 1, patch, IGNORE_LABEL)?
        .into_iter()
        .map(|data| LabelMap {
            height: patch,
            width: patch,
            data,
        })
        .collect())
}

/// Row-major patches of an image; padding is zero.
pub fn crop_image(image: &RgbImage, patch: usize) -> Result<Vec<RgbImage>> {
    Ok(crop(&image.data, image.height, image.width, 3, patch, 0.0)?
        .into_iter()
        .map(|data| RgbImage {
            height: patch,
            width: patch,
            data,
        })
        .collect())
}

/// Inverse of [`crop_label`]; padded pixels are dropped.
pub fn reassemble_label(patches: &[LabelMap], height: usize, width: usize) -> Result<LabelMap> {
    let Some(first) = patches.first() else {
        return arg_err("no patches");
    };
    let grid = PatchGrid::new(height, width, first.height)?;
    let raw: Vec<Vec<u8>> = patches.iter().map(|p| p.data.clone()).collect();
    LabelMap::new(height, width, assemble(&raw, grid, height, width, 1)?)
}

/// Inverse of [`crop_image`].
pub fn reassemble_image(patches: &[RgbImage], height: usize, width: usize) -> Result<RgbImage> {
    let Some(first) = patches.first() else {
        return arg_err("no patches");
    };
    let grid = PatchGrid::new(height, width, first.height)?;
    let raw: Vec<Vec<f64>> = patches.iter().map(|p| p.data.clone()).collect();
    RgbImage::new(height, width, assemble(&raw, grid, height, width, 3)?)
}
