//! In-memory sample types shared by the pipeline, model and harness.

use std::fmt;

use fcd_autograd::Tensor;

use crate::error::{arg_err, Result};
use crate::prompt::PromptRecord;
use crate::taxonomy::{ClassTaxonomy, IGNORE_LABEL};

/// Interleaved RGB image, values in [0, 1], row-major `H x W x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return arg_err(format!("RGB buffer of {} values for {height}x{width}", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Divides 8-bit values by 255.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes channels-first into `dst` (length `3 * H * W`).
    pub fn write_chw(&self, dst: &mut [f64]) {
        let p = self.height * self.width;
        for i in 0..p {
            for c in 0..3 {
                dst[c * p + i] = self.data[i * 3 + c];
            }
        }
    }
}

/// Per-pixel class ids, row-major `H x W`; 255 marks ignored pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return arg_err(format!("label buffer of {} values for {height}x{width}", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitemporalSample {
    pub id: String,
    pub image_t1: RgbImage,
    pub image_t2: RgbImage,
    pub label: LabelMap,
    pub prompt: Option<PromptRecord>,
}

impl BitemporalSample {
    pub fn height(&self) -> usize {
        self.image_t1.height
    }

    pub fn width(&self) -> usize {
        self.image_t1.width
    }

    /// The t1 and t2 roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            image_t1: self.image_t2.clone(),
            image_t2: self.image_t1.clone(),
            ..self.clone()
        }
    }
}

/// One scale of a feature pyramid for a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    /// Shape `(C, h, w)`.
    pub data: Tensor,
    /// Downsampling factor relative to the input image.
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    ShapeMismatch {
        t1: (usize, usize),
        t2: (usize, usize),
        label: (usize, usize),
    },
    EmptyImage,
    PixelRange {
        image: &'static str,
        count: usize,
    },
    ClassOverflow {
        value: u8,
        count: usize,
        classes: usize,
    },
    Prompt(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { t1, t2, label } => write!(
                f,
                "shape mismatch: t1 {}x{}, t2 {}x{}, label {}x{}",
                t1.0, t1.1, t2.0, t2.1, label.0, label.1
            ),
            Violation::EmptyImage => write!(f, "empty image"),
            Violation::PixelRange { image, count } => {
                write!(f, "{count} values of {image} outside [0, 1]")
            }
            Violation::ClassOverflow { value, count, classes } => write!(
                f,
                "pixel class overflow: {count} pixels carry label {value}, taxonomy has {classes} classes"
            ),
            Violation::Prompt(msg) => write!(f, "prompt record: {msg}"),
        }
    }
}

/// Returns every invariant violation of `s` under taxonomy `t`.
pub fn validate_sample(s: &BitemporalSample, t: &ClassTaxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    let d1 = (s.image_t1.height, s.image_t1.width);
    let d2 = (s.image_t2.height, s.image_t2.width);
    let dl = (s.label.height, s.label.width);
    if d1 != d2 || d1 != dl {
        out.push(Violation::ShapeMismatch {
            t1: d1,
            t2: d2,
            label: dl,
        });
    }
    if d1.0 == 0 || d1.1 == 0 {
        out.push(Violation::EmptyImage);
    }
    for (name, img) in [("t1", &s.image_t1), ("t2", &s.image_t2)] {
        let bad = img.data.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if bad > 0 {
            out.push(Violation::PixelRange {
                image: name,
                count: bad,
            });
        }
    }
    let k = t.num_classes();
    let mut overflow = std::collections::BTreeMap::new();
    for &v in &s.label.data {
        if v != IGNORE_LABEL && v as usize >= k {
            *overflow.entry(v).or_insert(0usize) += 1;
        }
    }
    for (value, count) in overflow {
        out.push(Violation::ClassOverflow {
            value,
            count,
            classes: k,
        });
    }
    if let Some(p) = &s.prompt {
        out.extend(p.violations().into_iter().map(Violation::Prompt));
    }
    out
}

/// Stacks images into a `(N, 3, H, W)` tensor. All images must share a size.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return arg_err("empty image batch");
    };
    let (h, w) = (first.height, first.width);
    let p = 3 * h * w;
    let mut data = vec![0.0; images.len() * p];
    for (i, img) in images.iter().enumerate() {
        if (img.height, img.width) != (h, w) {
            return arg_err(format!("image {i} is {}x{}, batch is {h}x{w}", img.height, img.width));
        }
        img.write_chw(&mut data[i * p..(i + 1) * p]);
    }
    Ok(Tensor::new(&[images.len(), 3, h, w], data)?)
}
