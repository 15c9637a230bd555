//! The full network: shared encoder, difference-aware decoder, cross-modal
//! gate and classification head.

pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod ssm;

use std::sync::Arc;

use fcd_autograd::{Binding, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use decoder::{pda, Decoder, DecoderConfig, DecoderOutput, DecoderSwitches, FgdaBlock, FgdaBlockConfig};
pub use encoder::{BlockKind, Encoder, EncoderConfig, Pyramid, STAGE_STRIDES};

use crate::cmla::{build_brief_prompts, build_input_prompt, category_prototypes, Cmla, CmlaConfig, CmlaOutput};
use crate::cmla::{TextEncoderHandle, TextEncoderSpec, TextPrototypes};
use crate::error::{arg_err, Result};
use crate::sample::{images_to_tensor, BitemporalSample, FeatureMap, LabelMap};
use crate::taxonomy::ClassTaxonomy;
use layers::Init;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub cmla: CmlaConfig,
    pub text_encoder: TextEncoderSpec,
    /// Seed for weight initialisation.
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            cmla: CmlaConfig::default(),
            text_encoder: TextEncoderSpec::Stub,
            seed: 0,
        }
    }
}

/// One batch of image pairs with their input prompts and optional labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(B, 3, H, W)`.
    pub t1: Tensor,
    pub t2: Tensor,
    pub prompts: Vec<String>,
    /// `B * H * W` labels, row-major per sample.
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn from_samples(samples: &[&BitemporalSample]) -> Result<Self> {
        if samples.is_empty() {
            return arg_err("empty batch");
        }
        let t1: Vec<_> = samples.iter().map(|s| &s.image_t1).collect();
        let t2: Vec<_> = samples.iter().map(|s| &s.image_t2).collect();
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            t1: images_to_tensor(&t1)?,
            t2: images_to_tensor(&t2)?,
            prompts: samples
                .iter()
                .map(|s| build_input_prompt(&s.prompt.clone().unwrap_or_default()))
                .collect(),
            labels: samples.iter().flat_map(|s| s.label.data.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.t1.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.t1.dim(2)
    }

    pub fn width(&self) -> usize {
        self.t1.dim(3)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub z: Var,
    /// Absent on the ungated path.
    pub cmla: Option<CmlaOutput>,
    /// `(B, K, H, W)` logits of the prediction path taken.
    pub logits: Var,
}

/// Encoder features of one sample, both dates.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramidPair {
    pub t1: Vec<FeatureMap>,
    pub t2: Vec<FeatureMap>,
}

pub struct Network {
    pub cfg: NetworkConfig,
    pub taxonomy: ClassTaxonomy,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub cmla: Cmla,
    pub text: Arc<TextEncoderHandle>,
    pub prototypes: TextPrototypes,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("cfg", &self.cfg)
            .field("parameters", &self.count_parameters())
            .finish()
    }
}

impl Network {
    pub fn new(cfg: &NetworkConfig, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let text = Arc::new(TextEncoderHandle::from_spec(&cfg.text_encoder, cfg.cmla.dim)?);
        Self::with_text(cfg, taxonomy, text)
    }

    /// Builds a network around an existing (possibly shared) text encoder.
    pub fn with_text(cfg: &NetworkConfig, taxonomy: &ClassTaxonomy, text: Arc<TextEncoderHandle>) -> Result<Self> {
        taxonomy.validate().map_err(crate::error::CoreError::Config)?;
        if text.dim() != cfg.cmla.dim {
            return Err(crate::error::CoreError::Config(format!(
                "text encoder dim {} differs from configured {}",
                text.dim(),
                cfg.cmla.dim
            )));
        }
        let k = taxonomy.num_classes();
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, cfg.seed);
        let encoder = Encoder::new(&mut init, &cfg.encoder)?;
        let decoder = Decoder::new(&mut init, &cfg.decoder, cfg.encoder.stage_channels, k)?;
        let cmla = Cmla::new(&mut init, &cfg.cmla, cfg.decoder.width, k)?;
        let prototypes = category_prototypes(&build_brief_prompts(taxonomy), &text)?;
        Ok(Self {
            cfg: cfg.clone(),
            taxonomy: taxonomy.clone(),
            store,
            encoder,
            decoder,
            cmla,
            text,
            prototypes,
        })
    }

    /// Trainable scalars; the text encoder contributes none.
    pub fn count_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn num_classes(&self) -> usize {
        self.taxonomy.num_classes()
    }

    /// Runs the model. With `gated == false` the arbitration head is skipped
    /// and the classifier reads `Z` directly.
    pub fn forward(&self, b: &Binding, t1: &Var, t2: &Var, prompts: &[String], gated: bool) -> Result<ForwardOutput> {
        let (h, w) = (t1.shape()[2], t1.shape()[3]);
        if gated && prompts.len() != t1.shape()[0] {
            return arg_err(format!("{} prompts for a batch of {}", prompts.len(), t1.shape()[0]));
        }
        let pyramid = self.encoder.forward(b, t1, t2)?;
        let z = self.decoder.features(b, &pyramid)?;
        if !gated {
            let logits = self.decoder.classify(b, &z, h, w)?;
            return Ok(ForwardOutput { z, cmla: None, logits });
        }
        let c = self.cmla.forward(b, &z, prompts, &self.prototypes, &self.text)?;
        let logits = self.decoder.classify(b, &c.gated, h, w)?;
        Ok(ForwardOutput {
            z,
            cmla: Some(c),
            logits,
        })
    }

    pub fn forward_batch(&self, b: &Binding, batch: &Batch, gated: bool) -> Result<ForwardOutput> {
        let t1 = Var::constant(batch.t1.clone());
        let t2 = Var::constant(batch.t2.clone());
        self.forward(b, &t1, &t2, &batch.prompts, gated)
    }

    /// Per-pixel argmax of the gated prediction.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<LabelMap>> {
        let b = Binding::inference(&self.store);
        let out = self.forward_batch(&b, batch, true)?;
        Ok(argmax_maps(out.logits.value()))
    }

    /// Encoder features of a single sample.
    pub fn encode_sample(&self, s: &BitemporalSample) -> Result<FeaturePyramidPair> {
        let b = Binding::inference(&self.store);
        let batch = Batch::from_samples(&[s])?;
        let p = self
            .encoder
            .forward(&b, &Var::constant(batch.t1), &Var::constant(batch.t2))?;
        let to_maps = |v: &[Var]| -> Result<Vec<FeatureMap>> {
            v.iter()
                .zip(STAGE_STRIDES)
                .map(|(f, scale)| {
                    let s = f.shape();
                    Ok(FeatureMap {
                        data: f.value().clone().reshape(&[s[1], s[2], s[3]])?,
                        scale,
                    })
                })
                .collect()
        };
        Ok(FeaturePyramidPair {
            t1: to_maps(&p.t1)?,
            t2: to_maps(&p.t2)?,
        })
    }
}

/// Class map per sample from `(B, K, H, W)` logits; ties go to the lower class.
pub fn argmax_maps(logits: &Tensor) -> Vec<LabelMap> {
    let s = logits.shape();
    let (n, k, h, w) = (s[0], s[1], s[2], s[3]);
    let p = h * w;
    let d = logits.data();
    (0..n)
        .map(|i| {
            let data = (0..p)
                .map(|px| {
                    let mut best = 0;
                    for c in 1..k {
                        if d[(i * k + c) * p + px] > d[(i * k + best) * p + px] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap {
                height: h,
                width: w,
                data,
            }
        })
        .collect()
}
