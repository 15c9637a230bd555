//! Cross-modal arbitration: text prototypes for every class, a batch context
//! offset from per-sample scene prompts, pixel-wise similarity against the
//! decoder feature and a residual gate.

mod text;

pub use text::{
    EmbeddingTable, EncoderKind, StubEncoder, TextEncoder, TextEncoderHandle, TextEncoderSpec, WEIGHTS_ENV,
};

use fcd_autograd::{Binding, ParamId, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, CoreError, Result};
use crate::model::layers::{Conv, ConvDef, Init};
use crate::prompt::PromptRecord;
use crate::taxonomy::ClassTaxonomy;

/// Nuisances are named only above this confidence.
pub const NUISANCE_THRESHOLD: f64 = 0.5;

/// One brief prompt per class, in class id order.
pub fn build_brief_prompts(t: &ClassTaxonomy) -> Vec<String> {
    t.brief_prompts()
}

/// Scene/nuisance sentence for one sample.
pub fn build_input_prompt(r: &PromptRecord) -> String {
    let named: Vec<&str> = r
        .nuisances
        .iter()
        .filter(|n| n.confidence > NUISANCE_THRESHOLD)
        .map(|n| n.name.phrase())
        .collect();
    let scene = r.scene.as_str();
    if named.is_empty() {
        format!("Satellite image of {scene} area. Clear conditions.")
    } else {
        format!("Satellite image of {scene} area. Ignore {}.", named.join(", "))
    }
}

/// Rejects an input prompt that carries change-type information: any brief
/// prompt as a substring, or the word "change".
pub fn check_no_label_leak(input_prompt: &str, brief: &[String]) -> Result<()> {
    let lower = input_prompt.to_lowercase();
    if let Some(b) = brief.iter().find(|b| lower.contains(&b.to_lowercase())) {
        return Err(CoreError::Argument(format!(
            "input prompt {input_prompt:?} contains class prompt {b:?}"
        )));
    }
    if lower.contains("change") {
        return Err(CoreError::Argument(format!(
            "input prompt {input_prompt:?} mentions change"
        )));
    }
    Ok(())
}

/// Row-normalised `(N, d)` class embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPrototypes {
    pub matrix: Tensor,
    pub adapted: bool,
}

impl TextPrototypes {
    pub fn rows(&self) -> usize {
        self.matrix.dim(0)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim(1)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix.data()[k * d..(k + 1) * d]
    }
}

/// Prototypes of `prompts`; embeddings are memoised by the handle, so repeat
/// calls return bit-identical matrices.
pub fn category_prototypes(prompts: &[String], enc: &TextEncoderHandle) -> Result<TextPrototypes> {
    if prompts.is_empty() {
        return arg_err("no prompts");
    }
    Ok(TextPrototypes {
        matrix: enc.embed_matrix(prompts)?,
        adapted: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// One gate per pixel shared by all channels.
    Spatial,
    /// One gate per pixel and channel.
    PerChannel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmlaConfig {
    pub dim: usize,
    pub alpha_init: f64,
    pub gamma_init: f64,
    pub gate: GateMode,
}

impl Default for CmlaConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            alpha_init: 0.1,
            gamma_init: 10.0,
            gate: GateMode::Spatial,
        }
    }
}

/// Trainable arbitration parameters. The text encoder lives outside.
#[derive(Clone, Debug)]
pub struct Cmla {
    pub cfg: CmlaConfig,
    pub proj: Conv,
    pub alpha: ParamId,
    pub gamma: ParamId,
    pub mlp_reduce: Conv,
    pub mlp_expand: Conv,
    pub gate: Conv,
}

#[derive(Clone, Debug)]
pub struct CmlaOutput {
    /// `(B, N, h, w)`.
    pub scores: Var,
    /// `(B, 1, h, w)` or `(B, C, h, w)`, in (0, 1).
    pub gate: Var,
    pub gated: Var,
    /// `(N, d)`.
    pub prototypes: Var,
}

impl Cmla {
    pub fn new(init: &mut Init, cfg: &CmlaConfig, z_channels: usize, classes: usize) -> Result<Self> {
        let d = cfg.dim;
        if d < 8 {
            return Err(CoreError::Config(format!("text dim {d} is below 8")));
        }
        Ok(init.scoped("cmla", |init| {
            let gate_out = match cfg.gate {
                GateMode::Spatial => 1,
                GateMode::PerChannel => z_channels,
            };
            let proj = Conv::new(init, "proj", ConvDef::pointwise(z_channels, d));
            let alpha = init.tensor("alpha", Tensor::full(&[1, 1], cfg.alpha_init));
            let gamma = init.tensor("gamma", Tensor::full(&[1, 1, 1, 1], cfg.gamma_init));
            let mlp_reduce = Conv::new(init, "mlp.reduce", ConvDef::pointwise(d, (d / 4).max(1)).gain(2.0));
            let mlp_expand = Conv::new(init, "mlp.expand", ConvDef::pointwise((d / 4).max(1), d));
            let gate = init.scoped("gate", |init| Conv {
                weight: init.zeros("weight", &[gate_out, classes, 1, 1]),
                bias: Some(init.zeros("bias", &[gate_out])),
                spec: Default::default(),
            });
            Self {
                cfg: cfg.clone(),
                proj,
                alpha,
                gamma,
                mlp_reduce,
                mlp_expand,
                gate,
            }
        }))
    }

    /// `MLP(mean of unit prompt embeddings)`, shape `(1, d)`.
    pub fn context_offset(&self, b: &Binding, prompts: &[String], enc: &TextEncoderHandle) -> Result<Var> {
        if prompts.is_empty() {
            return arg_err("context offset needs at least one prompt");
        }
        let d = enc.dim();
        // distinct prompts in sorted order, weighted by frequency: the mean is
        // then independent of batch order and exact for repeated prompts
        let mut counts = std::collections::BTreeMap::new();
        for p in prompts {
            *counts.entry(p.as_str()).or_insert(0usize) += 1;
        }
        let n = prompts.len() as f64;
        let mut mean = vec![0.0; d];
        for (p, c) in counts {
            let w = c as f64 / n;
            for (m, v) in mean.iter_mut().zip(enc.embed(p)?.iter()) {
                *m += w * v;
            }
        }
        let x = Var::constant(Tensor::new(&[1, d, 1, 1], mean)?);
        let h = self.mlp_reduce.forward(b, &x)?.relu();
        Ok(self.mlp_expand.forward(b, &h)?.reshape(&[1, d])?)
    }

    /// Row-normalised `t + alpha * delta`. When the offset is exactly zero the
    /// stored unit rows are returned unchanged.
    pub fn adapt_prototypes(&self, b: &Binding, t: &TextPrototypes, delta: &Var) -> Result<Var> {
        let shift = b.param(self.alpha).mul(delta)?;
        let base = Var::constant(t.matrix.clone());
        let y = base.add(&shift)?.l2_normalize_axis1()?;
        if shift.value().data().iter().all(|&v| v == 0.0) {
            return Ok(Var::from_op(t.matrix.clone(), vec![y], |a| vec![Some(a.grad.clone())]));
        }
        Ok(y)
    }

    /// Per-pixel unit embeddings `V`, shape `(B, d, h, w)`.
    pub fn pixel_embeddings(&self, b: &Binding, z: &Var) -> Result<Var> {
        Ok(self.proj.forward(b, z)?.l2_normalize_axis1()?)
    }

    /// `gamma * <V, t>` for every class, `(B, N, h, w)`.
    pub fn score_map(&self, b: &Binding, z: &Var, prototypes: &Var) -> Result<Var> {
        let v = self.pixel_embeddings(b, z)?;
        let (n, d) = (prototypes.shape()[0], prototypes.shape()[1]);
        let w = prototypes.reshape(&[n, d, 1, 1])?;
        let s = v.conv2d(&w, None, Default::default())?;
        Ok(s.mul(&b.param(self.gamma))?)
    }

    /// Returns `(Z + Z * G, G)`.
    pub fn apply_gate(&self, b: &Binding, z: &Var, s: &Var) -> Result<(Var, Var)> {
        let g = self.gate.forward(b, s)?.sigmoid();
        Ok((z.add(&z.mul(&g)?)?, g))
    }

    pub fn forward(
        &self,
        b: &Binding,
        z: &Var,
        prompts: &[String],
        protos: &TextPrototypes,
        enc: &TextEncoderHandle,
    ) -> Result<CmlaOutput> {
        let delta = self.context_offset(b, prompts, enc)?;
        let prototypes = self.adapt_prototypes(b, protos, &delta)?;
        let scores = self.score_map(b, z, &prototypes)?;
        let (gated, gate) = self.apply_gate(b, z, &scores)?;
        Ok(CmlaOutput {
            scores,
            gate,
            gated,
            prototypes,
        })
    }
}
