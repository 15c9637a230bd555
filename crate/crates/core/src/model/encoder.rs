//! Weight-shared hierarchical encoder for the two acquisition dates.

use fcd_autograd::{Binding, Var};
use serde::{Deserialize, Serialize};

use super::layers::{Conv, ConvDef, Init};
use super::ssm::ScanBlock;
use crate::error::{arg_err, CoreError, Result};

pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    ReferenceSsm,
    /// The scan is dropped; only the depthwise mixing and channel MLP remain.
    ConvOnly,
}

impl std::str::FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "reference_ssm" => Ok(Self::ReferenceSsm),
            "conv_only" => Ok(Self::ConvOnly),
            other => Err(format!("unknown encoder block {other:?}")),
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ReferenceSsm => "reference_ssm",
            Self::ConvOnly => "conv_only",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub stage_channels: [usize; 4],
    pub block: BlockKind,
    pub blocks_per_stage: usize,
    pub state_dim: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stage_channels: [32, 64, 128, 256],
            block: BlockKind::ReferenceSsm,
            blocks_per_stage: 2,
            state_dim: 4,
            mlp_ratio: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.stage_channels;
        if c[0] == 0 || c.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::Config(format!(
                "stage channels {c:?} must be positive and strictly increasing"
            )));
        }
        if self.state_dim == 0 || self.mlp_ratio == 0 {
            return Err(CoreError::Config("state_dim and mlp_ratio must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    /// `None` in conv-only mode.
    scan: Option<ScanBlock>,
    /// Depthwise mixing used when the scan is absent.
    local: Option<Conv>,
    expand: Conv,
    contract: Conv,
}

impl EncoderBlock {
    fn new(init: &mut Init, leaf: &str, ch: usize, cfg: &EncoderConfig) -> Self {
        init.scoped(leaf, |init| {
            let (scan, local) = match cfg.block {
                BlockKind::ReferenceSsm => (Some(ScanBlock::new(init, "ssm", ch, cfg.state_dim)), None),
                BlockKind::ConvOnly => (
                    None,
                    Some(Conv::new(init, "local", ConvDef::same(ch, ch, 3).groups(ch))),
                ),
            };
            let hidden = ch * cfg.mlp_ratio;
            Self {
                scan,
                local,
                expand: Conv::new(init, "mlp.expand", ConvDef::pointwise(ch, hidden).gain(2.0)),
                contract: Conv::new(init, "mlp.contract", ConvDef::pointwise(hidden, ch).gain(0.5)),
            }
        })
    }

    fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        let x = match (&self.scan, &self.local) {
            (Some(s), _) => s.forward(b, x)?,
            (None, Some(l)) => x.add(&l.forward(b, x)?)?,
            (None, None) => x.clone(),
        };
        let h = self.expand.forward(b, &x)?.silu();
        Ok(x.add(&self.contract.forward(b, &h)?)?)
    }
}

/// Per-stage features of both dates, finest first. Each entry is
/// `(N, C_i, H / s_i, W / s_i)`.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub t1: Vec<Var>,
    pub t2: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    stem: Conv,
    downs: Vec<Conv>,
    stages: Vec<Vec<EncoderBlock>>,
}

impl Encoder {
    pub fn new(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.stage_channels;
        init.scoped("encoder", |init| {
            let stem = Conv::new(init, "stem", ConvDef::same(3, c[0], 4).strided(4));
            let downs = (1..4)
                .map(|i| Conv::new(init, &format!("down{i}"), ConvDef::same(c[i - 1], c[i], 2).strided(2)))
                .collect();
            let stages = (0..4)
                .map(|i| {
                    (0..cfg.blocks_per_stage)
                        .map(|j| EncoderBlock::new(init, &format!("stage{i}.block{j}"), c[i], cfg))
                        .collect()
                })
                .collect();
            Ok(Self {
                cfg: cfg.clone(),
                stem,
                downs,
                stages,
            })
        })
    }

    /// Runs one stream; `x` is `(N, 3, H, W)` with values in `[0, 1]`.
    pub fn forward_single(&self, b: &Binding, x: &Var) -> Result<Vec<Var>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return arg_err(format!("encoder expects (N, 3, H, W), got {s:?}"));
        }
        if !s[2].is_multiple_of(32) || !s[3].is_multiple_of(32) || s[2] == 0 || s[3] == 0 {
            return arg_err(format!(
                "spatial size {}x{} is not a positive multiple of 32",
                s[2], s[3]
            ));
        }
        let mut h = self.stem.forward(b, &x.add_scalar(-0.5))?;
        let mut out = Vec::with_capacity(4);
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                h = self.downs[i - 1].forward(b, &h)?;
            }
            for blk in blocks {
                h = blk.forward(b, &h)?;
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Encodes both dates in one batched pass so they share every weight.
    pub fn forward(&self, b: &Binding, t1: &Var, t2: &Var) -> Result<Pyramid> {
        if t1.shape() != t2.shape() {
            return arg_err(format!("date shapes differ: {:?} vs {:?}", t1.shape(), t2.shape()));
        }
        let n = t1.shape()[0];
        let both = Var::concat(&[t1, t2], 0)?;
        let feats = self.forward_single(b, &both)?;
        let mut p = Pyramid {
            t1: Vec::with_capacity(4),
            t2: Vec::with_capacity(4),
        };
        for f in feats {
            p.t1.push(f.narrow(0, 0, n)?);
            p.t2.push(f.narrow(0, n, n)?);
        }
        Ok(p)
    }
}
