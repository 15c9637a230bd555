//! Difference-aware decoder: per stage, difference anchoring, multi-scale
//! excavation, dual-path purification, redundancy-suppressing aggregation and
//! conv/scan reconstruction, fused coarse to fine.

use fcd_autograd::{Binding, Var};
use serde::{Deserialize, Serialize};

use super::encoder::Pyramid;
use super::layers::{dims, Conv, ConvDef, Init, SqueezeExcite};
use super::ssm::ScanBlock;
use crate::error::{arg_err, CoreError, Result};

/// Switches for the three optional decoder submodules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSwitches {
    pub msde: bool,
    pub dpse: bool,
    pub drsa: bool,
}

impl Default for DecoderSwitches {
    fn default() -> Self {
        Self::ALL
    }
}

impl DecoderSwitches {
    pub const ALL: Self = Self {
        msde: true,
        dpse: true,
        drsa: true,
    };
    pub const NONE: Self = Self {
        msde: false,
        dpse: false,
        drsa: false,
    };

    pub fn enabled(&self) -> usize {
        [self.msde, self.dpse, self.drsa].iter().filter(|b| **b).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Common output width of every stage.
    pub width: usize,
    pub groups: usize,
    pub dilation: usize,
    pub se_reduction: usize,
    pub state_dim: usize,
    pub switches: DecoderSwitches,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            groups: 4,
            dilation: 2,
            se_reduction: 4,
            state_dim: 4,
            switches: DecoderSwitches::ALL,
        }
    }
}

/// Shape of one decoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FgdaBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub dilation: usize,
    pub se_reduction: usize,
    pub state_dim: usize,
    pub switches: DecoderSwitches,
}

impl FgdaBlockConfig {
    pub fn for_stage(cfg: &DecoderConfig, in_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels: cfg.width,
            groups: cfg.groups,
            dilation: cfg.dilation,
            se_reduction: cfg.se_reduction,
            state_dim: cfg.state_dim,
            switches: cfg.switches,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || self.se_reduction == 0 || self.out_channels == 0 || self.state_dim == 0 {
            return Err(CoreError::Config(
                "groups, se_reduction, out_channels and state_dim must be positive".into(),
            ));
        }
        if self.switches.msde && (!self.in_channels.is_multiple_of(g) || !self.out_channels.is_multiple_of(g)) {
            return Err(CoreError::Config(format!(
                "grouped convolutions need channels divisible by {g}: in {}, out {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// Channel concat of `|a - b|` and `max(a, b)`.
pub fn pda(ia: &Var, ib: &Var) -> Result<Var> {
    if ia.shape() != ib.shape() {
        return arg_err(format!("feature shapes differ: {:?} vs {:?}", ia.shape(), ib.shape()));
    }
    let diff = ia.sub(ib)?.abs();
    let max = ia.maximum(ib)?;
    Ok(Var::concat(&[&diff, &max], 1)?)
}

#[derive(Clone, Debug)]
pub enum Msde {
    Full { plain: Conv, dilated: Conv, fuse: Conv },
    Projection(Conv),
}

impl Msde {
    fn new(init: &mut Init, cfg: &FgdaBlockConfig) -> Self {
        let (cin, d, g) = (2 * cfg.in_channels, cfg.out_channels, cfg.groups);
        init.scoped("msde", |init| {
            if cfg.switches.msde {
                Msde::Full {
                    plain: Conv::new(init, "plain", ConvDef::same(cin, d, 3).groups(g)),
                    dilated: Conv::new(
                        init,
                        "dilated",
                        ConvDef::same(cin, d, 3).groups(g).dilation(cfg.dilation),
                    ),
                    fuse: Conv::new(init, "fuse", ConvDef::pointwise(2 * d, d).gain(2.0)),
                }
            } else {
                Msde::Projection(Conv::new(init, "proj", ConvDef::pointwise(cin, d).gain(2.0)))
            }
        })
    }

    pub fn forward(&self, b: &Binding, p: &Var) -> Result<Var> {
        let out = match self {
            Msde::Full { plain, dilated, fuse } => {
                let a = plain.forward(b, p)?;
                let d = dilated.forward(b, p)?;
                fuse.forward(b, &Var::concat(&[&a, &d], 1)?)?
            }
            Msde::Projection(c) => c.forward(b, p)?,
        };
        Ok(out.silu())
    }
}

#[derive(Clone, Debug)]
pub struct Dpse {
    pub se: SqueezeExcite,
    pub cbam_reduce: Conv,
    pub cbam_expand: Conv,
    pub spatial: Conv,
    pub out: Conv,
}

/// Intermediate gates of [`Dpse`], exposed for inspection.
#[derive(Clone, Debug)]
pub struct DpseParts {
    /// `(N, C, 1, 1)`.
    pub se: Var,
    /// `(N, C, 1, 1)`.
    pub channel: Var,
    /// `(N, 1, h, w)`.
    pub spatial: Var,
    pub out: Var,
}

impl Dpse {
    fn new(init: &mut Init, cfg: &FgdaBlockConfig) -> Self {
        let d = cfg.out_channels;
        let hidden = (d / cfg.se_reduction).max(1);
        init.scoped("dpse", |init| Self {
            se: SqueezeExcite::new(init, "se", d, cfg.se_reduction),
            cbam_reduce: Conv::new(init, "cbam.reduce", ConvDef::pointwise(d, hidden).gain(2.0)),
            cbam_expand: Conv::new(init, "cbam.expand", ConvDef::pointwise(hidden, d)),
            spatial: Conv::new(init, "cbam.spatial", ConvDef::same(2, 1, 7)),
            out: Conv::new(init, "out", ConvDef::pointwise(d, d)),
        })
    }

    fn cbam_mlp(&self, b: &Binding, x: &Var) -> Result<Var> {
        let h = self.cbam_reduce.forward(b, x)?.relu();
        self.cbam_expand.forward(b, &h)
    }

    pub fn parts(&self, b: &Binding, m: &Var) -> Result<DpseParts> {
        let se = self.se.gate(b, m)?;
        let avg = self.cbam_mlp(b, &m.global_avg_pool()?)?;
        let max = self.cbam_mlp(b, &m.global_max_pool()?)?;
        let channel = avg.add(&max)?.sigmoid();
        let mc = m.mul(&channel)?;
        let pooled = Var::concat(&[&mc.channel_mean()?, &mc.channel_max()?], 1)?;
        let spatial = self.spatial.forward(b, &pooled)?.sigmoid();
        let gated = m.mul(&se)?.mul(&channel)?.mul(&spatial)?;
        let out = self.out.forward(b, &gated)?;
        Ok(DpseParts {
            se,
            channel,
            spatial,
            out,
        })
    }

    pub fn forward(&self, b: &Binding, m: &Var) -> Result<Var> {
        Ok(self.parts(b, m)?.out)
    }
}

#[derive(Clone, Debug)]
pub enum Drsa {
    Full {
        compress: Conv,
        refine: Conv,
        se: SqueezeExcite,
    },
    Projection(Conv),
}

impl Drsa {
    fn new(init: &mut Init, cfg: &FgdaBlockConfig) -> Self {
        let (c, d) = (cfg.in_channels, cfg.out_channels);
        init.scoped("drsa", |init| {
            if cfg.switches.drsa {
                Drsa::Full {
                    compress: Conv::new(init, "compress", ConvDef::pointwise(d + 2 * c, d).gain(2.0)),
                    refine: Conv::new(init, "refine", ConvDef::same(d, d, 3).gain(2.0)),
                    se: SqueezeExcite::new(init, "se", d, cfg.se_reduction),
                }
            } else {
                Drsa::Projection(Conv::new(init, "proj", ConvDef::pointwise(d, d)))
            }
        })
    }

    pub fn forward(&self, b: &Binding, r: &Var, ia: &Var, ib: &Var) -> Result<Var> {
        let (_, _, h, w) = dims(r);
        for f in [ia, ib] {
            let (_, _, fh, fw) = dims(f);
            if (fh, fw) != (h, w) {
                return arg_err(format!("DRSA inputs misaligned: {h}x{w} vs {fh}x{fw}"));
            }
        }
        match self {
            Drsa::Full { compress, refine, se } => {
                let cat = Var::concat(&[r, ia, ib], 1)?;
                let x = compress.forward(b, &cat)?.silu();
                let x = refine.forward(b, &x)?.silu();
                se.forward(b, &x)
            }
            Drsa::Projection(c) => c.forward(b, r),
        }
    }
}

/// `x + scan_branch(x) + conv3x3(x)`.
#[derive(Clone, Debug)]
pub struct ConvMamba {
    pub ssm: ScanBlock,
    pub local: Conv,
}

impl ConvMamba {
    fn new(init: &mut Init, d: usize, states: usize) -> Self {
        init.scoped("recon", |init| Self {
            ssm: ScanBlock::new(init, "ssm", d, states),
            local: Conv::new(init, "local", ConvDef::same(d, d, 3).gain(0.5)),
        })
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        let long = self.ssm.branch(b, x)?;
        let local = self.local.forward(b, x)?;
        Ok(x.add(&long)?.add(&local)?)
    }
}

#[derive(Clone, Debug)]
pub struct FgdaBlock {
    pub cfg: FgdaBlockConfig,
    pub msde: Msde,
    pub dpse: Option<Dpse>,
    pub drsa: Drsa,
    /// Projection of the upsampled coarser output; absent on the coarsest stage.
    pub skip: Option<Conv>,
    pub recon: ConvMamba,
}

impl FgdaBlock {
    pub fn new(init: &mut Init, leaf: &str, cfg: FgdaBlockConfig, coarsest: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(init.scoped(leaf, |init| Self {
            cfg,
            msde: Msde::new(init, &cfg),
            dpse: cfg.switches.dpse.then(|| Dpse::new(init, &cfg)),
            drsa: Drsa::new(init, &cfg),
            skip: (!coarsest).then(|| Conv::new(init, "skip", ConvDef::pointwise(cfg.out_channels, cfg.out_channels))),
            recon: ConvMamba::new(init, cfg.out_channels, cfg.state_dim),
        }))
    }

    /// `coarser` is the previous (half-resolution) stage output, if any.
    pub fn forward(&self, b: &Binding, ia: &Var, ib: &Var, coarser: Option<&Var>) -> Result<Var> {
        let p = pda(ia, ib)?;
        let m = self.msde.forward(b, &p)?;
        let r = match &self.dpse {
            Some(d) => d.forward(b, &m)?,
            None => m,
        };
        let mut x = self.drsa.forward(b, &r, ia, ib)?;
        if let (Some(skip), Some(prev)) = (&self.skip, coarser) {
            let (_, _, h, w) = dims(&x);
            let up = prev.resize_bilinear(h, w)?;
            x = x.add(&skip.forward(b, &up)?)?;
        }
        self.recon.forward(b, &x)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// Finest (stride 4) decoder feature.
    pub z: Var,
    /// `(N, K, H, W)` logits of the ungated head.
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    /// Finest first.
    pub blocks: Vec<FgdaBlock>,
    pub head: Conv,
}

impl Decoder {
    pub fn new(init: &mut Init, cfg: &DecoderConfig, stage_channels: [usize; 4], classes: usize) -> Result<Self> {
        init.scoped("decoder", |init| {
            let blocks = (0..4)
                .map(|i| {
                    let bc = FgdaBlockConfig::for_stage(cfg, stage_channels[i]);
                    FgdaBlock::new(init, &format!("stage{i}"), bc, i == 3)
                })
                .collect::<Result<Vec<_>>>()?;
            let head = Conv::new(init, "head", ConvDef::pointwise(cfg.width, classes).no_bias());
            Ok(Self {
                cfg: cfg.clone(),
                blocks,
                head,
            })
        })
    }

    /// Decodes the pyramid into the stride-4 feature `Z`.
    pub fn features(&self, b: &Binding, p: &Pyramid) -> Result<Var> {
        if p.t1.len() != 4 || p.t2.len() != 4 {
            return arg_err(format!(
                "pyramid has {} / {} stages, expected 4",
                p.t1.len(),
                p.t2.len()
            ));
        }
        let mut prev: Option<Var> = None;
        for i in (0..4).rev() {
            prev = Some(self.blocks[i].forward(b, &p.t1[i], &p.t2[i], prev.as_ref())?);
        }
        Ok(prev.expect("four stages"))
    }

    /// Bias-free 1x1 head followed by bilinear upsampling to `(h, w)`.
    pub fn classify(&self, b: &Binding, z: &Var, h: usize, w: usize) -> Result<Var> {
        let l = self.head.forward(b, z)?;
        Ok(l.resize_bilinear(h, w)?)
    }

    pub fn decode(&self, b: &Binding, p: &Pyramid, h: usize, w: usize) -> Result<DecoderOutput> {
        let z = self.features(b, p)?;
        let logits = self.classify(b, &z, h, w)?;
        Ok(DecoderOutput { z, logits })
    }
}
