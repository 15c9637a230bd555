//! Training configuration and its flat `key = value` file format.
//!
//! Keys mirror the field paths of [`TrainConfig`]; `#` starts a comment.
//! Keys not present in a file keep their defaults.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmla::{CmlaConfig, GateMode, TextEncoderSpec};
use crate::error::{io_err, CoreError, Result};
use crate::model::{BlockKind, NetworkConfig};
use crate::objective::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Stops early once this many optimizer steps have run; the cosine
    /// schedule then spans the capped step count.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Random horizontal and vertical flips of training pairs.
    pub flips: bool,
    /// Adds the hard-region term to the objective. Off means the main loss only.
    pub aux_loss: bool,
    /// Validate (and possibly checkpoint) every this many epochs; the last
    /// epoch is always validated.
    pub validate_every: usize,
    pub model: NetworkConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            optimizer: OptimizerConfig::default(),
            epochs: 300,
            max_steps: None,
            batch_size: 8,
            seed: 0,
            flips: false,
            aux_loss: true,
            validate_every: 1,
            model: NetworkConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e: T::Err| CoreError::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_gate(v: &str) -> Result<GateMode> {
    match v {
        "spatial" => Ok(GateMode::Spatial),
        "per_channel" => Ok(GateMode::PerChannel),
        _ => Err(CoreError::Config(format!(
            "cmla.gate: expected spatial or per_channel, got {v:?}"
        ))),
    }
}

fn gate_name(g: GateMode) -> &'static str {
    match g {
        GateMode::Spatial => "spatial",
        GateMode::PerChannel => "per_channel",
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(CoreError::Config("max_steps must be at least 1".into()));
        }
        if self.validate_every == 0 {
            return Err(CoreError::Config("validate_every must be at least 1".into()));
        }
        self.model.encoder.validate()?;
        self.loss.validate()
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "lr" => self.lr = parse(key, v)?,
            "optimizer.weight_decay" => self.optimizer.weight_decay = parse(key, v)?,
            "optimizer.beta1" => self.optimizer.beta1 = parse(key, v)?,
            "optimizer.beta2" => self.optimizer.beta2 = parse(key, v)?,
            "optimizer.eps" => self.optimizer.eps = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "flips" => self.flips = parse(key, v)?,
            "aux_loss" => self.aux_loss = parse(key, v)?,
            "validate_every" => self.validate_every = parse(key, v)?,
            "text_encoder" => m.text_encoder = parse::<TextEncoderSpec>(key, v)?,
            "model.seed" => m.seed = parse(key, v)?,
            "encoder.stage_channels" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                m.encoder.stage_channels = parts
                    .try_into()
                    .map_err(|_| CoreError::Config(format!("{key}: expected four comma-separated widths")))?;
            }
            "encoder.block" => m.encoder.block = parse::<BlockKind>(key, v)?,
            "encoder.blocks_per_stage" => m.encoder.blocks_per_stage = parse(key, v)?,
            "encoder.state_dim" => m.encoder.state_dim = parse(key, v)?,
            "encoder.mlp_ratio" => m.encoder.mlp_ratio = parse(key, v)?,
            "decoder.width" => m.decoder.width = parse(key, v)?,
            "decoder.groups" => m.decoder.groups = parse(key, v)?,
            "decoder.dilation" => m.decoder.dilation = parse(key, v)?,
            "decoder.se_reduction" => m.decoder.se_reduction = parse(key, v)?,
            "decoder.state_dim" => m.decoder.state_dim = parse(key, v)?,
            "decoder.msde" => m.decoder.switches.msde = parse(key, v)?,
            "decoder.dpse" => m.decoder.switches.dpse = parse(key, v)?,
            "decoder.drsa" => m.decoder.switches.drsa = parse(key, v)?,
            "cmla.dim" => m.cmla.dim = parse(key, v)?,
            "cmla.alpha_init" => m.cmla.alpha_init = parse(key, v)?,
            "cmla.gamma_init" => m.cmla.gamma_init = parse(key, v)?,
            "cmla.gate" => m.cmla.gate = parse_gate(v)?,
            "loss.tau" => self.loss.tau = parse(key, v)?,
            "loss.lambda_aux" => self.loss.lambda_aux = parse(key, v)?,
            "loss.ce_weight" => self.loss.ce_weight = parse(key, v)?,
            "loss.dice_weight" => self.loss.dice_weight = parse(key, v)?,
            "loss.dice_smooth" => self.loss.dice_smooth = parse(key, v)?,
            "loss.epsilon" => self.loss.epsilon = parse(key, v)?,
            "loss.ignore_index" => self.loss.ignore_index = parse(key, v)?,
            _ => return Err(CoreError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in file order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let (e, d, c): (_, _, &CmlaConfig) = (&m.encoder, &m.decoder, &m.cmla);
        let sc = e.stage_channels.map(|x| x.to_string()).join(",");
        vec![
            ("lr", self.lr.to_string()),
            ("optimizer.weight_decay", self.optimizer.weight_decay.to_string()),
            ("optimizer.beta1", self.optimizer.beta1.to_string()),
            ("optimizer.beta2", self.optimizer.beta2.to_string()),
            ("optimizer.eps", self.optimizer.eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.map_or("none".into(), |s| s.to_string())),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("flips", self.flips.to_string()),
            ("aux_loss", self.aux_loss.to_string()),
            ("validate_every", self.validate_every.to_string()),
            ("text_encoder", m.text_encoder.to_string()),
            ("model.seed", m.seed.to_string()),
            ("encoder.stage_channels", sc),
            ("encoder.block", e.block.to_string()),
            ("encoder.blocks_per_stage", e.blocks_per_stage.to_string()),
            ("encoder.state_dim", e.state_dim.to_string()),
            ("encoder.mlp_ratio", e.mlp_ratio.to_string()),
            ("decoder.width", d.width.to_string()),
            ("decoder.groups", d.groups.to_string()),
            ("decoder.dilation", d.dilation.to_string()),
            ("decoder.se_reduction", d.se_reduction.to_string()),
            ("decoder.state_dim", d.state_dim.to_string()),
            ("decoder.msde", d.switches.msde.to_string()),
            ("decoder.dpse", d.switches.dpse.to_string()),
            ("decoder.drsa", d.switches.drsa.to_string()),
            ("cmla.dim", c.dim.to_string()),
            ("cmla.alpha_init", c.alpha_init.to_string()),
            ("cmla.gamma_init", c.gamma_init.to_string()),
            ("cmla.gate", gate_name(c.gate).to_owned()),
            ("loss.tau", self.loss.tau.to_string()),
            ("loss.lambda_aux", self.loss.lambda_aux.to_string()),
            ("loss.ce_weight", self.loss.ce_weight.to_string()),
            ("loss.dice_weight", self.loss.dice_weight.to_string()),
            ("loss.dice_smooth", self.loss.dice_smooth.to_string()),
            ("loss.epsilon", self.loss.epsilon.to_string()),
            ("loss.ignore_index", self.loss.ignore_index.to_string()),
        ]
    }

    /// Parses a config file body on top of `base`.
    pub fn parse_with(base: TrainConfig, text: &str) -> Result<Self> {
        let mut cfg = base;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CoreError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(Self::default(), text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
