//! Frozen text encoders and the memoising handle in front of them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use fcd_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};

/// Environment variable naming a local embedding table for the pretrained encoder.
pub const WEIGHTS_ENV: &str = "FCD_TEXT_ENCODER_WEIGHTS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    PretrainedFrozen,
    DeterministicStub,
}

pub trait TextEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn kind(&self) -> EncoderKind;
    /// Raw (not necessarily normalised) embedding of `prompt`.
    fn encode(&self, prompt: &str) -> Result<Vec<f64>>;
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hash-seeded pseudo-random embedding; needs no weights.
#[derive(Clone, Debug)]
pub struct StubEncoder {
    dim: usize,
}

impl StubEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl TextEncoder for StubEncoder {
    fn name(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EncoderKind {
        EncoderKind::DeterministicStub
    }

    fn encode(&self, prompt: &str) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt));
        Ok((0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }
}

#[derive(Deserialize)]
struct TableFile {
    dim: usize,
    embeddings: HashMap<String, Vec<f64>>,
}

/// Precomputed embeddings exported from a pretrained text model, stored as
/// JSON `{"dim": d, "embeddings": {"<prompt>": [..d floats..]}}`.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let file: TableFile = serde_json::from_str(&text).map_err(|e| CoreError::Format {
            what: "text embedding table",
            msg: e.to_string(),
        })?;
        if let Some((k, v)) = file.embeddings.iter().find(|(_, v)| v.len() != file.dim) {
            return Err(CoreError::Format {
                what: "text embedding table",
                msg: format!("entry {k:?} has {} values, table dim is {}", v.len(), file.dim),
            });
        }
        Ok(Self {
            name: path.display().to_string(),
            dim: file.dim,
            table: file.embeddings,
        })
    }
}

impl TextEncoder for EmbeddingTable {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EncoderKind {
        EncoderKind::PretrainedFrozen
    }

    fn encode(&self, prompt: &str) -> Result<Vec<f64>> {
        self.table.get(prompt).cloned().ok_or_else(|| CoreError::TextEncoder {
            prompt: prompt.to_owned(),
            msg: format!("not present in {}", self.name),
        })
    }
}

/// Which encoder to build; stored in configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderSpec {
    Stub,
    /// Embedding table at the given path; an empty path defers to [`WEIGHTS_ENV`].
    Pretrained(PathBuf),
}

impl std::fmt::Display for TextEncoderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Stub => f.write_str("stub"),
            Self::Pretrained(p) if p.as_os_str().is_empty() => f.write_str("pretrained"),
            Self::Pretrained(p) => write!(f, "pretrained:{}", p.display()),
        }
    }
}

impl std::str::FromStr for TextEncoderSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "stub" => Ok(Self::Stub),
            "pretrained" => Ok(Self::Pretrained(PathBuf::new())),
            _ => s
                .strip_prefix("pretrained:")
                .map(|p| Self::Pretrained(PathBuf::from(p)))
                .ok_or_else(|| format!("text encoder must be stub, pretrained or pretrained:PATH, got {s:?}")),
        }
    }
}

/// Shared front end: normalises embeddings and memoises them per string.
pub struct TextEncoderHandle {
    encoder: Box<dyn TextEncoder>,
    cache: RwLock<HashMap<String, Arc<[f64]>>>,
}

impl std::fmt::Debug for TextEncoderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextEncoderHandle")
            .field("name", &self.name())
            .field("dim", &self.dim())
            .field("kind", &self.kind())
            .finish()
    }
}

impl TextEncoderHandle {
    pub fn new(encoder: Box<dyn TextEncoder>) -> Result<Self> {
        if encoder.dim() < 8 {
            return Err(CoreError::Config(format!(
                "text embedding dim {} is below 8",
                encoder.dim()
            )));
        }
        Ok(Self {
            encoder,
            cache: RwLock::default(),
        })
    }

    pub fn stub(dim: usize) -> Result<Self> {
        Self::new(Box::new(StubEncoder::new(dim)))
    }

    /// Builds the encoder described by `spec`. `dim` applies to the stub
    /// and must match the table dimension otherwise.
    pub fn from_spec(spec: &TextEncoderSpec, dim: usize) -> Result<Self> {
        match spec {
            TextEncoderSpec::Stub => Self::stub(dim),
            TextEncoderSpec::Pretrained(path) => {
                let path = if path.as_os_str().is_empty() {
                    std::env::var_os(WEIGHTS_ENV).map(PathBuf::from).ok_or_else(|| {
                        CoreError::Config(format!("pretrained text encoder needs a path or {WEIGHTS_ENV}"))
                    })?
                } else {
                    path.clone()
                };
                let table = EmbeddingTable::load(&path)?;
                if table.dim() != dim {
                    return Err(CoreError::Config(format!(
                        "embedding table dim {} does not match configured dim {dim}",
                        table.dim()
                    )));
                }
                Self::new(Box::new(table))
            }
        }
    }

    pub fn name(&self) -> &str {
        self.encoder.name()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn kind(&self) -> EncoderKind {
        self.encoder.kind()
    }

    /// Unit-length embedding of `prompt`, computed once per distinct string.
    pub fn embed(&self, prompt: &str) -> Result<Arc<[f64]>> {
        if let Some(v) = self.cache.read().expect("cache lock").get(prompt) {
            return Ok(v.clone());
        }
        let raw = self.encoder.encode(prompt)?;
        if raw.len() != self.dim() {
            return Err(CoreError::TextEncoder {
                prompt: prompt.to_owned(),
                msg: format!("encoder returned {} values, expected {}", raw.len(), self.dim()),
            });
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(CoreError::TextEncoder {
                prompt: prompt.to_owned(),
                msg: "embedding has zero or non-finite norm".into(),
            });
        }
        let unit: Arc<[f64]> = raw.iter().map(|v| v / norm).collect();
        let mut cache = self.cache.write().expect("cache lock");
        Ok(cache.entry(prompt.to_owned()).or_insert(unit).clone())
    }

    /// Stacks the embeddings of `prompts` into an `(n, d)` tensor.
    pub fn embed_matrix(&self, prompts: &[String]) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(prompts.len() * d);
        for p in prompts {
            data.extend_from_slice(&self.embed(p)?);
        }
        Ok(Tensor::new(&[prompts.len(), d], data)?)
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }
}
