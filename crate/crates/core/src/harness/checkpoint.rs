//! Binary checkpoint: a JSON header (config, taxonomy, progress) followed by
//! every weight as little-endian f64.
//!
//! Layout: magic, u32 version, u64 header length, header, u64 tensor count,
//! then per tensor: u32 name length, name, u8 trainable, u32 rank, u64 dims,
//! f64 values.

use std::path::Path;
use std::sync::Arc;

use fcd_autograd::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::cmla::TextEncoderHandle;
use crate::error::{io_err, CoreError, Result};
use crate::metrics::MetricsReport;
use crate::model::Network;
use crate::taxonomy::ClassTaxonomy;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FCDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub f1: f64,
    pub report: MetricsReport,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    taxonomy: ClassTaxonomy,
    epoch: usize,
    best: Option<BestRecord>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub taxonomy: ClassTaxonomy,
    /// Epoch the weights were taken from.
    pub epoch: usize,
    pub best: Option<BestRecord>,
    pub params: ParamStore,
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Format {
        what: "checkpoint",
        msg: msg.into(),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return malformed("unexpected end of data");
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).or_else(|_| malformed("length overflows usize"))
    }
}

impl Checkpoint {
    pub fn from_network(net: &Network, config: &TrainConfig, epoch: usize, best: Option<BestRecord>) -> Self {
        Self {
            config: config.clone(),
            taxonomy: net.taxonomy.clone(),
            epoch,
            best,
            params: net.store.clone(),
        }
    }

    /// Rebuilds the model, including its text encoder, and loads the weights.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::new(&self.config.model, &self.taxonomy)?;
        net.store.load_from(&self.params)?;
        Ok(net)
    }

    pub fn to_network_with_text(&self, text: Arc<TextEncoderHandle>) -> Result<Network> {
        let mut net = Network::with_text(&self.config.model, &self.taxonomy, text)?;
        net.store.load_from(&self.params)?;
        Ok(net)
    }

    pub fn count_parameters(&self) -> usize {
        self.params.num_trainable()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            taxonomy: self.taxonomy.clone(),
            epoch: self.epoch,
            best: self.best.clone(),
        })
        .map_err(|e| CoreError::Format {
            what: "checkpoint",
            msg: e.to_string(),
        })?;
        let mut out = Vec::with_capacity(64 + header.len() + 8 * self.params.num_trainable());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (_, p) in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.trainable as u8);
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return malformed("bad magic");
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return malformed(format!("unsupported version {version}"));
        }
        let n = r.len()?;
        let header: Header = serde_json::from_slice(r.take(n)?).or_else(|e| malformed(e.to_string()))?;
        if header.version != version {
            return malformed("header version disagrees with file version");
        }
        let count = r.len()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .or_else(|_| malformed("parameter name is not UTF-8"))?
                .to_owned();
            if params.id_of(&name).is_some() {
                return malformed(format!("duplicate parameter {name}"));
            }
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                v => return malformed(format!("bad trainable flag {v}")),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= r.buf.len()))
                .map_or_else(|| malformed(format!("{name}: shape {shape:?} exceeds the data")), Ok)?;
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::new(&shape, data)?;
            if trainable {
                params.add(name, value);
            } else {
                params.add_frozen(name, value);
            }
        }
        if !r.buf.is_empty() {
            return malformed(format!("{} trailing bytes", r.buf.len()));
        }
        Ok(Self {
            config: header.config,
            taxonomy: header.taxonomy,
            epoch: header.epoch,
            best: header.best,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}
