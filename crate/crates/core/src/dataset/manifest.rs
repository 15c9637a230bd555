//! On-disk layout: `root/<split>/{A,B,label}/<id>.png` plus an optional
//! `root/<split>/prompts.json` sidecar and `root/taxonomy.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::prompt::PromptRecord;
use crate::sample::{BitemporalSample, LabelMap, RgbImage};
use crate::taxonomy::{default_taxonomy, ClassTaxonomy, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

const T1_DIR: &str = "A";
const T2_DIR: &str = "B";
const LABEL_DIR: &str = "label";
pub const PROMPTS_FILE: &str = "prompts.json";
pub const TAXONOMY_FILE: &str = "taxonomy.json";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    /// Sorted, unique sample ids.
    pub entries: Vec<String>,
    pub taxonomy: ClassTaxonomy,
    pub prompts: BTreeMap<String, PromptRecord>,
}

/// Ids dropped while scanning a split, with the reason.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rejects: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn split_dir(&self) -> PathBuf {
        self.root.join(self.split.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Prompt record for `id`, or the default record when the sidecar has none.
    pub fn prompt(&self, id: &str) -> PromptRecord {
        self.prompts.get(id).cloned().unwrap_or_default()
    }

    pub fn load_sample(&self, id: &str) -> Result<BitemporalSample> {
        let dir = self.split_dir();
        let file = format!("{id}.png");
        Ok(BitemporalSample {
            id: id.to_owned(),
            image_t1: read_rgb(&dir.join(T1_DIR).join(&file))?,
            image_t2: read_rgb(&dir.join(T2_DIR).join(&file))?,
            label: read_label(&dir.join(LABEL_DIR).join(&file))?,
            prompt: Some(self.prompt(id)),
        })
    }

    pub fn load_all(&self) -> Result<Vec<BitemporalSample>> {
        self.entries.iter().map(|id| self.load_sample(id)).collect()
    }
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    if !dir.is_dir() {
        return Ok(BTreeSet::new());
    }
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_owned());
            }
        }
    }
    Ok(out)
}

/// Reads `root/taxonomy.json` when present, otherwise the SCD default.
pub fn read_taxonomy(root: &Path) -> Result<ClassTaxonomy> {
    let path = root.join(TAXONOMY_FILE);
    if !path.exists() {
        return Ok(default_taxonomy(Mode::Scd));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let t: ClassTaxonomy = serde_json::from_str(&text).map_err(|e| CoreError::Format {
        what: "taxonomy.json",
        msg: e.to_string(),
    })?;
    t.validate().map_err(|msg| CoreError::Format {
        what: "taxonomy.json",
        msg,
    })?;
    Ok(t)
}

pub fn write_taxonomy(root: &Path, t: &ClassTaxonomy) -> Result<()> {
    let path = root.join(TAXONOMY_FILE);
    let text = serde_json::to_string_pretty(t).expect("taxonomy serialises");
    fs::write(&path, text).map_err(io_err(path))
}

/// Scans one split. Ids lacking any of the three images are reported as
/// rejects and left out of the manifest.
pub fn load_manifest(root: &Path, split: Split) -> Result<(DatasetManifest, LoadReport)> {
    let taxonomy = read_taxonomy(root)?;
    load_manifest_with(root, split, taxonomy)
}

pub fn load_manifest_with(root: &Path, split: Split, taxonomy: ClassTaxonomy) -> Result<(DatasetManifest, LoadReport)> {
    let dir = root.join(split.as_str());
    let a = png_stems(&dir.join(T1_DIR))?;
    let b = png_stems(&dir.join(T2_DIR))?;
    let l = png_stems(&dir.join(LABEL_DIR))?;
    let mut report = LoadReport::default();
    let mut entries = Vec::new();
    for id in a.union(&b).cloned().collect::<BTreeSet<_>>().union(&l) {
        let missing: Vec<&str> = [(T1_DIR, &a), (T2_DIR, &b), (LABEL_DIR, &l)]
            .iter()
            .filter(|(_, set)| !set.contains(id))
            .map(|(name, _)| *name)
            .collect();
        if missing.is_empty() {
            entries.push(id.clone());
        } else {
            report
                .rejects
                .push((id.clone(), format!("missing {}", missing.join(", "))));
        }
    }
    if entries.is_empty() {
        let msg = format!("no complete samples under {}", dir.display());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    let prompts = read_prompts(&dir.join(PROMPTS_FILE))?;
    Ok((
        DatasetManifest {
            root: root.to_path_buf(),
            split,
            entries,
            taxonomy,
            prompts,
        },
        report,
    ))
}

pub fn read_prompts(path: &Path) -> Result<BTreeMap<String, PromptRecord>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Format {
        what: "prompts.json",
        msg: e.to_string(),
    })
}

pub fn write_prompts(path: &Path, prompts: &BTreeMap<String, PromptRecord>) -> Result<()> {
    let text = serde_json::to_string_pretty(prompts).expect("prompt records serialise");
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|source| CoreError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::from_u8(h as usize, w as usize, img.as_raw())
}

pub fn read_label(path: &Path) -> Result<LabelMap> {
    let img = image::open(path)
        .map_err(|source| CoreError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    LabelMap::new(h as usize, w as usize, img.into_raw())
}

pub fn write_rgb_u8(path: &Path, height: usize, width: usize, bytes: Vec<u8>) -> Result<()> {
    let buf = image::RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| CoreError::Argument("RGB buffer does not match its dimensions".into()))?;
    buf.save(path).map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_rgb_u8(path, img.height, img.width, img.to_u8())
}

pub fn write_label(path: &Path, label: &LabelMap) -> Result<()> {
    let buf = image::GrayImage::from_raw(label.width as u32, label.height as u32, label.data.clone())
        .ok_or_else(|| CoreError::Argument("label buffer does not match its dimensions".into()))?;
    buf.save(path).map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes one sample into `root/<split>/{A,B,label}/<id>.png`.
pub fn write_sample(root: &Path, split: Split, sample: &BitemporalSample) -> Result<()> {
    let dir = root.join(split.as_str());
    for sub in [T1_DIR, T2_DIR, LABEL_DIR] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let file = format!("{}.png", sample.id);
    write_rgb(&dir.join(T1_DIR).join(&file), &sample.image_t1)?;
    write_rgb(&dir.join(T2_DIR).join(&file), &sample.image_t2)?;
    write_label(&dir.join(LABEL_DIR).join(&file), &sample.label)
}
