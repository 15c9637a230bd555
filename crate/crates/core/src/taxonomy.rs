//! Change-class taxonomies and their render colours.

use serde::{Deserialize, Serialize};

/// Label value excluded from losses, metrics and the preparation pipeline.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Binary change detection.
    Bcd,
    /// Semantic ("from-to") change detection.
    Scd,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bcd" => Ok(Mode::Bcd),
            "scd" => Ok(Mode::Scd),
            other => Err(format!("unknown mode {other:?} (expected bcd or scd)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Bcd => "bcd",
            Mode::Scd => "scd",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
    pub brief_prompt: String,
    pub color: [u8; 3],
}

/// Ordered class list; class 0 is always "no change".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    pub mode: Mode,
    pub classes: Vec<ClassInfo>,
}

const BLACK: [u8; 3] = [0, 0, 0];

impl ClassTaxonomy {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn brief_prompts(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.brief_prompt.clone()).collect()
    }

    pub fn color(&self, id: u8) -> Option<[u8; 3]> {
        self.classes.get(id as usize).map(|c| c.color)
    }

    /// Structural checks: dense ids from 0, unique non-empty prompts.
    pub fn validate(&self) -> Result<(), String> {
        if self.classes.len() < 2 {
            return Err("taxonomy needs at least two classes".into());
        }
        if self.classes.len() >= IGNORE_LABEL as usize {
            return Err("too many classes for 8-bit labels".into());
        }
        let mut seen = std::collections::HashSet::new();
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(format!("class at position {i} has id {}", c.id));
            }
            if c.brief_prompt.trim().is_empty() {
                return Err(format!("class {i} has an empty brief prompt"));
            }
            if !seen.insert(c.brief_prompt.as_str()) {
                return Err(format!("duplicate brief prompt {:?}", c.brief_prompt));
            }
        }
        Ok(())
    }
}

fn class(id: u8, name: &str, prompt: &str, color: [u8; 3]) -> ClassInfo {
    ClassInfo {
        id,
        name: name.to_owned(),
        brief_prompt: prompt.to_owned(),
        color,
    }
}

/// The fixed farmland taxonomy (SCD) or the binary one (BCD).
pub fn default_taxonomy(mode: Mode) -> ClassTaxonomy {
    let classes = match mode {
        Mode::Scd => vec![
            class(0, "No Change", "no change", BLACK),
            class(1, "Farmland to Bareland", "farmland change to bareland", [255, 0, 0]),
            class(2, "Farmland to Building", "farmland change to building", [0, 255, 0]),
            class(3, "Farmland to Road", "farmland change to road", [0, 0, 255]),
            class(
                4,
                "Farmland to Vegetation",
                "farmland change to vegetation",
                [255, 255, 0],
            ),
            class(5, "Farmland to Water", "farmland change to water", [255, 0, 255]),
        ],
        Mode::Bcd => vec![
            class(0, "No Change", "no change", BLACK),
            class(1, "Change", "significant land cover change", [255, 255, 255]),
        ],
    };
    ClassTaxonomy { mode, classes }
}
