//! Per-sample scene / nuisance records used to build input prompts.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scene {
    Urban,
    Suburban,
    Rural,
    Forest,
    Farmland,
    Water,
    Mixed,
    Unknown,
}

impl Scene {
    pub const ALL: [Scene; 8] = [
        Scene::Urban,
        Scene::Suburban,
        Scene::Rural,
        Scene::Forest,
        Scene::Farmland,
        Scene::Water,
        Scene::Mixed,
        Scene::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scene::Urban => "urban",
            Scene::Suburban => "suburban",
            Scene::Rural => "rural",
            Scene::Forest => "forest",
            Scene::Farmland => "farmland",
            Scene::Water => "water",
            Scene::Mixed => "mixed",
            Scene::Unknown => "unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nuisance {
    Shadow,
    Illumination,
    Season,
    Misalignment,
    Cloud,
    #[serde(alias = "sensor noise")]
    SensorNoise,
}

impl Nuisance {
    pub const ALL: [Nuisance; 6] = [
        Nuisance::Shadow,
        Nuisance::Illumination,
        Nuisance::Season,
        Nuisance::Misalignment,
        Nuisance::Cloud,
        Nuisance::SensorNoise,
    ];

    /// Name as it appears inside a prompt sentence.
    pub fn phrase(self) -> &'static str {
        match self {
            Nuisance::Shadow => "shadow",
            Nuisance::Illumination => "illumination",
            Nuisance::Season => "season",
            Nuisance::Misalignment => "misalignment",
            Nuisance::Cloud => "cloud",
            Nuisance::SensorNoise => "sensor noise",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceScore {
    pub name: Nuisance,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub scene: Scene,
    #[serde(default)]
    pub nuisances: Vec<NuisanceScore>,
}

impl Default for PromptRecord {
    /// The record assumed when a sample has no sidecar entry.
    fn default() -> Self {
        Self {
            scene: Scene::Unknown,
            nuisances: Vec::new(),
        }
    }
}

impl PromptRecord {
    pub fn new(scene: Scene, nuisances: &[(Nuisance, f64)]) -> Self {
        Self {
            scene,
            nuisances: nuisances
                .iter()
                .map(|&(name, confidence)| NuisanceScore { name, confidence })
                .collect(),
        }
    }

    /// Returns violations: duplicate factors or confidences outside [0, 1].
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for n in &self.nuisances {
            if !seen.insert(n.name) {
                out.push(format!("duplicate nuisance {:?}", n.name.phrase()));
            }
            if !(0.0..=1.0).contains(&n.confidence) {
                out.push(format!(
                    "nuisance {:?} confidence {} outside [0, 1]",
                    n.name.phrase(),
                    n.confidence
                ));
            }
        }
        out
    }
}
