//! Reading, preparing and synthesising bitemporal datasets.

mod manifest;
mod patches;
mod regions;
mod synth;

pub use manifest::{
    load_manifest, load_manifest_with, read_label, read_prompts, read_rgb, read_taxonomy, write_label, write_prompts,
    write_rgb, write_rgb_u8, write_sample, write_taxonomy, DatasetManifest, LoadReport, Split, PROMPTS_FILE,
    TAXONOMY_FILE,
};
pub use patches::{crop_image, crop_label, reassemble_image, reassemble_label, PatchGrid};
pub use regions::{change_components, filter_small_regions, Component};
pub use synth::{
    generate_synthetic, synthesize, SynthConfig, SynthSample, BARELAND, BUILDING, ROAD, VEGETATION, WATER,
};
