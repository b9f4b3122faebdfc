//! Synthetic OoD dataset generator: procedural street scenes and overlay
//! assets, category-dependent placement priors, footprint color
//! adaptation, optical fog on in-distribution pixels, ego-vehicle
//! exclusion, and disjoint validation/test asset splits. Everything is
//! byte-reproducible from one master seed.

mod asset;
mod fog;
mod generate;
mod place;
pub mod png;
mod scene;

pub use asset::{procedural_asset, procedural_asset_pool, ObjectAsset, ObjectCategory};
pub use fog::{apply_fog, FogParams};
pub use generate::{
    generate_dataset, load_entry, DatasetManifest, GeneratorConfig, ImageRecord, SplitInfo,
};
pub use place::{color_adapt, composite, sample_placement, Placement, PlacementConfig};
pub use scene::{
    procedural_scene, BinaryRaster, ProceduralSceneConfig, SceneBundle, SceneSpec, CLASS_BUILDING,
    CLASS_ROAD, CLASS_SKY, CLASS_VEGETATION, PROCEDURAL_CLASS_COUNT,
};
