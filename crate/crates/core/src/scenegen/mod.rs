//! Parametric V2I street scenes, the image-method multipath oracle, sensor
//! stand-ins and the on-disk dataset writer.

mod config;
mod dataset;
mod scene;
mod sensors;
mod trace;

pub use config::{BandConfig, BuildingRows, ObstacleRow, ScenarioConfig, ScenarioKind, SizeRange, Vtd};
pub use dataset::{
    generate_dataset, load_dataset, read_paths_csv, split_sizes, write_paths_csv, Dataset, DatasetManifest, Snapshot,
    Splits, FORMAT_VERSION,
};
pub(crate) use dataset::{read_json, write_json};
pub use scene::{build_scene, BoxKind, Pose, Scene, SceneBox};
pub use sensors::{render_sensors, SensorConfig, SensorFrame};
pub use trace::{enumerate_paths, trace_multipath, Facet, MultipathSet, RayPath, TraceConfig, SPEED_OF_LIGHT};

/// Seed for a sub-stream derived from a parent seed and an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
