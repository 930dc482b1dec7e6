//! Datasets, the synthetic scene, checkpoints, the asset container and the pipeline stages.

pub mod assets;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod dataset;
pub mod stages;
pub mod synthetic;

pub use assets::{
    export_assets, load_assets, read_manifest, BlockAssets, Manifest, ManifestBlock, ManifestLevel,
    SceneAssets,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::PipelineConfig;
pub use container::{Container, SectionEntry};
pub use dataset::{
    generate_synthetic, load_camera_path, load_dataset, mask_path, parse_json, read_depth,
    save_camera_path, CameraRecord, Dataset, DatasetMetadata, Frame, FrameRecord, METADATA_FILE,
};
pub use stages::{
    bake_block, block_data, load_layout, run_bake, run_eval, run_export, run_partition, run_render,
    run_train, EvalReport, RenderStats,
};
pub use synthetic::{
    depth_targets, SceneBox, SfmPoint, Slab, SyntheticScene, SyntheticSpec, TraceResult,
};
