//! Per-block optimization of the neural field and the mesh levels.

mod composite;
mod config;
mod lod;
mod objective;
mod occupancy;
mod schedule;
mod trainer;

pub use composite::{
    composite_backward, composite_ray, composite_renormalized, renormalized_backward,
    transmittances, ChainSample, Composite, RaySampleChain, Renormalized, SampleGrad, DEPTH_EPS,
};
pub use config::{OccupancyConfig, TrainConfig};
pub use lod::{estimate_cell_opacity, lod_coarsen, select_child};
pub use objective::{
    evaluate_chunk, huber, huber_grad, pseudo_depth_loss, ChunkOutput, FrozenHit, Gradients,
    LevelGeometry, LossBreakdown, ObjectiveParams, RayTarget,
};
pub use occupancy::{update_occupancy, OccupancyGrid};
pub use schedule::{beta, threshold_f, Schedule};
pub use trainer::{
    render_field, render_rays, train_block, BlockData, FieldRender, LogRecord, TrainEvent,
    TrainedBlock, Trainer, TrainingView,
};
