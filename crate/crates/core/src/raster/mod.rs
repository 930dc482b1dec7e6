//! Software rasterization of baked blocks with a per-pixel neural decoder.

pub mod cache;
pub mod frame;
pub mod level;
pub mod rasterize;
pub mod reference;
pub mod shade;

pub use cache::{cache_get_or_bake, AssetSource, AtlasCache, CacheKey, CacheStats};
pub use frame::{
    aabb_in_frustum, render_frame, FrameStats, LevelState, LiveBlock, LiveSource, PrebakedSource,
    RenderConfig, SceneBlock,
};
pub use level::{altitude, level_for_altitude, select_level, LevelPolicy};
pub use rasterize::{
    fragment_survives, frame_jitter, rasterize_block, sample_level, Dither, GBuffer, BAYER4,
    NEAR_PLANE, RASTER_TILE,
};
pub use reference::{raycast_reference, ReferenceBlock};
pub use shade::{neural_shade, temporal_accumulate};
