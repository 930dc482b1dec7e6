use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bake::{bake_level, BakeConfig, BakedLevel};
use crate::error::{Error, Result};
use crate::field::FieldNetwork;
use crate::geometry::{Aabb, Camera, OctahedralMeshGrid};
use crate::imaging::RgbImage;

use super::cache::{AssetSource, AtlasCache};
use super::level::{select_level, LevelPolicy};
use super::rasterize::{rasterize_block, Dither, GBuffer, NEAR_PLANE};
use super::shade::{neural_shade, temporal_accumulate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f64; 3],
    /// Alpha dithering with temporal accumulation; off means a hard α ≥ 0.5 cut.
    pub dither: bool,
    /// Number of jittered frames averaged when dithering (at most 16 distinct jitters).
    pub frames: usize,
    pub levels: LevelPolicy,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: [1.0, 1.0, 1.0],
            dither: false,
            frames: 16,
            levels: LevelPolicy::default(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        self.levels.validate()?;
        if self.dither && self.frames == 0 {
            return Err(Error::Config(
                "dithered rendering needs at least one frame".into(),
            ));
        }
        Ok(())
    }
}

/// A renderable block: its core bounds, the decoder that shades it and how many levels exist.
#[derive(Debug, Clone)]
pub struct SceneBlock {
    pub id: u32,
    pub aabb: Aabb,
    pub network: Arc<FieldNetwork>,
    pub levels: usize,
}

/// Levels chosen on the previous frame, used for hysteresis.
#[derive(Debug, Clone, Default)]
pub struct LevelState {
    levels: HashMap<u32, usize>,
}

impl LevelState {
    pub fn level(&self, block: u32) -> Option<usize> {
        self.levels.get(&block).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameStats {
    /// (block, level) pairs drawn this frame.
    pub drawn: Vec<(u32, usize)>,
    pub encoder_evaluations: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub resident_pages: usize,
}

/// False only when the box lies entirely outside one of the view frustum's planes.
pub fn aabb_in_frustum(camera: &Camera, aabb: &Aabb) -> bool {
    let i = &camera.intrinsics;
    let (w, h) = (i.width as f64, i.height as f64);
    let corners = aabb.corners().map(|p| {
        let c = camera.to_camera(&p);
        (c.x, c.y, -c.z)
    });
    let planes: [&dyn Fn(f64, f64, f64) -> f64; 5] = [
        &|_, _, d| d - NEAR_PLANE,
        &|x, _, d| i.fx * x + i.cx * d,
        &|x, _, d| (w - i.cx) * d - i.fx * x,
        &|_, y, d| i.cy * d - i.fy * y,
        &|_, y, d| (h - i.cy) * d + i.fy * y,
    ];
    planes
        .iter()
        .all(|plane| corners.iter().any(|&(x, y, d)| plane(x, y, d) >= 0.0))
}

/// Renders one frame: culls blocks, picks and fetches a level for each, rasterizes them into a
/// shared G-buffer and shades it. With dithering, the jittered frames are averaged.
pub fn render_frame(
    blocks: &[SceneBlock],
    source: &dyn AssetSource,
    camera: &Camera,
    config: &RenderConfig,
    cache: &AtlasCache,
    state: &mut LevelState,
) -> Result<(RgbImage, FrameStats)> {
    config.validate()?;
    let before = cache.stats();
    let mut drawn = Vec::new();
    for b in blocks {
        if b.levels == 0 || !aabb_in_frustum(camera, &b.aabb) {
            continue;
        }
        let level = select_level(camera, &b.aabb, &config.levels, state.level(b.id)).min(b.levels);
        state.levels.insert(b.id, level);
        let entry = cache.get_or_bake(source, b.id, level)?;
        drawn.push((b.id, level, entry));
    }
    let decoders: HashMap<u32, &FieldNetwork> =
        blocks.iter().map(|b| (b.id, b.network.as_ref())).collect();
    let draw = |dither: Dither| {
        let mut g = GBuffer::new(camera.width(), camera.height());
        for (id, _, entry) in &drawn {
            rasterize_block(entry, *id, camera, &mut g, dither);
        }
        neural_shade(&g, camera, |b| decoders.get(&b).copied(), config.background)
    };
    let image = if config.dither {
        let frames: Vec<RgbImage> = (0..config.frames)
            .map(|k| draw(Dither::Frame(k % 16)))
            .collect();
        temporal_accumulate(&frames)?
    } else {
        draw(Dither::Off)
    };
    let after = cache.stats();
    let stats = FrameStats {
        drawn: drawn.iter().map(|(id, l, _)| (*id, *l)).collect(),
        encoder_evaluations: after.encoder_evaluations - before.encoder_evaluations,
        cache_hits: after.hits - before.hits,
        cache_misses: after.misses - before.misses,
        resident_pages: after.resident_pages,
    };
    Ok((image, stats))
}

/// Entries that were baked ahead of time, e.g. loaded from an asset container.
#[derive(Debug, Clone, Default)]
pub struct PrebakedSource {
    pub entries: HashMap<(u32, usize), Arc<BakedLevel>>,
    pub adjacency: HashMap<u32, Vec<u32>>,
}

impl AssetSource for PrebakedSource {
    fn bake(&self, block: u32, level: usize) -> Result<(BakedLevel, u64)> {
        let entry = self.entries.get(&(block, level)).ok_or_else(|| {
            Error::Lookup(format!("no baked entry for block {block} level {level}"))
        })?;
        Ok((entry.as_ref().clone(), 0))
    }

    fn contains(&self, block: u32, level: usize) -> bool {
        self.entries.contains_key(&(block, level))
    }

    fn neighbors(&self, block: u32) -> Vec<u32> {
        self.adjacency.get(&block).cloned().unwrap_or_default()
    }
}

/// A trained block that has not been baked yet.
#[derive(Debug, Clone)]
pub struct LiveBlock {
    pub network: Arc<FieldNetwork>,
    /// Meshes from finest (level 1) to coarsest.
    pub meshes: Vec<OctahedralMeshGrid>,
    /// Faces outside these bounds belong to a neighbor.
    pub core: Aabb,
    pub cameras: Vec<Camera>,
    /// Per-level active cell flags; all cells count when `None`.
    pub active: Option<Vec<Vec<bool>>>,
}

/// Bakes entries on demand by querying the trained encoder.
#[derive(Debug, Clone, Default)]
pub struct LiveSource {
    pub blocks: HashMap<u32, LiveBlock>,
    pub adjacency: HashMap<u32, Vec<u32>>,
    pub bake: BakeConfig,
}

impl AssetSource for LiveSource {
    fn bake(&self, block: u32, level: usize) -> Result<(BakedLevel, u64)> {
        let b = self
            .blocks
            .get(&block)
            .ok_or_else(|| Error::Lookup(format!("unknown block {block}")))?;
        let mesh = level
            .checked_sub(1)
            .and_then(|l| b.meshes.get(l))
            .ok_or_else(|| Error::Lookup(format!("block {block} has no level {level}")))?;
        let active = b
            .active
            .as_ref()
            .and_then(|a| a.get(level - 1))
            .map(Vec::as_slice);
        bake_level(
            mesh,
            &b.network,
            &b.cameras,
            Some(&b.core),
            active,
            &self.bake,
        )
    }

    fn contains(&self, block: u32, level: usize) -> bool {
        self.blocks
            .get(&block)
            .is_some_and(|b| level >= 1 && level <= b.meshes.len())
    }

    fn neighbors(&self, block: u32) -> Vec<u32> {
        self.adjacency.get(&block).cloned().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Vec3};

    fn cam(eye: Vec3, target: Vec3) -> Camera {
        Camera::look_at(Intrinsics::from_fov(32, 24, 1.0), eye, target, Vec3::z()).unwrap()
    }

    #[test]
    fn frustum_test() {
        let b = Aabb::new([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]);
        assert!(aabb_in_frustum(
            &cam(Vec3::new(3.0, 0.0, 0.0), Vec3::zeros()),
            &b
        ));
        assert!(!aabb_in_frustum(
            &cam(Vec3::new(3.0, 0.0, 0.0), Vec3::new(6.0, 0.0, 0.0)),
            &b
        ));
        assert!(!aabb_in_frustum(
            &cam(Vec3::new(3.0, 0.0, 0.0), Vec3::new(3.0, 5.0, 0.0)),
            &b
        ));
        // camera inside the box
        assert!(aabb_in_frustum(
            &cam(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)),
            &b
        ));
    }

    #[test]
    fn no_blocks_is_background() {
        let source = PrebakedSource::default();
        let cache = AtlasCache::new(4);
        let c = cam(Vec3::new(3.0, 0.0, 0.0), Vec3::zeros());
        let config = RenderConfig {
            background: [0.2, 0.3, 0.4],
            ..Default::default()
        };
        let (img, stats) = render_frame(
            &[],
            &source,
            &c,
            &config,
            &cache,
            &mut LevelState::default(),
        )
        .unwrap();
        assert!(img.data.iter().all(|p| *p == [0.2, 0.3, 0.4]));
        assert!(stats.drawn.is_empty());
    }
}
