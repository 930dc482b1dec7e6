//! Splitting a scene into overlapping blocks and deciding which pixels train which block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{traverse_grid, Aabb, Camera, GridSpec, Vec3};
use crate::train::{train_block, BlockData, TrainConfig, TrainingView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    /// Blocks along x and y. Ignored when `block_size` is set.
    pub blocks: [usize; 2],
    /// Target horizontal block edge length in scene units.
    pub block_size: Option<f64>,
    /// Horizontal dilation of each training box, as a fraction of the block width.
    pub overlap: f64,
    /// Minimum fraction of an image's pixels that must land in a block.
    pub assign_threshold: f64,
    /// Cells per axis of the coarse occupancy grid.
    pub coarse_resolution: usize,
    /// Opacity above which a coarse cell counts as occupied.
    pub occupied_threshold: f64,
    /// Use the geometric fallback (occupied at or below this height) instead of a coarse run.
    pub ground_plane: Option<f64>,
    pub coarse_epochs: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            blocks: [1, 1],
            block_size: None,
            overlap: 0.15,
            assign_threshold: 0.05,
            coarse_resolution: 64,
            occupied_threshold: 0.5,
            ground_plane: None,
            coarse_epochs: 10_000,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size.is_none() && self.blocks.contains(&0) {
            return Err(Error::Config(
                "at least one block per axis is required".into(),
            ));
        }
        if self.block_size.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("block_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Config("overlap must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.assign_threshold)
            || !(0.0..=1.0).contains(&self.occupied_threshold)
        {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.coarse_resolution == 0 {
            return Err(Error::Config("coarse_resolution must be at least 1".into()));
        }
        Ok(())
    }

    /// Block counts per horizontal axis for `bounds`.
    pub fn block_counts(&self, bounds: &Aabb) -> [usize; 2] {
        match self.block_size {
            Some(s) => {
                let e = bounds.extent();
                [
                    ((e.x / s).round() as usize).max(1),
                    ((e.y / s).round() as usize).max(1),
                ]
            }
            None => self.blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockBounds {
    pub id: u32,
    /// Region the block owns at render time.
    pub core: Aabb,
    /// Region the block is trained on.
    pub training: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub bounds: Aabb,
    pub grid: [usize; 2],
    pub overlap: f64,
    pub blocks: Vec<BlockBounds>,
}

impl BlockLayout {
    pub fn block(&self, id: u32) -> Option<&BlockBounds> {
        self.blocks.iter().find(|b| b.id == id)
    }

    /// Blocks whose cores share a face with block `id`.
    pub fn neighbors(&self, id: u32) -> Vec<u32> {
        let [nx, ny] = self.grid;
        let (i, j) = (id as usize % nx, id as usize / nx);
        let mut out = Vec::new();
        if i > 0 {
            out.push(id - 1);
        }
        if i + 1 < nx {
            out.push(id + 1);
        }
        if j > 0 {
            out.push(id - nx as u32);
        }
        if j + 1 < ny {
            out.push(id + nx as u32);
        }
        out
    }
}

/// Tiles `bounds` with `grid[0] × grid[1]` blocks, ids row-major with x fastest. Training boxes
/// grow by `overlap` of the block width into horizontal neighbors and are clipped to `bounds`.
pub fn partition_scene(bounds: &Aabb, grid: [usize; 2], overlap: f64) -> Result<BlockLayout> {
    let e = bounds.extent();
    if !bounds.is_valid() || !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
        return Err(Error::Config(format!(
            "scene bounds {bounds:?} have no volume"
        )));
    }
    if grid.contains(&0) {
        return Err(Error::Config(
            "at least one block per axis is required".into(),
        ));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Config("overlap must lie in [0, 1]".into()));
    }
    let edge = |a: usize, k: usize| {
        if k == grid[a] {
            bounds.max[a]
        } else {
            bounds.min[a] + e[a] * k as f64 / grid[a] as f64
        }
    };
    let mut blocks = Vec::with_capacity(grid[0] * grid[1]);
    for j in 0..grid[1] {
        for i in 0..grid[0] {
            let core = Aabb::new(
                [edge(0, i), edge(1, j), bounds.min[2]],
                [edge(0, i + 1), edge(1, j + 1), bounds.max[2]],
            );
            let ce = core.extent();
            let (dx, dy) = (overlap * ce.x, overlap * ce.y);
            let training = Aabb::new(
                [
                    (core.min[0] - dx).max(bounds.min[0]),
                    (core.min[1] - dy).max(bounds.min[1]),
                    core.min[2],
                ],
                [
                    (core.max[0] + dx).min(bounds.max[0]),
                    (core.max[1] + dy).min(bounds.max[1]),
                    core.max[2],
                ],
            );
            blocks.push(BlockBounds {
                id: (j * grid[0] + i) as u32,
                core,
                training,
            });
        }
    }
    Ok(BlockLayout {
        bounds: *bounds,
        grid,
        overlap,
        blocks,
    })
}

/// Low-resolution opacity over the whole scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseOccupancy {
    pub bounds: Aabb,
    pub resolution: usize,
    /// Opacity per cell, x fastest.
    pub values: Vec<f64>,
}

impl CoarseOccupancy {
    /// Everything at or below height `plane` is occupied.
    pub fn geometric(bounds: &Aabb, resolution: usize, plane: f64) -> Result<Self> {
        let spec = GridSpec::new(resolution, *bounds)?;
        let values = (0..spec.cell_count())
            .map(|c| {
                if spec.cell_bounds(c).center().z <= plane {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            bounds: *bounds,
            resolution,
            values,
        })
    }

    /// Cell-center opacity of `alpha`.
    pub fn from_fn(
        bounds: &Aabb,
        resolution: usize,
        alpha: impl Fn(&Vec3) -> f64 + Sync,
    ) -> Result<Self> {
        let spec = GridSpec::new(resolution, *bounds)?;
        let values = (0..spec.cell_count())
            .into_par_iter()
            .map(|c| alpha(&spec.cell_bounds(c).center()).clamp(0.0, 1.0))
            .collect();
        Ok(Self {
            bounds: *bounds,
            resolution,
            values,
        })
    }

    pub fn value(&self, cell: [usize; 3]) -> f64 {
        let n = self.resolution;
        self.values[(cell[2] * n + cell[1]) * n + cell[0]]
    }

    /// Mean opacity over all cells.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Midpoint of the ray segment inside the first cell whose opacity reaches `threshold`.
    pub fn first_hit(&self, origin: Vec3, direction: Vec3, threshold: f64) -> Option<Vec3> {
        let ray = crate::geometry::Ray::new(origin, direction);
        let n = self.resolution;
        let mut hit = None;
        traverse_grid(&ray, &self.bounds, [n, n, n], |cell, t0, t1| {
            if self.value(cell) >= threshold {
                hit = Some(ray.at(0.5 * (t0 + t1)));
                return false;
            }
            true
        });
        hit
    }
}

/// Trains a single coarse block over the whole scene and samples its opacity.
pub fn build_coarse_occupancy(
    views: Vec<TrainingView>,
    bounds: &Aabb,
    config: &PartitionConfig,
    train: &TrainConfig,
) -> Result<CoarseOccupancy> {
    config.validate()?;
    if let Some(plane) = config.ground_plane {
        return CoarseOccupancy::geometric(bounds, config.coarse_resolution, plane);
    }
    let mut tc = train.clone();
    tc.epochs = config.coarse_epochs.max(2);
    tc.phase_epochs = tc.phase_epochs.min(tc.epochs - 1);
    tc.levels = 1;
    tc.base_resolution = (train.base_resolution >> 4).max(1);
    tc.coarsen_epochs.clear();
    let data = BlockData {
        aabb: *bounds,
        views,
        probes: Vec::new(),
        scene_diagonal: bounds.diagonal(),
    };
    let trained = train_block(data, tc)?;
    let net = trained.network;
    CoarseOccupancy::from_fn(bounds, config.coarse_resolution, |p| {
        net.encoder_forward(p).alpha
    })
}

/// Pixels one image contributes to one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedImage {
    pub image: u32,
    /// Row-major, `true` = train on the pixel.
    #[serde(skip)]
    pub mask: Vec<bool>,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAssignment {
    /// Indexed like `BlockLayout::blocks`.
    pub blocks: Vec<Vec<AssignedImage>>,
}

/// Assigns each image to the blocks holding at least `threshold` of its pixels. A pixel belongs
/// to a block when its ray's first occupied cell lies in the block's training box and the
/// pixel is not transient.
pub fn assign_images(
    layout: &BlockLayout,
    cameras: &[Camera],
    occupancy: &CoarseOccupancy,
    transient: &[Option<Vec<bool>>],
    config: &PartitionConfig,
) -> Result<ImageAssignment> {
    if !transient.is_empty() && transient.len() != cameras.len() {
        return Err(Error::Argument(format!(
            "{} transient masks for {} cameras",
            transient.len(),
            cameras.len()
        )));
    }
    let per_image: Vec<Vec<Vec<bool>>> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let (w, h) = (cam.width(), cam.height());
            let n = (w * h) as usize;
            let skip = transient.get(i).and_then(|m| m.as_ref());
            if skip.is_some_and(|m| m.len() != n) {
                return Err(Error::Argument(format!(
                    "transient mask {i} does not match its image size"
                )));
            }
            let mut masks = vec![vec![false; n]; layout.blocks.len()];
            for p in 0..n {
                if skip.is_some_and(|m| m[p]) {
                    continue;
                }
                let ray = cam.pixel_ray(p as u32 % w, p as u32 / w);
                let Some(hit) =
                    occupancy.first_hit(ray.origin, ray.direction, config.occupied_threshold)
                else {
                    continue;
                };
                for (b, block) in layout.blocks.iter().enumerate() {
                    if block.training.contains(&hit) {
                        masks[b][p] = true;
                    }
                }
            }
            Ok(masks)
        })
        .collect::<Result<_>>()?;
    let mut blocks = vec![Vec::new(); layout.blocks.len()];
    for (image, masks) in per_image.into_iter().enumerate() {
        for (b, mask) in masks.into_iter().enumerate() {
            let pixels = mask.iter().filter(|&&m| m).count();
            if pixels > 0 && pixels as f64 >= config.assign_threshold * mask.len() as f64 {
                blocks[b].push(AssignedImage {
                    image: image as u32,
                    mask,
                    pixels,
                });
            }
        }
    }
    Ok(ImageAssignment { blocks })
}

/// The layout file written by `partition`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub layout: BlockLayout,
    /// Image ids per block, indexed like `layout.blocks`.
    pub images: Vec<Vec<u32>>,
}

impl LayoutDocument {
    pub fn new(layout: BlockLayout, assignment: &ImageAssignment) -> Self {
        let images = assignment
            .blocks
            .iter()
            .map(|b| b.iter().map(|a| a.image).collect())
            .collect();
        Self { layout, images }
    }
}
