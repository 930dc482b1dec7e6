use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Adam, FieldNetwork, FieldOptimizer};
use crate::geometry::{Aabb, Camera, GridSpec, Intersection, OctahedralMeshGrid, Ray, Vec3};
use crate::imaging::{psnr, psnr_from_mse, RgbImage};

use super::composite::Composite;
use super::config::TrainConfig;
use super::lod::lod_coarsen;
use super::objective::{
    evaluate_chunk, FrozenHit, Gradients, LevelGeometry, LossBreakdown, ObjectiveParams, RayTarget,
};
use super::occupancy::OccupancyGrid;
use super::schedule::Schedule;

/// One training image with its per-pixel mask and sparse depth targets.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: Camera,
    pub image: RgbImage,
    /// `true` = train on this pixel; `None` trains on every pixel.
    pub mask: Option<Vec<bool>>,
    /// `(pixel index, distance along the pixel ray)`.
    pub depth_targets: Vec<(u32, f64)>,
}

/// The data one block trains on.
#[derive(Debug, Clone)]
pub struct BlockData {
    pub aabb: Aabb,
    pub views: Vec<TrainingView>,
    /// Held-out views rendered into the log.
    pub probes: Vec<(Camera, RgbImage)>,
    /// Scales the pseudo-depth huber threshold.
    pub scene_diagonal: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: u64,
    pub loss: f64,
    pub rgb: f64,
    pub depth: f64,
    pub part1: Vec<f64>,
    pub part2: Vec<f64>,
    pub f: f64,
    pub beta: f64,
    /// PSNR of the level-1 plain composite on this batch.
    pub batch_psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe_psnr: Option<f64>,
    pub active_cells: f64,
    pub samples: usize,
    pub levels: usize,
}

pub enum TrainEvent<'a> {
    Log(&'a LogRecord),
    Checkpoint(&'a Trainer),
}

/// Output of a finished run.
#[derive(Debug, Clone)]
pub struct TrainedBlock {
    pub network: FieldNetwork,
    pub meshes: Vec<OctahedralMeshGrid>,
    pub occupancy: OccupancyGrid,
    pub epochs: u64,
}

/// Per-pixel outputs of a render through the trained field.
#[derive(Debug, Clone)]
pub struct FieldRender {
    pub image: RgbImage,
    pub acc: Vec<f64>,
    pub depth: Vec<f64>,
}

pub struct Trainer {
    config: TrainConfig,
    schedule: Schedule,
    data: BlockData,
    net: FieldNetwork,
    meshes: Vec<OctahedralMeshGrid>,
    field_opt: FieldOptimizer,
    vertex_opt: Vec<Adam>,
    occupancy: OccupancyGrid,
    pixels: Vec<(u32, u32)>,
    depth_lookup: Vec<std::collections::HashMap<u32, f64>>,
    grads: Gradients,
    rng: ChaCha8Rng,
    epoch: u64,
}

impl Trainer {
    pub fn new(data: BlockData, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if !data.aabb.is_valid() {
            return Err(Error::Config("block AABB is degenerate".into()));
        }
        let mut pixels = Vec::new();
        for (v, view) in data.views.iter().enumerate() {
            let (w, h) = (view.camera.width(), view.camera.height());
            if view.image.width != w || view.image.height != h {
                return Err(Error::Config(format!(
                    "view {v}: image is {}x{} but camera is {w}x{h}",
                    view.image.width, view.image.height
                )));
            }
            if let Some(mask) = &view.mask {
                if mask.len() != (w * h) as usize {
                    return Err(Error::Config(format!(
                        "view {v}: mask size does not match the image"
                    )));
                }
            }
            for p in 0..w * h {
                if view.mask.as_ref().map_or(true, |m| m[p as usize]) {
                    pixels.push((v as u32, p));
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::Config(
                "block has no training pixels (empty image assignment)".into(),
            ));
        }
        let depth_lookup = data
            .views
            .iter()
            .map(|v| v.depth_targets.iter().copied().collect())
            .collect();
        let net = FieldNetwork::new(data.aabb, &config.field)?;
        let spec = GridSpec::new(config.base_resolution, data.aabb)?;
        let mesh = OctahedralMeshGrid::new(spec, 1)?;
        let occupancy = OccupancyGrid::filled(
            spec,
            config.occupancy.decay,
            config.occupancy.threshold,
            1.0,
        );
        let field_opt = FieldOptimizer::new(&net, &config.learning_rates, config.adam);
        let vertex_opt = vec![Adam::new(
            mesh.vertices().len() * 3,
            config.learning_rates.vertices,
            config.adam,
        )];
        let grads = Gradients::new(&net, &[mesh.vertices().len()]);
        Ok(Self {
            schedule: Schedule::from_config(&config),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_7973),
            config,
            data,
            net,
            meshes: vec![mesh],
            field_opt,
            vertex_opt,
            occupancy,
            pixels,
            depth_lookup,
            grads,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn network(&self) -> &FieldNetwork {
        &self.net
    }

    pub fn meshes(&self) -> &[OctahedralMeshGrid] {
        &self.meshes
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occupancy
    }

    pub fn data(&self) -> &BlockData {
        &self.data
    }

    pub fn skipped_steps(&self) -> u64 {
        self.field_opt.skipped_steps()
    }

    fn skipping_enabled(&self) -> bool {
        self.epoch >= self.config.occupancy.warmup_epochs
    }

    /// Per-level cell activity masks; `None` when every cell counts as active.
    fn level_masks(&self) -> Option<Vec<Vec<bool>>> {
        if !self.skipping_enabled() {
            return None;
        }
        Some(
            (0..self.meshes.len())
                .map(|l| self.occupancy.coarse_mask(1 << l))
                .collect(),
        )
    }

    fn intersect_all(&self, rays: &[Ray], levels: usize) -> Vec<Vec<Vec<FrozenHit>>> {
        let masks = self.level_masks();
        let cap = self.config.max_samples_per_ray;
        rays.par_iter()
            .map_init(Vec::<Intersection>::new, |buf, ray| {
                (0..levels)
                    .map(|l| {
                        let mesh = &self.meshes[l];
                        match &masks {
                            Some(m) => mesh.intersect_into(ray, cap, |c| m[l][c], buf),
                            None => mesh.intersect_into(ray, cap, |_| true, buf),
                        }
                        buf.iter()
                            .map(|h| FrozenHit {
                                face: h.face,
                                barycentric: h.barycentric,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn sample_batch(&mut self) -> Vec<RayTarget> {
        let n = self.config.rays_per_batch;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, p) = self.pixels[self.rng.gen_range(0..self.pixels.len())];
            let view = &self.data.views[v as usize];
            let w = view.camera.width();
            let ray = view.camera.pixel_ray(p % w, p / w);
            out.push(RayTarget {
                ray,
                color: view.image.data[p as usize],
                depth: self.depth_lookup[v as usize].get(&p).copied(),
            });
        }
        out
    }

    fn coarsen_due(&mut self) -> Result<()> {
        while self.meshes.len() < self.config.levels
            && self.config.coarsen_epochs[self.meshes.len() - 1] <= self.epoch
        {
            let fine = self.meshes.last().expect("at least one level");
            let coarse = lod_coarsen(fine, &self.net, self.config.coarsen_samples, &mut self.rng)?;
            self.vertex_opt.push(Adam::new(
                coarse.vertices().len() * 3,
                self.config.learning_rates.vertices,
                self.config.adam,
            ));
            self.grads
                .vertices
                .push(vec![Vec3::zeros(); coarse.vertices().len()]);
            self.meshes.push(coarse);
        }
        Ok(())
    }

    /// Runs one optimization step and advances the epoch counter.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.coarsen_due()?;
        self.net.quantize = self.epoch >= self.config.quantize_from();
        let batch = self.sample_batch();
        let rays: Vec<Ray> = batch.iter().map(|t| t.ray).collect();
        let hits = self.intersect_all(&rays, self.meshes.len());
        let depth_rays = batch.iter().filter(|t| t.depth.is_some()).count();
        let params = self.objective_params(self.epoch, batch.len(), depth_rays);

        self.grads.clear();
        let mut loss = LossBreakdown::default();
        let mut occupancy_samples = Vec::new();
        {
            let levels: Vec<LevelGeometry<'_>> =
                self.meshes.iter().map(LevelGeometry::from).collect();
            for (targets, chunk_hits) in batch
                .chunks(self.config.chunk_rays)
                .zip(hits.chunks(self.config.chunk_rays))
            {
                let out = evaluate_chunk(
                    &self.net,
                    &levels,
                    targets,
                    chunk_hits,
                    &params,
                    Some(&mut self.grads),
                );
                loss.accumulate(&out.loss);
                occupancy_samples.extend(out.occupancy);
            }
        }
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {}: rgb {} depth {} per-level part1 {:?} part2 {:?}",
                self.epoch, loss.rgb, loss.depth, loss.part1, loss.part2
            )));
        }
        self.field_opt.step(&mut self.net, &self.grads.field);
        if self.grads.is_finite() {
            for ((mesh, opt), g) in self
                .meshes
                .iter_mut()
                .zip(&mut self.vertex_opt)
                .zip(&self.grads.vertices)
            {
                let flat_g: Vec<f64> = g.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
                let mut flat: Vec<f64> = mesh
                    .vertices()
                    .iter()
                    .flat_map(|v| [v.x, v.y, v.z])
                    .collect();
                opt.step(&mut flat, &flat_g);
                mesh.update_vertices(|vs| {
                    for (v, c) in vs.iter_mut().zip(flat.chunks_exact(3)) {
                        *v = Vec3::new(c[0], c[1], c[2]);
                    }
                });
                mesh.clamp_within(self.config.vertex_clamp);
            }
        }

        self.occupancy.update(&occupancy_samples);
        self.epoch += 1;
        let occ = &self.config.occupancy;
        if self.epoch == occ.warmup_epochs {
            self.occupancy.refresh_all(&self.net, &mut self.rng);
        } else if self.epoch % occ.refresh_interval == 0 {
            let fraction = occ.refresh_fraction;
            self.occupancy.refresh(&self.net, fraction, &mut self.rng);
        }
        Ok(loss)
    }

    fn objective_params(&self, epoch: u64, rays: usize, depth_rays: usize) -> ObjectiveParams {
        let mut p = ObjectiveParams::new(
            self.schedule.beta(epoch),
            self.schedule.threshold_f(epoch),
            rays,
            depth_rays,
        );
        p.stop_transmittance = self.config.stop_transmittance;
        p.depth_weight = self.config.depth_weight;
        p.huber_delta = self.config.huber_fraction * self.data.scene_diagonal;
        p.min_transmittance = self.config.min_transmittance;
        p.wave_size = self.config.wave_size;
        p
    }

    /// Trains until the configured epoch count, reporting logs and checkpoints to `on_event`.
    pub fn run(&mut self, mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            let loss = self.step()?;
            let e = self.epoch;
            let last = e == self.config.epochs;
            if e % self.config.log_interval == 0 || last {
                let probe_psnr = if !self.data.probes.is_empty()
                    && (e % self.config.probe_interval == 0 || last)
                {
                    Some(self.probe_psnr()?)
                } else {
                    None
                };
                let record = self.log_record(e - 1, &loss, probe_psnr);
                on_event(TrainEvent::Log(&record))?;
            }
            if e % self.config.checkpoint_interval == 0 || last {
                on_event(TrainEvent::Checkpoint(self))?;
            }
        }
        Ok(())
    }

    fn log_record(&self, epoch: u64, loss: &LossBreakdown, probe_psnr: Option<f64>) -> LogRecord {
        LogRecord {
            epoch,
            loss: loss.total,
            rgb: loss.rgb,
            depth: loss.depth,
            part1: loss.part1.clone(),
            part2: loss.part2.clone(),
            f: self.schedule.threshold_f(epoch),
            beta: self.schedule.beta(epoch),
            batch_psnr: psnr_from_mse(loss.part1.first().copied().unwrap_or(0.0) / 3.0),
            probe_psnr,
            active_cells: self.occupancy.active_fraction(),
            samples: loss.samples,
            levels: self.meshes.len(),
        }
    }

    /// Mean PSNR over the held-out probe views at level 1.
    pub fn probe_psnr(&self) -> Result<f64> {
        let mut sum = 0.0;
        for (camera, image) in &self.data.probes {
            sum += psnr(&self.render(camera, 0)?.image, image)?;
        }
        Ok(sum / self.data.probes.len().max(1) as f64)
    }

    /// Renders `camera` through the field on mesh `level` (0-based) with the plain composite.
    pub fn render(&self, camera: &Camera, level: usize) -> Result<FieldRender> {
        if level >= self.meshes.len() {
            return Err(Error::Argument(format!(
                "level {level} not trained yet ({} levels)",
                self.meshes.len()
            )));
        }
        let masks = self.level_masks();
        render_field(
            &self.net,
            &self.meshes[level],
            camera,
            self.config.max_samples_per_ray,
            self.config.min_transmittance,
            self.config.wave_size,
            masks.as_ref().map(|m| m[level].as_slice()),
        )
    }

    pub fn into_block(self) -> TrainedBlock {
        TrainedBlock {
            network: self.net,
            meshes: self.meshes,
            occupancy: self.occupancy,
            epochs: self.epoch,
        }
    }

    pub fn to_block(&self) -> TrainedBlock {
        TrainedBlock {
            network: self.net.clone(),
            meshes: self.meshes.clone(),
            occupancy: self.occupancy.clone(),
            epochs: self.epoch,
        }
    }
}

/// Renders a camera through a network on one mesh level, skipping cells whose mask entry is false.
pub fn render_field(
    net: &FieldNetwork,
    mesh: &OctahedralMeshGrid,
    camera: &Camera,
    max_samples: usize,
    min_transmittance: f64,
    wave_size: usize,
    mask: Option<&[bool]>,
) -> Result<FieldRender> {
    let (w, h) = (camera.width(), camera.height());
    let rays: Vec<Ray> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| camera.pixel_ray(x, y))
        .collect();
    let composites = render_rays(
        net,
        mesh,
        &rays,
        max_samples,
        min_transmittance,
        wave_size,
        mask,
    );
    Ok(FieldRender {
        image: RgbImage {
            width: w,
            height: h,
            data: composites.iter().map(|c| c.color).collect(),
        },
        acc: composites.iter().map(|c| c.acc).collect(),
        depth: composites.iter().map(|c| c.depth).collect(),
    })
}

/// Plain composites of `rays` through the field on one mesh level.
pub fn render_rays(
    net: &FieldNetwork,
    mesh: &OctahedralMeshGrid,
    rays: &[Ray],
    max_samples: usize,
    min_transmittance: f64,
    wave_size: usize,
    mask: Option<&[bool]>,
) -> Vec<Composite> {
    let mut params = ObjectiveParams::new(1.0, 0.0, rays.len(), 0);
    params.min_transmittance = min_transmittance;
    params.wave_size = wave_size;
    let levels = [LevelGeometry::from(mesh)];
    rays.par_chunks(2048)
        .map(|chunk| {
            let mut buf = Vec::new();
            let hits: Vec<Vec<Vec<FrozenHit>>> = chunk
                .iter()
                .map(|ray| {
                    match mask {
                        Some(m) => mesh.intersect_into(ray, max_samples, |c| m[c], &mut buf),
                        None => mesh.intersect_into(ray, max_samples, |_| true, &mut buf),
                    }
                    vec![buf
                        .iter()
                        .map(|h| FrozenHit {
                            face: h.face,
                            barycentric: h.barycentric,
                        })
                        .collect()]
                })
                .collect();
            let targets: Vec<RayTarget> = chunk
                .iter()
                .map(|r| RayTarget {
                    ray: *r,
                    color: [0.0; 3],
                    depth: None,
                })
                .collect();
            evaluate_chunk(net, &levels, &targets, &hits, &params, None).composites
        })
        .flatten()
        .collect()
}

/// Trains one block to completion.
pub fn train_block(data: BlockData, config: TrainConfig) -> Result<TrainedBlock> {
    let mut trainer = Trainer::new(data, config)?;
    trainer.run(|_| Ok(()))?;
    Ok(trainer.into_block())
}
