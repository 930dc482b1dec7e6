//! The pipeline stages over a working directory:
//!
//! ```text
//! <work>/layout.json                  blocks, AABBs and assigned image ids
//! <work>/masks/<block>/<frame>.png    training masks (255 = train)
//! <work>/block_<b>.ckpt               trained block
//! <work>/block_<b>.log.jsonl          training log, config echo first
//! <work>/block_<b>.baked              baked block (single-block asset container)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{psnr, read_gray_png, write_gray_png, write_png, GrayImage, RgbImage};
use crate::partition::{assign_images, build_coarse_occupancy, partition_scene, LayoutDocument};
use crate::raster::{render_frame, AtlasCache, LevelState};
use crate::train::{BlockData, TrainEvent, TrainedBlock, Trainer};
use crate::{bake, geometry::Camera};

use super::assets::{export_assets, load_assets, BlockAssets, SceneAssets};
use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::PipelineConfig;
use super::container::Container;
use super::dataset::{parse_json, Dataset};

pub const LAYOUT_FILE: &str = "layout.json";

pub fn checkpoint_path(work: &Path, block: u32) -> PathBuf {
    work.join(format!("block_{block}.ckpt"))
}

pub fn log_path(work: &Path, block: u32) -> PathBuf {
    work.join(format!("block_{block}.log.jsonl"))
}

pub fn baked_path(work: &Path, block: u32) -> PathBuf {
    work.join(format!("block_{block}.baked"))
}

fn mask_file(work: &Path, block: u32, frame: usize) -> PathBuf {
    work.join("masks")
        .join(block.to_string())
        .join(format!("{frame:05}.png"))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Partitions the scene, assigns training frames and writes the layout and masks.
pub fn run_partition(
    dataset: &Dataset,
    config: &PipelineConfig,
    work: &Path,
) -> Result<LayoutDocument> {
    let pc = &config.partition;
    pc.validate()?;
    let layout = partition_scene(
        &dataset.bounds,
        pc.block_counts(&dataset.bounds),
        pc.overlap,
    )?;
    let train = dataset.train_indices();
    let views = train
        .iter()
        .map(|&i| dataset.training_view(i, None))
        .collect();
    let occupancy = build_coarse_occupancy(views, &dataset.bounds, pc, &config.train)?;
    let cameras: Vec<Camera> = train.iter().map(|&i| dataset.frames[i].camera).collect();
    let transient: Vec<Option<Vec<bool>>> = train
        .iter()
        .map(|&i| dataset.frames[i].transient.clone())
        .collect();
    let mut assignment = assign_images(&layout, &cameras, &occupancy, &transient, pc)?;
    for (b, images) in assignment.blocks.iter_mut().enumerate() {
        let id = layout.blocks[b].id;
        for a in images.iter_mut() {
            let frame = train[a.image as usize];
            a.image = frame as u32;
            let cam = &dataset.frames[frame].camera;
            let p = mask_file(work, id, frame);
            create_dir(p.parent().expect("mask dir"))?;
            let gray = GrayImage {
                width: cam.width(),
                height: cam.height(),
                data: a.mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
            };
            write_gray_png(&p, &gray)?;
        }
    }
    let doc = LayoutDocument::new(layout, &assignment);
    create_dir(work)?;
    let p = work.join(LAYOUT_FILE);
    fs::write(&p, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&p, e))?;
    Ok(doc)
}

pub fn load_layout(work: &Path) -> Result<LayoutDocument> {
    let p = work.join(LAYOUT_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_json(&p, &text)
}

/// Training data of `block`: its assigned frames with their masks, held-out frames as probes.
pub fn block_data(
    dataset: &Dataset,
    doc: &LayoutDocument,
    work: &Path,
    block: u32,
) -> Result<BlockData> {
    let index = doc
        .layout
        .blocks
        .iter()
        .position(|b| b.id == block)
        .ok_or_else(|| Error::Lookup(format!("layout has no block {block}")))?;
    let mut views = Vec::new();
    for &frame in &doc.images[index] {
        let frame = frame as usize;
        if frame >= dataset.frames.len() {
            return Err(Error::Validation(format!(
                "layout references frame {frame}, dataset has {}",
                dataset.frames.len()
            )));
        }
        let m = read_gray_png(mask_file(work, block, frame))?;
        let mask = m.data.iter().map(|&v| v != 0).collect();
        views.push(dataset.training_view(frame, Some(mask)));
    }
    if views.is_empty() {
        return Err(Error::Validation(format!(
            "block {block} has no assigned images"
        )));
    }
    let probes = dataset
        .holdout_indices()
        .into_iter()
        .map(|i| (dataset.frames[i].camera, dataset.frames[i].image.clone()))
        .collect();
    Ok(BlockData {
        aabb: doc.layout.blocks[index].training,
        views,
        probes,
        scene_diagonal: dataset.bounds.diagonal(),
    })
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    block: u32,
    config: &'a PipelineConfig,
}

/// Trains one block, writing the log and periodic checkpoints. `progress` sees every log record.
pub fn run_train(
    data: BlockData,
    block: u32,
    config: &PipelineConfig,
    work: &Path,
    mut progress: impl FnMut(&crate::train::LogRecord),
) -> Result<TrainedBlock> {
    create_dir(work)?;
    let lp = log_path(work, block);
    let file = File::create(&lp).map_err(|e| Error::io(&lp, e))?;
    let mut log = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(&lp, e);
    serde_json::to_writer(&mut log, &ConfigEcho { block, config })?;
    writeln!(log).map_err(io)?;
    let mut trainer = Trainer::new(data, config.train.clone())?;
    let ckpt = checkpoint_path(work, block);
    trainer.run(|event| match event {
        TrainEvent::Log(record) => {
            serde_json::to_writer(&mut log, record)?;
            writeln!(log).map_err(io)?;
            log.flush().map_err(io)?;
            progress(record);
            Ok(())
        }
        TrainEvent::Checkpoint(t) => save_checkpoint(&ckpt, block, &t.to_block(), &config.train),
    })?;
    let trained = trainer.into_block();
    save_checkpoint(&ckpt, block, &trained, &config.train)?;
    Ok(trained)
}

/// Bakes every level of a trained block, keeping only faces centred in the block's core.
pub fn bake_block(
    trained: &TrainedBlock,
    block: u32,
    doc: &LayoutDocument,
    cameras: &[Camera],
    config: &PipelineConfig,
) -> Result<BlockAssets> {
    let bounds = doc
        .layout
        .block(block)
        .ok_or_else(|| Error::Lookup(format!("layout has no block {block}")))?;
    let mut levels = Vec::with_capacity(trained.meshes.len());
    for (l, mesh) in trained.meshes.iter().enumerate() {
        let active = trained.occupancy.coarse_mask(1 << l);
        let (level, _) = bake::bake_level(
            mesh,
            &trained.network,
            cameras,
            Some(&bounds.core),
            Some(&active),
            &config.bake,
        )?;
        levels.push(level);
    }
    let mut assets = BlockAssets {
        id: block,
        core: bounds.core,
        training: bounds.training,
        network: trained.network.clone(),
        levels,
        resolutions: trained.meshes.iter().map(|m| m.resolution()).collect(),
    };
    assets.round_to_f32();
    Ok(assets)
}

fn single_block_scene(assets: BlockAssets, config: &PipelineConfig) -> SceneAssets {
    SceneAssets {
        geo_transform: config.geo_transform,
        level_policy: config.render.levels.clone(),
        page_size: config.bake.page_size,
        blocks: vec![assets],
    }
}

/// Loads the checkpoint of `block`, bakes it and writes `block_<b>.baked`.
pub fn run_bake(
    dataset: &Dataset,
    doc: &LayoutDocument,
    block: u32,
    config: &PipelineConfig,
    work: &Path,
) -> Result<BlockAssets> {
    let (_, trained) = load_checkpoint(checkpoint_path(work, block))?;
    let index = doc
        .layout
        .blocks
        .iter()
        .position(|b| b.id == block)
        .expect("checked by bake_block");
    let cameras: Vec<Camera> = doc
        .images
        .get(index)
        .into_iter()
        .flatten()
        .map(|&f| dataset.frames[f as usize].camera)
        .collect();
    let assets = bake_block(&trained, block, doc, &cameras, config)?;
    export_assets(&single_block_scene(assets.clone(), config))?.write(baked_path(work, block))?;
    Ok(assets)
}

/// Merges the baked blocks of the layout into one asset container at `out`.
pub fn run_export(
    doc: &LayoutDocument,
    config: &PipelineConfig,
    work: &Path,
    out: &Path,
) -> Result<SceneAssets> {
    let mut blocks = Vec::with_capacity(doc.layout.blocks.len());
    for b in &doc.layout.blocks {
        let p = baked_path(work, b.id);
        if !p.is_file() {
            return Err(Error::Validation(format!(
                "block {} has not been baked ({} missing)",
                b.id,
                p.display()
            )));
        }
        let mut scene = load_assets(&Container::read(&p)?)?;
        blocks.push(scene.blocks.remove(0));
    }
    let scene = SceneAssets {
        geo_transform: config.geo_transform,
        level_policy: config.render.levels.clone(),
        page_size: config.bake.page_size,
        blocks,
    };
    export_assets(&scene)?.write(out)?;
    Ok(scene)
}

#[derive(Debug, Clone, Serialize)]
pub struct RenderStats {
    pub frame: usize,
    pub ms: f64,
    pub levels: Vec<(u32, usize)>,
    pub encoder_evaluations: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub resident_pages: usize,
}

/// Renders `cameras` from pre-baked assets into `out/frame_<k>.png` plus `out/stats.json`.
pub fn run_render(
    scene: &SceneAssets,
    cameras: &[Camera],
    config: &PipelineConfig,
    out: &Path,
) -> Result<Vec<RenderStats>> {
    create_dir(out)?;
    let (blocks, source) = scene.render_inputs();
    let cache = AtlasCache::new(config.cache_pages);
    let mut state = LevelState::default();
    let mut stats = Vec::with_capacity(cameras.len());
    for (k, cam) in cameras.iter().enumerate() {
        let start = Instant::now();
        let (image, s) = render_frame(&blocks, &source, cam, &config.render, &cache, &mut state)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        write_png(out.join(format!("frame_{k:04}.png")), &image)?;
        stats.push(RenderStats {
            frame: k,
            ms,
            levels: s.drawn,
            encoder_evaluations: s.encoder_evaluations,
            cache_hits: s.cache_hits,
            cache_misses: s.cache_misses,
            resident_pages: s.resident_pages,
        });
    }
    let p = out.join("stats.json");
    fs::write(&p, serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io(&p, e))?;
    Ok(stats)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub images: Vec<(String, f64)>,
    pub mean_psnr: f64,
}

/// PSNR of every PNG in `renders` against the same-named PNG in `gt`.
pub fn run_eval(gt: &Path, renders: &Path) -> Result<EvalReport> {
    let mut names: Vec<String> = fs::read_dir(renders)
        .map_err(|e| Error::io(renders, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png") && !n.ends_with(".mask.png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Validation(format!(
            "no PNG images in {}",
            renders.display()
        )));
    }
    let mut images = Vec::with_capacity(names.len());
    for n in names {
        let g = gt.join(&n);
        if !g.is_file() {
            return Err(Error::Validation(format!(
                "ground truth {} missing",
                g.display()
            )));
        }
        let a: RgbImage = crate::imaging::read_png(renders.join(&n))?;
        let b = crate::imaging::read_png(&g)?;
        images.push((n, psnr(&a, &b)?));
    }
    let mean_psnr = images.iter().map(|(_, p)| p).sum::<f64>() / images.len() as f64;
    Ok(EvalReport { images, mean_psnr })
}
