//! Trains one block on the synthetic scene and reports train and held-out PSNR.
//!
//! Usage: `cargo run --release --example synthetic_overfit -- [config.toml]`

use std::time::Instant;

use nerfmesh::imaging::psnr;
use nerfmesh::pipeline::{depth_targets, SyntheticScene, SyntheticSpec};
use nerfmesh::train::{BlockData, TrainConfig, TrainEvent, Trainer, TrainingView};

fn main() -> nerfmesh::Result<()> {
    let config: TrainConfig = match std::env::args().nth(1) {
        Some(path) => toml::from_str(&std::fs::read_to_string(&path).expect("readable config"))
            .expect("valid config"),
        None => nerfmesh::train::TrainConfig {
            epochs: 20_000,
            base_resolution: 16,
            ..Default::default()
        },
    };
    let scene = SyntheticScene::new(SyntheticSpec::default())?;
    let cams = scene.train_cameras();
    let points = scene.sfm_points(&cams);
    let views: Vec<TrainingView> = cams
        .iter()
        .enumerate()
        .map(|(i, c)| TrainingView {
            camera: c.clone(),
            image: scene.render(c).0,
            mask: None,
            depth_targets: depth_targets(&points, i as u32, c),
        })
        .collect();
    let probes = scene
        .holdout_cameras()
        .iter()
        .map(|c| (c.clone(), scene.render(c).0))
        .collect();
    let aabb = scene.bounds();
    let data = BlockData {
        aabb,
        views: views.clone(),
        probes,
        scene_diagonal: aabb.diagonal(),
    };
    let start = Instant::now();
    let mut trainer = Trainer::new(data, config)?;
    trainer.run(|e| {
        if let TrainEvent::Log(r) = e {
            println!(
                "{:>6} {:>7.1}s loss {:.5} p1 {:.5} depth {:.2e} batch {:.2} dB probe {:?} active {:.3} samples {} levels {}",
                r.epoch,
                start.elapsed().as_secs_f64(),
                r.loss,
                r.part1[0],
                r.depth,
                r.batch_psnr,
                r.probe_psnr,
                r.active_cells,
                r.samples,
                r.levels
            );
        }
        Ok(())
    })?;
    let mut sum = 0.0;
    for v in &views {
        sum += psnr(&trainer.render(&v.camera, 0)?.image, &v.image)?;
    }
    println!(
        "train psnr {:.2} dB, probe psnr {:.2} dB, {:.1}s",
        sum / views.len() as f64,
        trainer.probe_psnr()?,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
