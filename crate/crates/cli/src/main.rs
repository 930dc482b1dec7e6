use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nerfmesh::imaging::write_png;
use nerfmesh::pipeline::{
    self, generate_synthetic, load_assets, load_camera_path, load_dataset, load_layout,
    save_camera_path, Container, PipelineConfig,
};
use nerfmesh::Error;

mod serve;

/// Neural field to textured mesh pipeline.
#[derive(Parser)]
#[command(name = "nerfmesh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the procedural test scene as a dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split the scene into blocks and assign training images and masks.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one block.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        block: u32,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Extract visible faces and bake textures for trained blocks.
    Bake {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        work: PathBuf,
        /// Bake only this block; all blocks by default.
        #[arg(long)]
        block: Option<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Merge baked blocks into one asset container.
    Export {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render frames from an asset container along a camera path.
    Render {
        #[arg(long)]
        assets: PathBuf,
        #[arg(long)]
        camera_path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Alpha dithering with temporal accumulation.
        #[arg(long)]
        dither: bool,
    },
    /// PSNR of rendered images against ground truth with the same file names.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        renders: PathBuf,
    },
    /// Serve an asset container and its manifest over HTTP.
    Serve {
        #[arg(long)]
        assets: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
}

fn load_config(path: Option<&Path>) -> nerfmesh::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> nerfmesh::Result<()> {
    match cli.command {
        Command::Synth { out, config } => {
            let config = load_config(config.as_deref())?;
            let ds = generate_synthetic(&config.synthetic, &out)?;
            let holdout = ds.holdout_indices();
            let cameras: Vec<_> = holdout.iter().map(|&i| ds.frames[i].camera).collect();
            save_camera_path(out.join("holdout_path.json"), &cameras)?;
            let gt = out.join("holdout_gt");
            std::fs::create_dir_all(&gt).map_err(|e| Error::Io {
                path: gt.clone(),
                source: e,
            })?;
            for (k, &i) in holdout.iter().enumerate() {
                write_png(gt.join(format!("frame_{k:04}.png")), &ds.frames[i].image)?;
            }
            println!("wrote {} frames to {}", ds.frames.len(), out.display());
        }
        Command::Partition { data, work, config } => {
            let config = load_config(config.as_deref())?;
            let ds = load_dataset(&data)?;
            let doc = pipeline::run_partition(&ds, &config, &work)?;
            for (b, images) in doc.layout.blocks.iter().zip(&doc.images) {
                println!("block {}: {} images", b.id, images.len());
            }
        }
        Command::Train {
            data,
            work,
            block,
            config,
        } => {
            let config = load_config(config.as_deref())?;
            let ds = load_dataset(&data)?;
            let doc = load_layout(&work)?;
            let bd = pipeline::block_data(&ds, &doc, &work, block)?;
            let trained = pipeline::run_train(bd, block, &config, &work, |r| {
                let probe = r
                    .probe_psnr
                    .map(|p| format!(" probe {p:.2} dB"))
                    .unwrap_or_default();
                println!(
                    "epoch {} loss {:.5} batch {:.2} dB{probe}",
                    r.epoch, r.loss, r.batch_psnr
                );
            })?;
            println!("trained block {block} for {} epochs", trained.epochs);
        }
        Command::Bake {
            data,
            work,
            block,
            config,
        } => {
            let config = load_config(config.as_deref())?;
            let ds = load_dataset(&data)?;
            let doc = load_layout(&work)?;
            let ids: Vec<u32> = match block {
                Some(b) => vec![b],
                None => doc.layout.blocks.iter().map(|b| b.id).collect(),
            };
            for id in ids {
                let assets = pipeline::run_bake(&ds, &doc, id, &config, &work)?;
                let faces: Vec<usize> = assets.levels.iter().map(|l| l.mesh.faces.len()).collect();
                println!("block {id}: faces per level {faces:?}");
            }
        }
        Command::Export { work, out, config } => {
            let config = load_config(config.as_deref())?;
            let doc = load_layout(&work)?;
            let scene = pipeline::run_export(&doc, &config, &work, &out)?;
            println!(
                "exported {} blocks to {}",
                scene.blocks.len(),
                out.display()
            );
        }
        Command::Render {
            assets,
            camera_path,
            out,
            config,
            dither,
        } => {
            let mut config = load_config(config.as_deref())?;
            config.render.dither |= dither;
            let scene = load_assets(&Container::read(&assets)?)?;
            let cameras = load_camera_path(&camera_path)?;
            let stats = pipeline::run_render(&scene, &cameras, &config, &out)?;
            let ms: f64 = stats.iter().map(|s| s.ms).sum::<f64>() / stats.len().max(1) as f64;
            println!("rendered {} frames, {ms:.1} ms/frame", stats.len());
        }
        Command::Eval { gt, renders } => {
            let report = pipeline::run_eval(&gt, &renders)?;
            for (name, p) in &report.images {
                println!("{name}: {p:.2} dB");
            }
            println!("mean PSNR {:.2} dB", report.mean_psnr);
        }
        Command::Serve { assets, port, bind } => serve::serve(&assets, &bind, port)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}
