//! Trained-block checkpoints: the container format with full-precision sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldNetwork};
use crate::geometry::{Aabb, GridSpec, OctahedralMeshGrid, Vec3};
use crate::train::{OccupancyGrid, TrainConfig, TrainedBlock};

use super::container::{le, Container};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub block: u32,
    pub aabb: Aabb,
    pub epochs: u64,
    /// Lattice resolution per level, finest first.
    pub resolutions: Vec<usize>,
    pub config: TrainConfig,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    block: u32,
    trained: &TrainedBlock,
    config: &TrainConfig,
) -> Result<()> {
    let meta = CheckpointMeta {
        block,
        aabb: trained.network.aabb,
        epochs: trained.epochs,
        resolutions: trained.meshes.iter().map(|m| m.resolution()).collect(),
        config: config.clone(),
    };
    let net = &trained.network;
    let mut c = Container::default();
    c.push("meta", serde_json::to_vec_pretty(&meta)?);
    c.push("hash", le::f64s(net.hash.params().iter().copied()));
    c.push("encoder", le::f64s(net.encoder.params().iter().copied()));
    c.push("decoder", le::f64s(net.decoder.params().iter().copied()));
    for (l, m) in trained.meshes.iter().enumerate() {
        c.push(
            format!("mesh/{}", l + 1),
            le::f64s(m.vertices().iter().flat_map(|v| [v.x, v.y, v.z])),
        );
    }
    c.push(
        "occupancy",
        le::f64s(trained.occupancy.values().iter().copied()),
    );
    c.write(path)
}

fn fill(dst: &mut [f64], name: &str, c: &Container) -> Result<()> {
    let src = le::read_f64s(name, c.require(name)?)?;
    if src.len() != dst.len() {
        return Err(Error::Corruption {
            section: name.into(),
            reason: format!("expected {} values, found {}", dst.len(), src.len()),
        });
    }
    dst.copy_from_slice(&src);
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, TrainedBlock)> {
    let c = Container::read(path)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(c.require("meta")?).map_err(|e| Error::Corruption {
            section: "meta".into(),
            reason: e.to_string(),
        })?;
    let field = FieldConfig {
        hash: meta.config.field.hash.clone(),
        seed: 0,
    };
    let mut network = FieldNetwork::new(meta.aabb, &field)?;
    fill(network.hash.params_mut(), "hash", &c)?;
    fill(network.encoder.params_mut(), "encoder", &c)?;
    fill(network.decoder.params_mut(), "decoder", &c)?;
    let mut meshes = Vec::with_capacity(meta.resolutions.len());
    for (l, &res) in meta.resolutions.iter().enumerate() {
        let name = format!("mesh/{}", l + 1);
        let flat = le::read_f64s(&name, c.require(&name)?)?;
        let vertices: Vec<Vec3> = flat
            .chunks_exact(3)
            .map(|v| Vec3::new(v[0], v[1], v[2]))
            .collect();
        let spec = GridSpec::new(res, meta.aabb)?;
        meshes.push(
            OctahedralMeshGrid::with_vertices(spec, l + 1, vertices).map_err(|e| {
                Error::Corruption {
                    section: name.clone(),
                    reason: e.to_string(),
                }
            })?,
        );
    }
    let occ = le::read_f64s("occupancy", c.require("occupancy")?)?;
    let spec = GridSpec::new(meta.resolutions.first().copied().unwrap_or(1), meta.aabb)?;
    if occ.len() != spec.cell_count() {
        return Err(Error::Corruption {
            section: "occupancy".into(),
            reason: "cell count does not match the finest lattice".into(),
        });
    }
    let oc = &meta.config.occupancy;
    let occupancy = OccupancyGrid::from_values(spec, oc.decay, oc.threshold, occ);
    let trained = TrainedBlock {
        network,
        meshes,
        occupancy,
        epochs: meta.epochs,
    };
    Ok((meta, trained))
}
