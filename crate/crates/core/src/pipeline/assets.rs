//! Baked scene assets and their mapping onto container sections.
//!
//! Sections per block `b` and level `l` (1 = finest):
//! - `manifest`: JSON [`Manifest`]
//! - `mesh/b/l`: vertex count u32, face count u32, vertices f32×3, indices u32×3,
//!   UVs f32×2 per face corner, source face ids u32
//! - `tex/b/l/p`: the nine BC4 planes of page `p`, concatenated
//! - `weights/b`: encoder then decoder parameters, f32
//! - `hash/b`: hash table, f32

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bake::{assign_uvs, BakedLevel, ExtractedMesh, TexturePage, PLANES};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldNetwork, HashGridConfig};
use crate::geometry::{Aabb, GeoTransform, Vec3};
use crate::raster::{LevelPolicy, PrebakedSource, SceneBlock};

use super::container::{le, Container};

pub const MANIFEST_SECTION: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLevel {
    pub level: usize,
    /// Cells per axis of the source lattice.
    pub resolution: usize,
    pub vertices: usize,
    pub faces: usize,
    pub pages: usize,
    pub retention: f64,
    pub mesh_section: String,
    pub texture_sections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestBlock {
    pub id: u32,
    pub core: Aabb,
    pub training: Aabb,
    /// Region the hash encoding normalizes positions against.
    pub field_aabb: Aabb,
    pub hash: HashGridConfig,
    pub weights_section: String,
    pub hash_section: String,
    pub encoder_weights: usize,
    /// Decoder parameters follow the encoder's in the weights section.
    pub decoder_weights: usize,
    /// Camera altitudes above `core.max.z` at which levels 2..=5 take over.
    pub thresholds: [f64; 4],
    pub levels: Vec<ManifestLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Dataset-to-engine mapping; meshes are stored in the dataset frame.
    pub geo_transform: GeoTransform,
    pub level_policy: LevelPolicy,
    pub page_size: usize,
    pub tile: usize,
    pub planes: usize,
    pub blocks: Vec<ManifestBlock>,
}

/// Everything one block contributes to a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAssets {
    pub id: u32,
    pub core: Aabb,
    pub training: Aabb,
    pub network: FieldNetwork,
    /// Baked levels, finest first.
    pub levels: Vec<BakedLevel>,
    pub resolutions: Vec<usize>,
}

impl BlockAssets {
    /// Rounds parameters and vertices through f32 so the block survives a container round trip
    /// unchanged.
    pub fn round_to_f32(&mut self) {
        self.network.round_to_f32();
        for l in &mut self.levels {
            for v in &mut l.mesh.vertices {
                *v = v.map(|c| c as f32 as f64);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAssets {
    pub geo_transform: GeoTransform,
    pub level_policy: LevelPolicy,
    pub page_size: usize,
    pub blocks: Vec<BlockAssets>,
}

impl SceneAssets {
    pub fn manifest(&self) -> Manifest {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let levels = b
                    .levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| ManifestLevel {
                        level: i + 1,
                        resolution: b.resolutions.get(i).copied().unwrap_or(0),
                        vertices: l.mesh.vertices.len(),
                        faces: l.mesh.faces.len(),
                        pages: l.pages.len(),
                        retention: l.mesh.retention,
                        mesh_section: format!("mesh/{}/{}", b.id, i + 1),
                        texture_sections: (0..l.pages.len())
                            .map(|p| format!("tex/{}/{}/{p}", b.id, i + 1))
                            .collect(),
                    })
                    .collect();
                ManifestBlock {
                    id: b.id,
                    core: b.core,
                    training: b.training,
                    field_aabb: b.network.aabb,
                    hash: b.network.hash.config().clone(),
                    weights_section: format!("weights/{}", b.id),
                    hash_section: format!("hash/{}", b.id),
                    encoder_weights: b.network.encoder.param_count(),
                    decoder_weights: b.network.decoder.param_count(),
                    thresholds: self.level_policy.thresholds(&b.core),
                    levels,
                }
            })
            .collect();
        Manifest {
            format: "UNRB".into(),
            version: super::container::VERSION,
            geo_transform: self.geo_transform,
            level_policy: self.level_policy.clone(),
            page_size: self.page_size,
            tile: crate::bake::TILE,
            planes: PLANES,
            blocks,
        }
    }

    /// Renderer inputs: decoders per block and a source serving the baked levels.
    pub fn render_inputs(&self) -> (Vec<SceneBlock>, PrebakedSource) {
        let mut source = PrebakedSource::default();
        let mut blocks = Vec::new();
        for b in &self.blocks {
            blocks.push(SceneBlock {
                id: b.id,
                aabb: b.core,
                network: Arc::new(b.network.clone()),
                levels: b.levels.len(),
            });
            for (i, l) in b.levels.iter().enumerate() {
                source.entries.insert((b.id, i + 1), Arc::new(l.clone()));
            }
            let touching = self
                .blocks
                .iter()
                .filter(|o| o.id != b.id && faces_touch(&o.core, &b.core))
                .map(|o| o.id)
                .collect();
            source.adjacency.insert(b.id, touching);
        }
        (blocks, source)
    }
}

fn faces_touch(a: &Aabb, b: &Aabb) -> bool {
    let mut shared = 0;
    for k in 0..3 {
        if a.max[k] < b.min[k] || b.max[k] < a.min[k] {
            return false;
        }
        if a.max[k] == b.min[k] || b.max[k] == a.min[k] {
            shared += 1;
        }
    }
    shared == 1
}

fn encode_mesh(level: &BakedLevel) -> Vec<u8> {
    let m = &level.mesh;
    let mut out = le::u32s([m.vertices.len() as u32, m.faces.len() as u32]);
    out.extend(le::f32s(
        m.vertices
            .iter()
            .flat_map(|v| [v.x as f32, v.y as f32, v.z as f32]),
    ));
    out.extend(le::u32s(m.faces.iter().flatten().copied()));
    out.extend(le::f32s(
        level.atlas.uvs.iter().flatten().flatten().copied(),
    ));
    out.extend(le::u32s(m.source_faces.iter().copied()));
    out
}

fn decode_mesh(
    name: &str,
    bytes: &[u8],
    retention: f64,
    page_size: usize,
) -> Result<(ExtractedMesh, crate::bake::UvAtlas)> {
    let bad = |reason: &str| Error::Corruption {
        section: name.into(),
        reason: reason.into(),
    };
    if bytes.len() < 8 {
        return Err(bad("mesh header missing"));
    }
    let counts = le::read_u32s(name, &bytes[..8])?;
    let (nv, nf) = (counts[0] as usize, counts[1] as usize);
    let expect = 8 + nv * 12 + nf * 12 + nf * 24 + nf * 4;
    if bytes.len() != expect {
        return Err(bad(&format!(
            "expected {expect} bytes for {nv} vertices and {nf} faces, found {}",
            bytes.len()
        )));
    }
    let mut at = 8;
    let mut take = |n: usize| {
        let s = &bytes[at..at + n];
        at += n;
        s
    };
    let verts = le::read_f32s(name, take(nv * 12))?;
    let idx = le::read_u32s(name, take(nf * 12))?;
    let uvs = le::read_f32s(name, take(nf * 24))?;
    let source_faces = le::read_u32s(name, take(nf * 4))?;
    if idx.iter().any(|&i| i as usize >= nv) {
        return Err(bad("face index out of range"));
    }
    let mesh = ExtractedMesh {
        vertices: verts
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect(),
        faces: idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        source_faces,
        retention,
    };
    let atlas = assign_uvs(&mesh, page_size)?;
    let stored = uvs
        .chunks_exact(6)
        .map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]]]);
    if !stored.eq(atlas.uvs.iter().copied()) {
        return Err(bad("UVs disagree with the atlas layout"));
    }
    Ok((mesh, atlas))
}

/// Serializes a scene. Parameters and vertices are stored as f32.
pub fn export_assets(scene: &SceneAssets) -> Result<Container> {
    let manifest = scene.manifest();
    let mut c = Container::default();
    c.push(MANIFEST_SECTION, serde_json::to_vec_pretty(&manifest)?);
    for (b, mb) in scene.blocks.iter().zip(&manifest.blocks) {
        for (l, ml) in b.levels.iter().zip(&mb.levels) {
            if l.atlas.page_size != scene.page_size {
                return Err(Error::Argument(format!(
                    "block {} level {} uses a different page size",
                    b.id, ml.level
                )));
            }
            c.push(ml.mesh_section.clone(), encode_mesh(l));
            for (payload, name) in l.payloads.iter().zip(&ml.texture_sections) {
                c.push(name.clone(), payload.concat());
            }
        }
        c.push(
            mb.weights_section.clone(),
            le::f32s(b.network.weights_f32()),
        );
        c.push(
            mb.hash_section.clone(),
            le::f32s(b.network.hash.params().iter().map(|&v| v as f32)),
        );
    }
    Ok(c)
}

pub fn read_manifest(c: &Container) -> Result<Manifest> {
    let m: Manifest =
        serde_json::from_slice(c.require(MANIFEST_SECTION)?).map_err(|e| Error::Corruption {
            section: MANIFEST_SECTION.into(),
            reason: e.to_string(),
        })?;
    if m.format != "UNRB" || m.version != super::container::VERSION {
        return Err(Error::Corruption {
            section: MANIFEST_SECTION.into(),
            reason: format!("format {} version {} not supported", m.format, m.version),
        });
    }
    Ok(m)
}

/// Rebuilds a scene from a container produced by [`export_assets`].
pub fn load_assets(c: &Container) -> Result<SceneAssets> {
    let m = read_manifest(c)?;
    let plane_bytes = m.page_size * m.page_size / 2;
    let mut blocks = Vec::with_capacity(m.blocks.len());
    for mb in &m.blocks {
        let config = FieldConfig {
            hash: mb.hash.clone(),
            seed: 0,
        };
        let mut network = FieldNetwork::new(mb.field_aabb, &config)?;
        let weights = le::read_f32s(&mb.weights_section, c.require(&mb.weights_section)?)?;
        network
            .set_weights_f32(&weights)
            .map_err(|e| Error::Corruption {
                section: mb.weights_section.clone(),
                reason: e.to_string(),
            })?;
        let table = le::read_f32s(&mb.hash_section, c.require(&mb.hash_section)?)?;
        network
            .set_hash_f32(&table)
            .map_err(|e| Error::Corruption {
                section: mb.hash_section.clone(),
                reason: e.to_string(),
            })?;
        let mut levels = Vec::with_capacity(mb.levels.len());
        for ml in &mb.levels {
            let (mesh, atlas) = decode_mesh(
                &ml.mesh_section,
                c.require(&ml.mesh_section)?,
                ml.retention,
                m.page_size,
            )?;
            if atlas.pages != ml.texture_sections.len() {
                return Err(Error::Corruption {
                    section: ml.mesh_section.clone(),
                    reason: format!(
                        "{} pages listed for an atlas of {}",
                        ml.texture_sections.len(),
                        atlas.pages
                    ),
                });
            }
            let mut pages = Vec::with_capacity(atlas.pages);
            let mut payloads = Vec::with_capacity(atlas.pages);
            for name in &ml.texture_sections {
                let data = c.require(name)?;
                if data.len() != PLANES * plane_bytes {
                    return Err(Error::Corruption {
                        section: name.clone(),
                        reason: format!(
                            "expected {} bytes, found {}",
                            PLANES * plane_bytes,
                            data.len()
                        ),
                    });
                }
                let planes: Vec<Vec<u8>> =
                    data.chunks_exact(plane_bytes).map(<[u8]>::to_vec).collect();
                pages.push(TexturePage::from_compressed(m.page_size, &planes)?);
                payloads.push(planes);
            }
            levels.push(BakedLevel {
                mesh,
                atlas,
                pages,
                payloads,
            });
        }
        blocks.push(BlockAssets {
            id: mb.id,
            core: mb.core,
            training: mb.training,
            network,
            levels,
            resolutions: mb.levels.iter().map(|l| l.resolution).collect(),
        });
    }
    Ok(SceneAssets {
        geo_transform: m.geo_transform,
        level_policy: m.level_policy,
        page_size: m.page_size,
        blocks,
    })
}

/// Section name → (offset, length) of an encoded container, for range requests.
pub fn section_offsets(bytes: &[u8]) -> Result<HashMap<String, (u64, u64)>> {
    Ok(Container::read_table(bytes)?
        .into_iter()
        .map(|e| (e.name, (e.offset, e.length)))
        .collect())
}
