//! Extraction of render meshes and baking of BC4-compressed feature textures.

pub mod atlas;
pub mod bc4;
pub mod extract;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::FieldNetwork;
use crate::geometry::{Aabb, Camera, OctahedralMeshGrid, Vec3};

pub use atlas::{
    assign_uvs, bake_textures, clamp_to_half, sample_slot, texel_barycentric, texel_covered,
    texel_point, TexturePage, TileSlot, UvAtlas, DEFAULT_PAGE_SIZE, HALF_CORNERS, HALF_TEXELS,
    PLANES, TILE,
};
pub use bc4::{bc4_decode, bc4_encode, decode_block, encode_block, naive_encode_block};
pub use extract::{
    accumulate_face_stats, bundle_directions, extract_faces, generate_views, walk_rays,
    ExtractedMesh, FaceStats, RayBundle, ViewConfig, ViewSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BakeConfig {
    pub views: ViewConfig,
    /// Walks stop once the remaining transmittance falls below this.
    pub stop_transmittance: f64,
    /// Faces whose highest observed opacity is below this are dropped.
    pub alpha_threshold: f64,
    pub page_size: usize,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self {
            views: ViewConfig::default(),
            stop_transmittance: 0.2,
            alpha_threshold: 0.3,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

/// Everything the renderer needs for one (block, level).
#[derive(Debug, Clone, PartialEq)]
pub struct BakedLevel {
    pub mesh: ExtractedMesh,
    pub atlas: UvAtlas,
    /// Pages as the renderer samples them, i.e. after BC4 decoding.
    pub pages: Vec<TexturePage>,
    /// BC4 payload of every page and plane.
    pub payloads: Vec<Vec<Vec<u8>>>,
}

/// Extracts the visible faces of `mesh` and bakes their textures. With `clip`, only faces whose
/// centroid lies inside it are kept. With `active`, cells flagged false are treated as empty,
/// as the trainer's occupancy grid does. Also returns the number of encoder queries spent.
pub fn bake_level(
    mesh: &OctahedralMeshGrid,
    net: &FieldNetwork,
    cameras: &[Camera],
    clip: Option<&Aabb>,
    active: Option<&[bool]>,
    config: &BakeConfig,
) -> Result<(BakedLevel, u64)> {
    let views = generate_views(&mesh.spec().aabb, mesh.cell_size(), cameras, &config.views);
    let stats = accumulate_face_stats(mesh, net, &views, config.stop_transmittance, active);
    let mut extracted = extract_faces(mesh, &stats, config.alpha_threshold);
    if let Some(clip) = clip {
        extracted = clip_faces(&extracted, clip, mesh.face_count());
    }
    let baked = bake_extracted(extracted, net, config.page_size)?;
    let texels = (baked.mesh.faces.len() * HALF_TEXELS) as u64;
    Ok((baked, stats.evaluations + texels))
}

/// Keeps the faces whose centroid lies in `clip`, re-indexing vertices.
pub fn clip_faces(mesh: &ExtractedMesh, clip: &Aabb, source_face_count: usize) -> ExtractedMesh {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut out = ExtractedMesh::default();
    for (f, face) in mesh.faces.iter().enumerate() {
        let c = face
            .iter()
            .map(|&v| mesh.vertices[v as usize])
            .sum::<Vec3>()
            / 3.0;
        if !clip.contains(&c) {
            continue;
        }
        out.faces.push(face.map(|v| {
            let slot = &mut remap[v as usize];
            if *slot == u32::MAX {
                *slot = out.vertices.len() as u32;
                out.vertices.push(mesh.vertices[v as usize]);
            }
            *slot
        }));
        out.source_faces.push(mesh.source_faces[f]);
    }
    out.retention = if source_face_count == 0 {
        0.0
    } else {
        out.faces.len() as f64 / source_face_count as f64
    };
    out
}

/// UV assignment and texture baking for an already extracted mesh.
pub fn bake_extracted(
    mesh: ExtractedMesh,
    net: &FieldNetwork,
    page_size: usize,
) -> Result<BakedLevel> {
    let atlas = assign_uvs(&mesh, page_size)?;
    let raw = bake_textures(&mesh, &atlas, net);
    let payloads = raw
        .iter()
        .map(TexturePage::compress)
        .collect::<Result<Vec<_>>>()?;
    let pages = payloads
        .iter()
        .map(|p| TexturePage::from_compressed(page_size, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(BakedLevel {
        mesh,
        atlas,
        pages,
        payloads,
    })
}
