//! Texture atlas layout: two triangles per 32×32 tile, texture baking and filtered lookups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{to_u8, FieldNetwork, ENCODER_OUTPUTS};
use crate::geometry::Vec3;

use super::bc4::{bc4_decode, bc4_encode};
use super::extract::ExtractedMesh;

pub const TILE: usize = 32;
/// Texels covered by each triangle of a tile.
pub const HALF_TEXELS: usize = 435;
pub const PLANES: usize = ENCODER_OUTPUTS;
pub const DEFAULT_PAGE_SIZE: usize = 4096;

/// Corners of each tile half in texel coordinates (texel `i` spans `[i, i+1)`), in face vertex order.
pub const HALF_CORNERS: [[[f64; 2]; 3]; 2] = [
    [[1.5, 1.5], [29.5, 1.5], [1.5, 29.5]],
    [[30.5, 30.5], [2.5, 30.5], [30.5, 2.5]],
];

/// Whether texel `(i, j)` of a tile belongs to triangle `half`.
pub fn texel_covered(i: usize, j: usize, half: usize) -> bool {
    if half == 0 {
        i >= 1 && j >= 1 && i + j <= 30
    } else {
        i <= 30 && j <= 30 && i + j >= 32
    }
}

/// Barycentric coordinates (face vertex order) of the center of texel `(i, j)` in triangle `half`.
pub fn texel_barycentric(i: usize, j: usize, half: usize) -> [f64; 3] {
    let (b, c) = if half == 0 {
        ((i as f64 - 1.0) / 28.0, (j as f64 - 1.0) / 28.0)
    } else {
        ((30.0 - i as f64) / 28.0, (30.0 - j as f64) / 28.0)
    };
    [1.0 - b - c, b, c]
}

/// Nearest texel of triangle `half` to `(i, j)` (integer coordinates, possibly outside the tile).
pub fn clamp_to_half(i: i64, j: i64, half: usize) -> (usize, usize) {
    if half == 0 {
        let (mut i, mut j) = (i.clamp(1, 29), j.clamp(1, 29));
        while i + j > 30 {
            if i >= j {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        (i as usize, j as usize)
    } else {
        let (mut i, mut j) = (i.clamp(2, 30), j.clamp(2, 30));
        while i + j < 32 {
            if i <= j {
                i += 1;
            } else {
                j += 1;
            }
        }
        (i as usize, j as usize)
    }
}

/// Where one face lives in the atlas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSlot {
    pub page: u32,
    /// Texel origin of the tile within its page.
    pub x: u32,
    pub y: u32,
    pub half: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UvAtlas {
    pub page_size: usize,
    pub pages: usize,
    pub slots: Vec<TileSlot>,
    /// Per face, per corner: normalized page coordinates.
    pub uvs: Vec<[[f32; 2]; 3]>,
}

impl UvAtlas {
    pub fn tiles_per_row(&self) -> usize {
        self.page_size / TILE
    }

    pub fn tiles_per_page(&self) -> usize {
        self.tiles_per_row().pow(2)
    }
}

/// Packs faces two per tile in index order: face `2k` takes the lower-left triangle of tile `k`,
/// face `2k+1` the upper-right one.
pub fn assign_uvs(mesh: &ExtractedMesh, page_size: usize) -> Result<UvAtlas> {
    if page_size < TILE || page_size % TILE != 0 {
        return Err(Error::Config(format!(
            "page size {page_size} must be a positive multiple of {TILE}"
        )));
    }
    let tpr = page_size / TILE;
    let tpp = tpr * tpr;
    let n = mesh.faces.len();
    let tiles = n.div_ceil(2);
    let mut slots = Vec::with_capacity(n);
    let mut uvs = Vec::with_capacity(n);
    for f in 0..n {
        let tile = f / 2;
        let half = f % 2;
        let local = tile % tpp;
        let slot = TileSlot {
            page: (tile / tpp) as u32,
            x: ((local % tpr) * TILE) as u32,
            y: ((local / tpr) * TILE) as u32,
            half: half as u8,
        };
        let corners = HALF_CORNERS[half].map(|[cx, cy]| {
            [
                ((slot.x as f64 + cx) / page_size as f64) as f32,
                ((slot.y as f64 + cy) / page_size as f64) as f32,
            ]
        });
        slots.push(slot);
        uvs.push(corners);
    }
    Ok(UvAtlas {
        page_size,
        pages: tiles.div_ceil(tpp),
        slots,
        uvs,
    })
}

/// Nine 8-bit planes (eight features, then opacity) of one atlas page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TexturePage {
    pub size: usize,
    pub planes: Vec<Vec<u8>>,
}

impl TexturePage {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            planes: vec![vec![0u8; size * size]; PLANES],
        }
    }

    #[inline]
    pub fn texel(&self, plane: usize, x: usize, y: usize) -> u8 {
        self.planes[plane][y * self.size + x]
    }

    /// BC4 payload of every plane.
    pub fn compress(&self) -> Result<Vec<Vec<u8>>> {
        self.planes
            .iter()
            .map(|p| bc4_encode(p, self.size, self.size))
            .collect()
    }

    pub fn from_compressed(size: usize, payloads: &[Vec<u8>]) -> Result<Self> {
        if payloads.len() != PLANES {
            return Err(Error::Argument(format!(
                "expected {PLANES} BC4 planes, got {}",
                payloads.len()
            )));
        }
        Ok(Self {
            size,
            planes: payloads
                .iter()
                .map(|p| bc4_decode(p, size, size))
                .collect::<Result<_>>()?,
        })
    }

    /// The page after a BC4 round trip.
    pub fn bc4_round_trip(&self) -> Result<Self> {
        Self::from_compressed(self.size, &self.compress()?)
    }
}

/// 3-D point of texel `(i, j)` of `face`.
pub fn texel_point(mesh: &ExtractedMesh, face: usize, half: usize, i: usize, j: usize) -> Vec3 {
    let b = texel_barycentric(i, j, half);
    let [a, bb, c] = mesh.faces[face];
    mesh.vertices[a as usize] * b[0]
        + mesh.vertices[bb as usize] * b[1]
        + mesh.vertices[c as usize] * b[2]
}

/// Queries the encoder at every covered texel, quantizes to 8 bits and fills the gutters.
pub fn bake_textures(
    mesh: &ExtractedMesh,
    atlas: &UvAtlas,
    net: &FieldNetwork,
) -> Vec<TexturePage> {
    let size = atlas.page_size;
    let mut pages: Vec<TexturePage> = (0..atlas.pages).map(|_| TexturePage::new(size)).collect();
    let covered: Vec<(usize, usize)> = (0..TILE)
        .flat_map(|j| (0..TILE).map(move |i| (i, j)))
        .collect();
    let halves: [Vec<(usize, usize)>; 2] = [0, 1].map(|h| {
        covered
            .iter()
            .copied()
            .filter(|&(i, j)| texel_covered(i, j, h))
            .collect()
    });

    const FACES_PER_BATCH: usize = 16;
    let mut points = Vec::with_capacity(FACES_PER_BATCH * HALF_TEXELS);
    for start in (0..mesh.faces.len()).step_by(FACES_PER_BATCH) {
        let end = (start + FACES_PER_BATCH).min(mesh.faces.len());
        points.clear();
        for f in start..end {
            let half = atlas.slots[f].half as usize;
            for &(i, j) in &halves[half] {
                points.push(texel_point(mesh, f, half, i, j));
            }
        }
        let out = net.encode_batch(&points);
        let mut k = 0;
        for f in start..end {
            let slot = atlas.slots[f];
            let page = &mut pages[slot.page as usize];
            for &(i, j) in &halves[slot.half as usize] {
                let idx = (slot.y as usize + j) * size + slot.x as usize + i;
                for (c, v) in out[k].channels().iter().enumerate() {
                    page.planes[c][idx] = to_u8(*v);
                }
                k += 1;
            }
        }
    }

    let faces = mesh.faces.len();
    for tile in 0..faces.div_ceil(2) {
        let slot = atlas.slots[2 * tile];
        let both = 2 * tile + 1 < faces;
        let page = &mut pages[slot.page as usize];
        for j in 0..TILE {
            for i in 0..TILE {
                if texel_covered(i, j, 0) || (both && texel_covered(i, j, 1)) {
                    continue;
                }
                let half = if both && i + j > 31 { 1 } else { 0 };
                let (si, sj) = clamp_to_half(i as i64, j as i64, half);
                let dst = (slot.y as usize + j) * size + slot.x as usize + i;
                let src = (slot.y as usize + sj) * size + slot.x as usize + si;
                for c in 0..PLANES {
                    page.planes[c][dst] = page.planes[c][src];
                }
            }
        }
    }
    pages
}

/// Bilinear lookup of all nine planes at normalized page coordinates `uv` on `slot`'s triangle.
/// Taps outside the triangle are clamped to its nearest texel, so no value leaks in from the gutter
/// or the neighboring triangle.
pub fn sample_slot(page: &TexturePage, slot: &TileSlot, uv: [f64; 2]) -> [f64; PLANES] {
    let size = page.size as f64;
    let x = uv[0] * size - slot.x as f64 - 0.5;
    let y = uv[1] * size - slot.y as f64 - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut out = [0.0; PLANES];
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (ti, tj, w) in taps {
        if w == 0.0 {
            continue;
        }
        let (i, j) = clamp_to_half(ti, tj, slot.half as usize);
        let idx = (slot.y as usize + j) * page.size + slot.x as usize + i;
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * page.planes[c][idx] as f64;
        }
    }
    out.map(|v| v / 255.0)
}
