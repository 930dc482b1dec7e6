//! Tile-based perspective-correct triangle rasterization into a feature G-buffer.

use rayon::prelude::*;

use crate::bake::{sample_slot, BakedLevel, PLANES};
use crate::field::FEATURE_CHANNELS;
use crate::geometry::{Camera, Vec3};

pub const RASTER_TILE: usize = 64;
/// Camera-space depth below which geometry is clipped.
pub const NEAR_PLANE: f64 = 1e-3;

/// Ordered 4×4 Bayer matrix, row-major, values 0..16.
pub const BAYER4: [[u8; 4]; 4] = [[0, 8, 2, 10], [12, 4, 14, 6], [3, 11, 1, 9], [15, 7, 13, 5]];

/// Per-pixel surface attributes gathered before shading.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: u32,
    pub height: u32,
    pub features: Vec<[f64; FEATURE_CHANNELS]>,
    pub alpha: Vec<f64>,
    /// Camera-space depth; infinite where nothing was written.
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
    pub block: Vec<u32>,
}

impl GBuffer {
    pub const EMPTY: u32 = u32::MAX;

    pub fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            features: vec![[0.0; FEATURE_CHANNELS]; n],
            alpha: vec![0.0; n],
            depth: vec![f64::INFINITY; n],
            face: vec![Self::EMPTY; n],
            block: vec![Self::EMPTY; n],
        }
    }

    pub fn is_covered(&self, i: usize) -> bool {
        self.face[i] != Self::EMPTY
    }

    pub fn covered_count(&self) -> usize {
        self.face.iter().filter(|&&f| f != Self::EMPTY).count()
    }
}

/// Transparency handling for fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dither {
    /// Fragments survive when opacity is at least one half.
    Off,
    /// Screen-door test against the Bayer matrix shifted by the jitter of `frame` (0..16).
    Frame(usize),
}

/// Jitter of frame `k` in the 16-frame sequence.
pub fn frame_jitter(k: usize) -> (usize, usize) {
    (k % 4, (k / 4) % 4)
}

/// Survival test for a fragment of opacity `alpha` at pixel `(x, y)`.
pub fn fragment_survives(alpha: f64, x: u32, y: u32, dither: Dither) -> bool {
    match dither {
        Dither::Off => alpha >= 0.5,
        Dither::Frame(k) => {
            let (jx, jy) = frame_jitter(k);
            let b = BAYER4[(y as usize + jy) % 4][(x as usize + jx) % 4] as f64;
            alpha > (b + 0.5) / 16.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    cam: Vec3,
    uv: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
struct ScreenTri {
    xy: [[f64; 2]; 3],
    inv_z: [f64; 3],
    uv: [[f64; 2]; 3],
    face: u32,
    min: [f64; 2],
    max: [f64; 2],
}

fn clip_near(poly: &[ClipVertex]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    let inside = |v: &ClipVertex| -v.cam.z >= NEAR_PLANE;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if inside(&a) {
            out.push(a);
        }
        if inside(&a) != inside(&b) {
            let da = -a.cam.z - NEAR_PLANE;
            let db = -b.cam.z - NEAR_PLANE;
            let s = da / (da - db);
            out.push(ClipVertex {
                cam: a.cam + (b.cam - a.cam) * s,
                uv: [
                    a.uv[0] + (b.uv[0] - a.uv[0]) * s,
                    a.uv[1] + (b.uv[1] - a.uv[1]) * s,
                ],
            });
        }
    }
    out
}

fn setup(level: &BakedLevel, camera: &Camera) -> Vec<ScreenTri> {
    let i = &camera.intrinsics;
    let cam_vertices: Vec<Vec3> = level
        .mesh
        .vertices
        .iter()
        .map(|v| camera.to_camera(v))
        .collect();
    let mut tris = Vec::new();
    for (f, face) in level.mesh.faces.iter().enumerate() {
        let uv = level.atlas.uvs[f];
        let poly: Vec<ClipVertex> = (0..3)
            .map(|k| ClipVertex {
                cam: cam_vertices[face[k] as usize],
                uv: [uv[k][0] as f64, uv[k][1] as f64],
            })
            .collect();
        let clipped = if poly.iter().all(|v| -v.cam.z >= NEAR_PLANE) {
            poly
        } else {
            clip_near(&poly)
        };
        if clipped.len() < 3 {
            continue;
        }
        let proj: Vec<([f64; 2], f64, [f64; 2])> = clipped
            .iter()
            .map(|v| {
                let z = -v.cam.z;
                (
                    [i.cx + i.fx * v.cam.x / z, i.cy - i.fy * v.cam.y / z],
                    1.0 / z,
                    v.uv,
                )
            })
            .collect();
        for k in 1..proj.len() - 1 {
            let t = [proj[0], proj[k], proj[k + 1]];
            let xy = t.map(|p| p.0);
            let min = [
                xy.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
                xy.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
            ];
            let max = [
                xy.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
                xy.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
            ];
            if max[0] < 0.0
                || max[1] < 0.0
                || min[0] > camera.width() as f64
                || min[1] > camera.height() as f64
            {
                continue;
            }
            tris.push(ScreenTri {
                xy,
                inv_z: t.map(|p| p.1),
                uv: t.map(|p| p.2),
                face: f as u32,
                min,
                max,
            });
        }
    }
    tris
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left style ownership for pixels exactly on an edge, so shared edges are drawn once.
#[inline]
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

/// Rasterizes one baked block into `gbuffer`, keeping the nearest surviving fragment per pixel.
pub fn rasterize_block(
    level: &BakedLevel,
    block: u32,
    camera: &Camera,
    gbuffer: &mut GBuffer,
    dither: Dither,
) {
    let tris = setup(level, camera);
    let w = gbuffer.width as usize;
    let h = gbuffer.height as usize;
    let band_len = RASTER_TILE * w;
    let GBuffer {
        features,
        alpha,
        depth,
        face,
        block: block_ids,
        ..
    } = gbuffer;
    features
        .par_chunks_mut(band_len)
        .zip(alpha.par_chunks_mut(band_len))
        .zip(depth.par_chunks_mut(band_len))
        .zip(face.par_chunks_mut(band_len))
        .zip(block_ids.par_chunks_mut(band_len))
        .enumerate()
        .for_each(|(band, ((((feat, alp), dep), fac), blk))| {
            let y0 = band * RASTER_TILE;
            let y1 = (y0 + RASTER_TILE).min(h);
            for x0 in (0..w).step_by(RASTER_TILE) {
                let x1 = (x0 + RASTER_TILE).min(w);
                for tri in &tris {
                    if tri.max[0] < x0 as f64
                        || tri.min[0] > x1 as f64
                        || tri.max[1] < y0 as f64
                        || tri.min[1] > y1 as f64
                    {
                        continue;
                    }
                    let [a, b, c] = tri.xy;
                    let area = edge(a, b, c);
                    if area.abs() < 1e-14 {
                        continue;
                    }
                    let px0 = (tri.min[0].floor().max(x0 as f64)) as usize;
                    let px1 = ((tri.max[0].ceil() as i64).min(x1 as i64).max(0)) as usize;
                    let py0 = (tri.min[1].floor().max(y0 as f64)) as usize;
                    let py1 = ((tri.max[1].ceil() as i64).min(y1 as i64).max(0)) as usize;
                    let sign = area.signum();
                    let owns = [owns_edge(b, c), owns_edge(c, a), owns_edge(a, b)].map(|o| {
                        if sign > 0.0 {
                            o
                        } else {
                            !o
                        }
                    });
                    for py in py0..py1 {
                        for px in px0..px1 {
                            let p = [px as f64 + 0.5, py as f64 + 0.5];
                            let e = [
                                edge(b, c, p) * sign,
                                edge(c, a, p) * sign,
                                edge(a, b, p) * sign,
                            ];
                            if e.iter()
                                .zip(owns)
                                .any(|(&v, o)| v < 0.0 || (v == 0.0 && !o))
                            {
                                continue;
                            }
                            let l = e.map(|v| v / area.abs());
                            let inv_z =
                                l[0] * tri.inv_z[0] + l[1] * tri.inv_z[1] + l[2] * tri.inv_z[2];
                            let z = 1.0 / inv_z;
                            let local = (py - y0) * w + px;
                            if z >= dep[local] {
                                continue;
                            }
                            let pc = [0, 1, 2].map(|k| l[k] * tri.inv_z[k] * z);
                            let uv = [
                                pc[0] * tri.uv[0][0] + pc[1] * tri.uv[1][0] + pc[2] * tri.uv[2][0],
                                pc[0] * tri.uv[0][1] + pc[1] * tri.uv[1][1] + pc[2] * tri.uv[2][1],
                            ];
                            let s = sample_level(level, tri.face as usize, uv);
                            let a_s = s[FEATURE_CHANNELS];
                            if !fragment_survives(a_s, px as u32, py as u32, dither) {
                                continue;
                            }
                            dep[local] = z;
                            feat[local].copy_from_slice(&s[..FEATURE_CHANNELS]);
                            alp[local] = a_s;
                            fac[local] = tri.face;
                            blk[local] = block;
                        }
                    }
                }
            }
        });
}

/// Nine texture channels of `face` at normalized atlas coordinates `uv`.
pub fn sample_level(level: &BakedLevel, face: usize, uv: [f64; 2]) -> [f64; PLANES] {
    let slot = &level.atlas.slots[face];
    sample_slot(&level.pages[slot.page as usize], slot, uv)
}
