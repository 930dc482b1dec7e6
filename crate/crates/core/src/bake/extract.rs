//! Visibility-driven face extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::FieldNetwork;
use crate::geometry::{Aabb, Camera, Intersection, OctahedralMeshGrid, Ray, Vec3};

/// Directional ray bundles cast over a block in addition to its training cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub zenith: bool,
    pub elevations_deg: Vec<f64>,
    pub azimuths: usize,
    /// Spacing of parallel rays in cells.
    pub spacing_cells: f64,
    pub include_cameras: bool,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            zenith: true,
            elevations_deg: vec![30.0, 60.0],
            azimuths: 16,
            spacing_cells: 0.5,
            include_cameras: true,
        }
    }
}

/// Parallel rays sharing one downward direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub direction: Vec3,
    pub origins: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct ViewSet {
    pub bundles: Vec<RayBundle>,
    pub cameras: Vec<Camera>,
}

impl ViewSet {
    pub fn ray_count(&self) -> usize {
        self.bundles.iter().map(|b| b.origins.len()).sum::<usize>()
            + self
                .cameras
                .iter()
                .map(|c| (c.width() * c.height()) as usize)
                .sum::<usize>()
    }

    /// Every ray of the set: bundles first, then camera pixels in row-major order.
    pub fn rays(&self) -> Vec<Ray> {
        let mut out = Vec::with_capacity(self.ray_count());
        for b in &self.bundles {
            out.extend(b.origins.iter().map(|o| Ray::new(*o, b.direction)));
        }
        for c in &self.cameras {
            for y in 0..c.height() {
                for x in 0..c.width() {
                    out.push(c.pixel_ray(x, y));
                }
            }
        }
        out
    }
}

/// Bundle directions: optional zenith, then each elevation ring counter-clockwise from +x.
pub fn bundle_directions(config: &ViewConfig) -> Vec<Vec3> {
    let mut dirs = Vec::new();
    if config.zenith {
        dirs.push(Vec3::new(0.0, 0.0, -1.0));
    }
    for &e in &config.elevations_deg {
        let e = e.to_radians();
        for k in 0..config.azimuths {
            let a = k as f64 * std::f64::consts::TAU / config.azimuths as f64;
            dirs.push(Vec3::new(-e.cos() * a.cos(), -e.cos() * a.sin(), -e.sin()));
        }
    }
    dirs
}

/// Ray bundles covering `aabb` plus the given cameras. Each bundle's origins form a grid on the
/// plane just above the box, spanning the box's shadow along the bundle direction.
pub fn generate_views(
    aabb: &Aabb,
    cell_size: Vec3,
    cameras: &[Camera],
    config: &ViewConfig,
) -> ViewSet {
    let top = aabb.max[2] + 1e-6 * (1.0 + aabb.max[2].abs());
    let (sx, sy) = (
        cell_size.x * config.spacing_cells,
        cell_size.y * config.spacing_cells,
    );
    let bundles = bundle_directions(config)
        .into_iter()
        .map(|d| {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for c in aabb.corners() {
                let s = (c.z - top) / d.z;
                let p = c - d * s;
                lo = [lo[0].min(p.x), lo[1].min(p.y)];
                hi = [hi[0].max(p.x), hi[1].max(p.y)];
            }
            let nx = ((hi[0] - lo[0]) / sx - 1e-9).ceil().max(0.0) as usize + 1;
            let ny = ((hi[1] - lo[1]) / sy - 1e-9).ceil().max(0.0) as usize + 1;
            let origins = (0..ny)
                .flat_map(|j| {
                    (0..nx)
                        .map(move |i| Vec3::new(lo[0] + i as f64 * sx, lo[1] + j as f64 * sy, top))
                })
                .collect();
            RayBundle {
                direction: d,
                origins,
            }
        })
        .collect();
    ViewSet {
        bundles,
        cameras: if config.include_cameras {
            cameras.to_vec()
        } else {
            Vec::new()
        },
    }
}

/// Per-face maximum observed opacity and hit count.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceStats {
    pub max_alpha: Vec<f64>,
    pub hits: Vec<u32>,
    /// Encoder queries spent gathering the statistics.
    pub evaluations: u64,
}

impl FaceStats {
    pub fn new(faces: usize) -> Self {
        Self {
            max_alpha: vec![0.0; faces],
            hits: vec![0; faces],
            evaluations: 0,
        }
    }

    pub fn record(&mut self, face: usize, alpha: f64) {
        self.max_alpha[face] = self.max_alpha[face].max(alpha.clamp(0.0, 1.0));
        self.hits[face] += 1;
    }

    pub fn merge(mut self, other: &FaceStats) -> Self {
        for (a, b) in self.max_alpha.iter_mut().zip(&other.max_alpha) {
            *a = a.max(*b);
        }
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        self.evaluations += other.evaluations;
        self
    }
}

/// Walks each ray's sorted hits, querying opacity, and stops after the hit that drops the
/// remaining transmittance below `stop`. Faces in cells whose `active` entry is false are
/// treated as empty. Returns the `(face, alpha)` pairs visited per ray.
pub fn walk_rays(
    mesh: &OctahedralMeshGrid,
    net: &FieldNetwork,
    rays: &[Ray],
    stop: f64,
    wave: usize,
    active: Option<&[bool]>,
) -> Vec<Vec<(u32, f64)>> {
    walk_rays_counted(mesh, net, rays, stop, wave, active).0
}

fn walk_rays_counted(
    mesh: &OctahedralMeshGrid,
    net: &FieldNetwork,
    rays: &[Ray],
    stop: f64,
    wave: usize,
    active: Option<&[bool]>,
) -> (Vec<Vec<(u32, f64)>>, u64) {
    let mut evaluations = 0u64;
    let hits: Vec<Vec<Intersection>> = rays
        .iter()
        .map(|r| {
            let mut h = Vec::new();
            mesh.intersect_into(r, usize::MAX, |c| active.map_or(true, |a| a[c]), &mut h);
            h
        })
        .collect();
    let mut trans = vec![1.0f64; rays.len()];
    let mut next = vec![0usize; rays.len()];
    let mut done: Vec<bool> = hits.iter().map(|h| h.is_empty()).collect();
    let mut visited: Vec<Vec<(u32, f64)>> = vec![Vec::new(); rays.len()];
    loop {
        let mut owners = Vec::new();
        let mut points = Vec::new();
        for r in 0..rays.len() {
            if done[r] {
                continue;
            }
            for h in &hits[r][next[r]..(next[r] + wave).min(hits[r].len())] {
                owners.push((r, h.face));
                points.push(h.point);
            }
        }
        if points.is_empty() {
            break;
        }
        evaluations += points.len() as u64;
        let out = net.encode_batch(&points);
        for (&(r, face), s) in owners.iter().zip(&out) {
            if done[r] {
                continue;
            }
            visited[r].push((face, s.alpha));
            next[r] += 1;
            trans[r] *= 1.0 - s.alpha;
            if trans[r] < stop || next[r] >= hits[r].len() {
                done[r] = true;
            }
        }
    }
    (visited, evaluations)
}

/// Records opacity statistics for every face reached by the views, skipping inactive cells.
pub fn accumulate_face_stats(
    mesh: &OctahedralMeshGrid,
    net: &FieldNetwork,
    views: &ViewSet,
    stop: f64,
    active: Option<&[bool]>,
) -> FaceStats {
    let rays = views.rays();
    rays.par_chunks(1024)
        .map(|chunk| {
            let mut stats = FaceStats::new(mesh.face_count());
            let (visited, evaluations) = walk_rays_counted(mesh, net, chunk, stop, 16, active);
            stats.evaluations = evaluations;
            for list in visited {
                for (f, a) in list {
                    stats.record(f as usize, a);
                }
            }
            stats
        })
        .reduce(|| FaceStats::new(mesh.face_count()), |a, b| a.merge(&b))
}

/// Retained faces with compact vertex indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractedMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Index of each retained face in the source mesh.
    pub source_faces: Vec<u32>,
    /// Retained fraction of the source faces.
    pub retention: f64,
}

/// Keeps faces with at least one hit and maximum opacity at least `threshold`.
pub fn extract_faces(
    mesh: &OctahedralMeshGrid,
    stats: &FaceStats,
    threshold: f64,
) -> ExtractedMesh {
    let mut remap = vec![u32::MAX; mesh.vertices().len()];
    let mut out = ExtractedMesh::default();
    for (f, face) in mesh.faces().iter().enumerate() {
        if stats.hits[f] == 0 || stats.max_alpha[f] < threshold {
            continue;
        }
        let mapped = face.map(|v| {
            let slot = &mut remap[v as usize];
            if *slot == u32::MAX {
                *slot = out.vertices.len() as u32;
                out.vertices.push(mesh.vertices()[v as usize]);
            }
            *slot
        });
        out.faces.push(mapped);
        out.source_faces.push(f as u32);
    }
    out.retention = if mesh.face_count() == 0 {
        0.0
    } else {
        out.faces.len() as f64 / mesh.face_count() as f64
    };
    out
}
