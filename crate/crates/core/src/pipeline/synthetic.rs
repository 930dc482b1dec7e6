//! Procedural test scene with an exact ray tracer: a checkered ground, two boxes and a
//! half-transparent slab over a black background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera, Intrinsics, Ray, Vec3};
use crate::imaging::RgbImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_views: usize,
    pub holdout_views: usize,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub orbit_radius: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub sfm_points: usize,
    /// Bound on the distance between an SfM point and the true surface point it came from.
    pub sfm_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_views: 20,
            holdout_views: 5,
            width: 128,
            height: 128,
            fov_deg: 50.0,
            orbit_radius: 3.0,
            min_elevation_deg: 35.0,
            max_elevation_deg: 65.0,
            sfm_points: 2000,
            sfm_sigma: 0.02,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_views == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config(
                "synthetic scene needs at least one view and a non-empty image".into(),
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.orbit_radius > 1.5) {
            return Err(Error::Config(
                "field of view must lie in (0,180) and the orbit radius exceed 1.5".into(),
            ));
        }
        if !(0.0..=89.0).contains(&self.min_elevation_deg)
            || self.max_elevation_deg < self.min_elevation_deg
            || self.max_elevation_deg > 89.0
        {
            return Err(Error::Config(
                "elevations must satisfy 0 <= min <= max <= 89 degrees".into(),
            ));
        }
        if !(self.sfm_sigma >= 0.0 && self.sfm_sigma.is_finite()) {
            return Err(Error::Config(
                "sfm_sigma must be a non-negative number".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box with a flat albedo, shaded by face orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub bounds: Aabb,
    pub albedo: [f64; 3],
}

/// Horizontal rectangle of constant color and opacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub z: f64,
    pub color: [f64; 3],
    pub alpha: f64,
}

/// What a ray sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceResult {
    pub color: [f64; 3],
    /// Distance to the first opaque surface.
    pub depth: Option<f64>,
    pub position: Option<Vec3>,
    /// The slab lies in front of the opaque hit (or in front of the background).
    pub through_slab: bool,
}

/// A sparse reconstructed point and the training views that observe it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmPoint {
    pub position: [f64; 3],
    pub views: Vec<u32>,
}

pub const GROUND_HALF_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    pub boxes: Vec<SceneBox>,
    pub slab: Slab,
}

impl SyntheticScene {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            boxes: vec![
                SceneBox {
                    bounds: Aabb::new([-0.6, -0.5, 0.0], [-0.2, -0.1, 0.4]),
                    albedo: [0.85, 0.35, 0.2],
                },
                SceneBox {
                    bounds: Aabb::new([0.2, 0.15, 0.0], [0.65, 0.6, 0.25]),
                    albedo: [0.25, 0.4, 0.85],
                },
            ],
            slab: Slab {
                min: [0.05, -0.75],
                max: [0.7, -0.25],
                z: 0.5,
                color: [0.95, 0.9, 0.25],
                alpha: 0.5,
            },
        })
    }

    /// Region holding all geometry, padded so that the padding is empty space.
    pub fn bounds(&self) -> Aabb {
        Aabb::new([-1.25, -1.25, -0.28125], [1.25, 1.25, 0.71875])
    }

    pub fn ground_color(x: f64, y: f64) -> [f64; 3] {
        let cx = ((x + GROUND_HALF_WIDTH) / 0.25).floor() as i64;
        let cy = ((y + GROUND_HALF_WIDTH) / 0.25).floor() as i64;
        let base = if (cx + cy).rem_euclid(2) == 0 {
            [0.85, 0.8, 0.7]
        } else {
            [0.3, 0.5, 0.3]
        };
        let m = 0.85 + 0.15 * (3.0 * x).sin() * (2.0 * y).cos();
        base.map(|c| c * m)
    }

    fn opaque_hit(&self, ray: &Ray) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        if ray.direction.z.abs() > 1e-12 {
            let t = -ray.origin.z / ray.direction.z;
            if t > ray.t_min && t < ray.t_max {
                let p = ray.at(t);
                if p.x.abs() <= GROUND_HALF_WIDTH && p.y.abs() <= GROUND_HALF_WIDTH {
                    best = Some((t, Self::ground_color(p.x, p.y)));
                }
            }
        }
        let inv = ray.inv_direction();
        for b in &self.boxes {
            if let Some((t0, _)) = b
                .bounds
                .ray_interval(&ray.origin, &inv, ray.t_min, ray.t_max)
            {
                if best.map_or(true, |(bt, _)| t0 < bt) {
                    let p = ray.at(t0);
                    let shade = box_shade(&b.bounds, &p);
                    best = Some((t0, b.albedo.map(|c| c * shade)));
                }
            }
        }
        best
    }

    fn slab_hit(&self, ray: &Ray) -> Option<f64> {
        if ray.direction.z.abs() < 1e-12 {
            return None;
        }
        let t = (self.slab.z - ray.origin.z) / ray.direction.z;
        if t <= ray.t_min || t >= ray.t_max {
            return None;
        }
        let p = ray.at(t);
        let s = &self.slab;
        (p.x >= s.min[0] && p.x <= s.max[0] && p.y >= s.min[1] && p.y <= s.max[1]).then_some(t)
    }

    pub fn trace(&self, ray: &Ray) -> TraceResult {
        let opaque = self.opaque_hit(ray);
        let behind = opaque.map_or([0.0; 3], |(_, c)| c);
        let slab = self
            .slab_hit(ray)
            .filter(|&ts| opaque.map_or(true, |(t, _)| ts < t));
        let color = match slab {
            Some(_) => {
                let a = self.slab.alpha;
                [0, 1, 2].map(|k| a * self.slab.color[k] + (1.0 - a) * behind[k])
            }
            None => behind,
        };
        TraceResult {
            color,
            depth: opaque.map(|(t, _)| t),
            position: opaque.map(|(t, _)| ray.at(t)),
            through_slab: slab.is_some(),
        }
    }

    fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(
            self.spec.width,
            self.spec.height,
            self.spec.fov_deg.to_radians(),
        )
    }

    fn orbit_camera(&self, azimuth: f64, elevation: f64) -> Camera {
        let r = self.spec.orbit_radius;
        let eye = Vec3::new(
            r * elevation.cos() * azimuth.cos(),
            r * elevation.cos() * azimuth.sin(),
            r * elevation.sin(),
        );
        Camera::look_at(self.intrinsics(), eye, Vec3::new(0.0, 0.0, 0.15), Vec3::z())
            .expect("orbit camera is valid")
    }

    /// Training cameras on an orbit with seeded azimuth jitter and alternating elevations.
    pub fn train_cameras(&self) -> Vec<Camera> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let n = self.spec.train_views;
        (0..n)
            .map(|i| {
                let step = std::f64::consts::TAU / n as f64;
                let azimuth = i as f64 * step + rng.gen_range(-0.2..0.2) * step;
                let f = if n == 1 { 0.5 } else { (i % 3) as f64 / 2.0 };
                let elevation = self.spec.min_elevation_deg
                    + f * (self.spec.max_elevation_deg - self.spec.min_elevation_deg);
                self.orbit_camera(azimuth, elevation.to_radians())
            })
            .collect()
    }

    /// Held-out cameras between the training azimuths at intermediate elevations.
    pub fn holdout_cameras(&self) -> Vec<Camera> {
        let n = self.spec.holdout_views;
        (0..n)
            .map(|i| {
                let azimuth = (i as f64 + 0.37) * std::f64::consts::TAU / n as f64;
                let elevation = 0.5 * (self.spec.min_elevation_deg + self.spec.max_elevation_deg)
                    + if i % 2 == 0 { 5.0 } else { -5.0 };
                self.orbit_camera(azimuth, elevation.clamp(0.0, 89.0).to_radians())
            })
            .collect()
    }

    /// Color image and per-pixel opaque depth (infinite where the background shows).
    pub fn render(&self, camera: &Camera) -> (RgbImage, Vec<f64>) {
        let (w, h) = (camera.width(), camera.height());
        let mut depth = Vec::with_capacity((w * h) as usize);
        let image = RgbImage::from_fn(w, h, |x, y| {
            let r = self.trace(&camera.pixel_ray(x, y));
            depth.push(r.depth.unwrap_or(f64::INFINITY));
            r.color
        });
        (image.quantized(), depth)
    }

    /// Samples surface points seen by training pixels and perturbs each by at most `sfm_sigma`.
    ///
    /// Every component is offset uniformly within `sigma / sqrt(3)`, so the displacement norm
    /// never exceeds `sigma`. A point lists each training view whose pixel ray through the clean
    /// point reaches it unobstructed and not behind the slab.
    pub fn sfm_points(&self, cameras: &[Camera]) -> Vec<SfmPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x5f3d_11aa);
        let bound = self.spec.sfm_sigma / 3f64.sqrt();
        let mut out = Vec::with_capacity(self.spec.sfm_points);
        let mut attempts = 0;
        while out.len() < self.spec.sfm_points && attempts < self.spec.sfm_points * 50 {
            attempts += 1;
            let cam = &cameras[rng.gen_range(0..cameras.len())];
            let x = rng.gen_range(0..cam.width());
            let y = rng.gen_range(0..cam.height());
            let hit = self.trace(&cam.pixel_ray(x, y));
            let Some(p) = hit.position.filter(|_| !hit.through_slab) else {
                continue;
            };
            let views: Vec<u32> = cameras
                .iter()
                .enumerate()
                .filter(|(_, c)| self.observes(c, &p))
                .map(|(i, _)| i as u32)
                .collect();
            if views.is_empty() {
                continue;
            }
            let unit = Vec3::new(
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
            );
            let q = p + unit * bound;
            out.push(SfmPoint {
                position: [q.x, q.y, q.z],
                views,
            });
        }
        out
    }

    fn observes(&self, cam: &Camera, p: &Vec3) -> bool {
        let Some((u, v)) = cam.project(p) else {
            return false;
        };
        if u < 0.0 || v < 0.0 || u >= cam.width() as f64 || v >= cam.height() as f64 {
            return false;
        }
        let d = p - cam.position;
        let dist = d.norm();
        let ray = Ray::new(cam.position, d);
        let hit = self.trace(&ray);
        !hit.through_slab
            && hit
                .depth
                .is_some_and(|t| (t - dist).abs() < 1e-6 * dist.max(1.0))
    }
}

fn box_shade(b: &Aabb, p: &Vec3) -> f64 {
    let eps = 1e-9;
    if (p.z - b.max[2]).abs() < eps {
        1.0
    } else if (p.x - b.min[0]).abs() < eps || (p.x - b.max[0]).abs() < eps {
        0.8
    } else if (p.y - b.min[1]).abs() < eps || (p.y - b.max[1]).abs() < eps {
        0.65
    } else {
        0.5
    }
}

/// Per-pixel depth targets for one view: each observing SfM point projects to the nearest pixel
/// and contributes its distance from the camera center.
pub fn depth_targets(points: &[SfmPoint], view: u32, camera: &Camera) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64)> = Vec::new();
    for p in points.iter().filter(|p| p.views.contains(&view)) {
        let q = Vec3::from(p.position);
        let Some((u, v)) = camera.project(&q) else {
            continue;
        };
        if u < 0.0 || v < 0.0 || u >= camera.width() as f64 || v >= camera.height() as f64 {
            continue;
        }
        let pixel = v.floor() as u32 * camera.width() + u.floor() as u32;
        out.push((pixel, (q - camera.position).norm()));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out.dedup_by_key(|e| e.0);
    out
}
