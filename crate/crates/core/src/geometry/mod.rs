//! Lattices, octahedral meshes, rays, cameras and frame transforms.

mod bvh;
mod camera;
mod dda;
mod intersect;
mod octahedral;
mod transform;

pub use bvh::TriangleBvh;
pub use camera::{Camera, Intrinsics, Ray};
pub use dda::traverse_grid;
pub use intersect::{finalize_hits, intersect_triangle, Intersection, TriangleHit, EDGE_DEDUP_EPS};
pub use octahedral::{
    build_octahedral_grid, GridSpec, OctahedralMeshGrid, FACES_PER_CELL, LOD_RESOLUTIONS,
};
pub use transform::{apply_geo_transform, GeoTransform};

use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Axis-aligned bounding box in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb::new([first.x, first.y, first.z], [first.x, first.y, first.z]);
        for p in it {
            b.grow(p);
        }
        Some(b)
    }

    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    /// True when `min < max` on every axis.
    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| {
            self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a]
        })
    }

    pub fn min_v(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_v(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max_v() - self.min_v()
    }

    pub fn center(&self) -> Vec3 {
        (self.min_v() + self.max_v()) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn grow(&mut self, p: &Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].min(other.min[a]);
            out.max[a] = out.max[a].max(other.max[a]);
        }
        out
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { self.min[0] } else { self.max[0] },
                if i & 2 == 0 { self.min[1] } else { self.max[1] },
                if i & 4 == 0 { self.min[2] } else { self.max[2] },
            )
        })
    }

    /// Maps a world point to `[0,1]^3` box coordinates (unclamped).
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        let e = self.extent();
        Vec3::new(
            (p.x - self.min[0]) / e.x,
            (p.y - self.min[1]) / e.y,
            (p.z - self.min[2]) / e.z,
        )
    }

    /// Slab test. Returns the clipped parametric interval `[t0, t1]` if the ray overlaps the box.
    pub fn ray_interval(
        &self,
        origin: &Vec3,
        inv_dir: &Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<(f64, f64)> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN appears for a zero direction component with the origin on the slab plane.
            if near.is_nan() || far.is_nan() {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    pub fn dilate(&self, amount: f64) -> Aabb {
        Aabb::new(
            [
                self.min[0] - amount,
                self.min[1] - amount,
                self.min[2] - amount,
            ],
            [
                self.max[0] + amount,
                self.max[1] + amount,
                self.max[2] + amount,
            ],
        )
    }
}
