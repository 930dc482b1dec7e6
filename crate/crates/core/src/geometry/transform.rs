use serde::{Deserialize, Serialize};

use super::{Aabb, Mat3, OctahedralMeshGrid, Vec3};
use crate::error::{Error, Result};

/// Dataset frame to engine frame: `v -> scale * P v` with `P` a signed permutation.
///
/// The default maps an east/north/up dataset frame to an engine frame with +X east, +Y south,
/// +Z up, at 100 engine units per meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    /// Row-major signed permutation matrix.
    pub axes: [[f64; 3]; 3],
    pub scale: f64,
}

impl Default for GeoTransform {
    fn default() -> Self {
        Self {
            axes: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 100.0,
        }
    }
}

impl GeoTransform {
    pub fn identity() -> Self {
        Self {
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 1.0,
        }
    }

    pub fn new(axes: [[f64; 3]; 3], scale: f64) -> Result<Self> {
        let g = Self { axes, scale };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "geo transform scale {} must be positive",
                self.scale
            )));
        }
        let mut col_used = [false; 3];
        for row in &self.axes {
            let nonzero: Vec<usize> = (0..3).filter(|&c| row[c] != 0.0).collect();
            if nonzero.len() != 1 || row[nonzero[0]].abs() != 1.0 || col_used[nonzero[0]] {
                return Err(Error::Config(
                    "geo transform axes must form a signed permutation".into(),
                ));
            }
            col_used[nonzero[0]] = true;
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        let a = &self.axes;
        Mat3::new(
            a[0][0], a[0][1], a[0][2], a[1][0], a[1][1], a[1][2], a[2][0], a[2][1], a[2][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.matrix() * v * self.scale
    }

    /// Maps an engine-frame direction back to the dataset frame (scale drops out).
    pub fn inverse_direction(&self, d: &Vec3) -> Vec3 {
        self.matrix().transpose() * d
    }

    pub fn apply_aabb(&self, b: &Aabb) -> Aabb {
        let corners = b.corners().map(|c| self.apply(&c));
        Aabb::from_points(corners.iter()).expect("eight corners")
    }
}

/// Returns a copy of `mesh` with every vertex (and rest position) mapped through `g`.
pub fn apply_geo_transform(
    mesh: &OctahedralMeshGrid,
    g: &GeoTransform,
) -> Result<OctahedralMeshGrid> {
    g.validate()?;
    let mut out = mesh.clone();
    out.transform_in_place(g);
    Ok(out)
}

impl OctahedralMeshGrid {
    pub(crate) fn transform_in_place(&mut self, g: &GeoTransform) {
        self.transform_frame(|v| g.apply(v), g.apply_aabb(&self.spec().aabb));
    }
}
