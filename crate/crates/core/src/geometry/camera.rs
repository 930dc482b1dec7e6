use serde::{Deserialize, Serialize};

use super::{Mat3, Vec3};
use crate::error::{Error, Result};

/// A ray `o + t d` restricted to `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            t_min: 0.0,
            t_max: f64::INFINITY,
        }
    }

    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Self {
        self.t_min = t_min;
        self.t_max = t_max;
        self
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn is_valid(&self) -> bool {
        (self.direction.norm() - 1.0).abs() <= 1e-6 && self.t_min >= 0.0 && self.t_min < self.t_max
    }

    pub fn inv_direction(&self) -> Vec3 {
        Vec3::new(
            1.0 / self.direction.x,
            1.0 / self.direction.y,
            1.0 / self.direction.z,
        )
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, horizontal field of view in radians.
    pub fn from_fov(width: u32, height: u32, fov_x: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self {
            fx: f,
            fy: f,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
        }
    }
}

/// Pinhole camera. The camera frame looks down `-z` with `+y` up; pose is camera-to-world.
///
/// Pixel centers sit at half-integer coordinates, so pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: Mat3,
    pub position: Vec3,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, rotation: Mat3, position: Vec3) -> Result<Self> {
        let cam = Self {
            intrinsics,
            rotation,
            position,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`. `up` must not be parallel to the viewing direction.
    pub fn look_at(intrinsics: Intrinsics, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Argument(
                "look_at: up vector parallel to view direction".into(),
            ));
        }
        let right = right.normalize();
        let true_up = right.cross(&forward);
        let rotation = Mat3::from_columns(&[right, true_up, -forward]);
        Self::new(intrinsics, rotation, eye)
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.intrinsics;
        if !(i.fx > 0.0 && i.fy > 0.0) || i.width == 0 || i.height == 0 {
            return Err(Error::Argument(
                "camera intrinsics must have fx, fy > 0 and a non-empty image".into(),
            ));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(
                "camera rotation is not a proper rotation".into(),
            ));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("camera position is not finite".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2).into_owned()
    }

    /// 4x4 camera-to-world matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.position;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix(intrinsics: Intrinsics, m: &[[f64; 4]; 4]) -> Result<Self> {
        let rotation = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Self::new(intrinsics, rotation, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }

    /// Unit direction through continuous pixel coordinate `(px, py)`, without bounds checks.
    pub fn direction_unchecked(&self, px: f64, py: f64) -> Vec3 {
        let i = &self.intrinsics;
        let cam = Vec3::new((px - i.cx) / i.fx, -(py - i.cy) / i.fy, -1.0);
        (self.rotation * cam).normalize()
    }

    /// Back-projects a continuous pixel coordinate into a world ray.
    pub fn camera_ray(&self, px: f64, py: f64) -> Result<Ray> {
        let i = &self.intrinsics;
        if !(px >= 0.0 && py >= 0.0 && px <= i.width as f64 && py <= i.height as f64) {
            return Err(Error::Argument(format!(
                "pixel ({px}, {py}) outside the {}x{} image",
                i.width, i.height
            )));
        }
        Ok(Ray::new(self.position, self.direction_unchecked(px, py)))
    }

    /// Ray through the center of integer pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> Ray {
        Ray::new(
            self.position,
            self.direction_unchecked(x as f64 + 0.5, y as f64 + 0.5),
        )
    }

    /// World point to camera space (camera looks down -z).
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    /// Distance of `p` along the viewing axis; positive in front of the camera.
    pub fn view_depth(&self, p: &Vec3) -> f64 {
        -self.to_camera(p).z
    }

    /// Projects a world point to continuous pixel coordinates. `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        let depth = -c.z;
        if depth <= 1e-12 {
            return None;
        }
        let i = &self.intrinsics;
        Some((i.cx + i.fx * c.x / depth, i.cy - i.fy * c.y / depth))
    }
}
