//! Ray-cast renderer over baked assets, used as the rasterizer's oracle.

use rayon::prelude::*;

use crate::bake::BakedLevel;
use crate::field::{sh_encode_unchecked, FieldNetwork, FEATURE_CHANNELS};
use crate::geometry::{Camera, Ray, TriangleBvh};
use crate::imaging::RgbImage;

use super::rasterize::sample_level;

/// One block's assets as seen by the reference renderer.
pub struct ReferenceBlock<'a> {
    pub level: &'a BakedLevel,
    pub network: &'a FieldNetwork,
    bvh: TriangleBvh,
}

impl<'a> ReferenceBlock<'a> {
    pub fn new(level: &'a BakedLevel, network: &'a FieldNetwork) -> Self {
        Self {
            bvh: TriangleBvh::build(&level.mesh.vertices, &level.mesh.faces),
            level,
            network,
        }
    }

    /// Nearest hit whose sampled opacity is at least one half: `(t, face, texture sample)`.
    pub fn first_opaque(&self, ray: &Ray) -> Option<(f64, usize, [f64; 9])> {
        let mesh = &self.level.mesh;
        for hit in self
            .bvh
            .intersect(&mesh.vertices, &mesh.faces, ray, usize::MAX)
        {
            let f = hit.face as usize;
            let uv = self.level.atlas.uvs[f];
            let b = hit.barycentric;
            let p = [0, 1]
                .map(|a| b[0] * uv[0][a] as f64 + b[1] * uv[1][a] as f64 + b[2] * uv[2][a] as f64);
            let s = sample_level(self.level, f, p);
            if s[FEATURE_CHANNELS] >= 0.5 {
                return Some((hit.t, f, s));
            }
        }
        None
    }
}

/// Per-pixel nearest opaque surface across blocks, shaded by that block's decoder.
pub fn raycast_reference(
    blocks: &[ReferenceBlock<'_>],
    camera: &Camera,
    background: [f64; 3],
) -> RgbImage {
    let (w, h) = (camera.width(), camera.height());
    let data = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = camera.pixel_ray(i % w, i / w);
            let mut best: Option<(f64, usize, [f64; 9])> = None;
            for (b, block) in blocks.iter().enumerate() {
                if let Some((t, _, s)) = block.first_opaque(&ray) {
                    if best.map_or(true, |(bt, _, _)| t < bt) {
                        best = Some((t, b, s));
                    }
                }
            }
            match best {
                Some((_, b, s)) => {
                    let mut feat = [0.0; FEATURE_CHANNELS];
                    feat.copy_from_slice(&s[..FEATURE_CHANNELS]);
                    blocks[b]
                        .network
                        .decoder_forward(&feat, &sh_encode_unchecked(&ray.direction))
                }
                None => background,
            }
        })
        .collect();
    RgbImage {
        width: w,
        height: h,
        data,
    }
}
