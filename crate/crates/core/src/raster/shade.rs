use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{sh_encode_unchecked, FieldNetwork};
use crate::geometry::Camera;
use crate::imaging::RgbImage;

use super::rasterize::GBuffer;

/// Decodes every covered pixel with its block's decoder; uncovered pixels get `background`.
pub fn neural_shade<'a>(
    gbuffer: &GBuffer,
    camera: &Camera,
    decoder_for: impl Fn(u32) -> Option<&'a FieldNetwork> + Sync,
    background: [f64; 3],
) -> RgbImage {
    let w = gbuffer.width;
    let data = (0..gbuffer.face.len())
        .into_par_iter()
        .map(|i| {
            if !gbuffer.is_covered(i) {
                return background;
            }
            let Some(net) = decoder_for(gbuffer.block[i]) else {
                return background;
            };
            let (x, y) = (i as u32 % w, i as u32 / w);
            let dir = camera.pixel_ray(x, y).direction;
            net.decoder_forward(&gbuffer.features[i], &sh_encode_unchecked(&dir))
        })
        .collect();
    RgbImage {
        width: w,
        height: gbuffer.height,
        data,
    }
}

/// Per-pixel mean of equally sized frames.
pub fn temporal_accumulate(frames: &[RgbImage]) -> Result<RgbImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("no frames to accumulate".into()))?;
    if frames.iter().any(|f| !f.same_size(first)) {
        return Err(Error::Argument("frames differ in size".into()));
    }
    let n = frames.len() as f64;
    let mut out = RgbImage::new(first.width, first.height, [0.0; 3]);
    for f in frames {
        for (o, c) in out.data.iter_mut().zip(&f.data) {
            for k in 0..3 {
                o[k] += c[k];
            }
        }
    }
    for (i, o) in out.data.iter_mut().enumerate() {
        let c0 = first.data[i];
        *o = if frames.iter().all(|f| f.data[i] == c0) {
            c0
        } else {
            o.map(|v| v / n)
        };
    }
    Ok(out)
}
