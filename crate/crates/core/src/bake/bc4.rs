//! BC4 single-channel block compression.
//!
//! A block covers 4×4 texels in 8 bytes: endpoints `e0`, `e1`, then sixteen 3-bit palette
//! indices packed little-endian with texel 0 in the lowest bits. `e0 > e1` selects the
//! eight-value palette; otherwise six interpolated values plus 0 and 255.

use crate::error::{Error, Result};

pub const BLOCK_BYTES: usize = 8;

/// Palette for endpoints `(e0, e1)`.
pub fn palette(e0: u8, e1: u8) -> [u8; 8] {
    let (a, b) = (e0 as u32, e1 as u32);
    let mut p = [0u8; 8];
    p[0] = e0;
    p[1] = e1;
    if a > b {
        for k in 1..=6u32 {
            p[k as usize + 1] = (((7 - k) * a + k * b + 3) / 7) as u8;
        }
    } else {
        for k in 1..=4u32 {
            p[k as usize + 1] = (((5 - k) * a + k * b + 2) / 5) as u8;
        }
        p[6] = 0;
        p[7] = 255;
    }
    p
}

pub fn decode_block(block: &[u8; 8]) -> [u8; 16] {
    let p = palette(block[0], block[1]);
    let mut bits = 0u64;
    for (i, &b) in block[2..].iter().enumerate() {
        bits |= (b as u64) << (8 * i);
    }
    let mut out = [0u8; 16];
    for (t, o) in out.iter_mut().enumerate() {
        *o = p[((bits >> (3 * t)) & 7) as usize];
    }
    out
}

/// Encodes with the given endpoints, choosing the nearest palette entry per texel.
/// Returns the block, its maximum absolute error and its squared error sum.
pub fn encode_with_endpoints(texels: &[u8; 16], e0: u8, e1: u8) -> ([u8; 8], u32, u32) {
    let p = palette(e0, e1);
    let mut bits = 0u64;
    let mut max_err = 0;
    let mut sse = 0;
    for (t, &v) in texels.iter().enumerate() {
        let mut best = 0usize;
        let mut best_err = u32::MAX;
        for (i, &q) in p.iter().enumerate() {
            let e = (v as i32 - q as i32).unsigned_abs();
            if e < best_err {
                best = i;
                best_err = e;
            }
        }
        bits |= (best as u64) << (3 * t);
        max_err = max_err.max(best_err);
        sse += best_err * best_err;
    }
    let mut block = [0u8; 8];
    block[0] = e0;
    block[1] = e1;
    for i in 0..6 {
        block[2 + i] = (bits >> (8 * i)) as u8;
    }
    (block, max_err, sse)
}

/// Endpoints `(max, min)` with nearest-index assignment: the baseline every block must match or beat.
pub fn naive_encode_block(texels: &[u8; 16]) -> [u8; 8] {
    let lo = *texels.iter().min().expect("16 texels");
    let hi = *texels.iter().max().expect("16 texels");
    encode_with_endpoints(texels, hi, lo).0
}

const SEARCH_RADIUS: i32 = 3;

/// Minimizes the maximum error (then the squared error) over endpoint pairs near the texel
/// range in both palette modes, always including the naive pair.
pub fn encode_block(texels: &[u8; 16]) -> [u8; 8] {
    let lo = *texels.iter().min().expect("16 texels") as i32;
    let hi = *texels.iter().max().expect("16 texels") as i32;
    let mut best = encode_with_endpoints(texels, hi as u8, lo as u8);
    if best.1 == 0 {
        return best.0;
    }
    let consider = |e0: i32, e1: i32, best: &mut ([u8; 8], u32, u32)| {
        let cand = encode_with_endpoints(texels, e0 as u8, e1 as u8);
        if (cand.1, cand.2) < (best.1, best.2) {
            *best = cand;
        }
    };
    for d0 in -SEARCH_RADIUS..=SEARCH_RADIUS {
        for d1 in -SEARCH_RADIUS..=SEARCH_RADIUS {
            let (e0, e1) = ((hi + d0).clamp(0, 255), (lo + d1).clamp(0, 255));
            if e0 > e1 {
                consider(e0, e1, &mut best);
            }
        }
    }
    let inner: Vec<i32> = texels
        .iter()
        .filter(|&&v| v != 0 && v != 255)
        .map(|&v| v as i32)
        .collect();
    if let (Some(&ilo), Some(&ihi)) = (inner.iter().min(), inner.iter().max()) {
        for d0 in -SEARCH_RADIUS..=SEARCH_RADIUS {
            for d1 in -SEARCH_RADIUS..=SEARCH_RADIUS {
                let (e0, e1) = ((ilo + d0).clamp(0, 255), (ihi + d1).clamp(0, 255));
                if e0 <= e1 {
                    consider(e0, e1, &mut best);
                }
            }
        }
    } else {
        consider(0, 0, &mut best);
    }
    best.0
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0 {
        return Err(Error::Argument(format!(
            "BC4 planes need dimensions divisible by 4, got {width}x{height}"
        )));
    }
    Ok(())
}

fn gather(plane: &[u8], width: usize, bx: usize, by: usize) -> [u8; 16] {
    let mut t = [0u8; 16];
    for y in 0..4 {
        for x in 0..4 {
            t[y * 4 + x] = plane[(by * 4 + y) * width + bx * 4 + x];
        }
    }
    t
}

/// Compresses a row-major plane; blocks are stored row-major.
pub fn bc4_encode(plane: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    check_dims(width, height)?;
    if plane.len() != width * height {
        return Err(Error::Argument(format!(
            "plane holds {} texels, expected {}",
            plane.len(),
            width * height
        )));
    }
    let (bw, bh) = (width / 4, height / 4);
    let mut out = Vec::with_capacity(bw * bh * BLOCK_BYTES);
    for by in 0..bh {
        for bx in 0..bw {
            let texels = gather(plane, width, bx, by);
            if texels.iter().all(|&v| v == texels[0]) {
                let v = texels[0];
                out.extend_from_slice(&[v, v, 0, 0, 0, 0, 0, 0]);
            } else {
                out.extend_from_slice(&encode_block(&texels));
            }
        }
    }
    Ok(out)
}

pub fn bc4_decode(data: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    check_dims(width, height)?;
    let (bw, bh) = (width / 4, height / 4);
    if data.len() != bw * bh * BLOCK_BYTES {
        return Err(Error::Argument(format!(
            "BC4 payload is {} bytes, expected {} for {width}x{height}",
            data.len(),
            bw * bh * BLOCK_BYTES
        )));
    }
    let mut plane = vec![0u8; width * height];
    for (b, chunk) in data.chunks_exact(BLOCK_BYTES).enumerate() {
        let (bx, by) = (b % bw, b / bw);
        let texels = decode_block(chunk.try_into().expect("8-byte chunk"));
        for y in 0..4 {
            plane[(by * 4 + y) * width + bx * 4..][..4].copy_from_slice(&texels[y * 4..y * 4 + 4]);
        }
    }
    Ok(plane)
}

fn block_error(texels: &[u8; 16], block: &[u8; 8]) -> (u32, u32) {
    let d = decode_block(block);
    let mut max = 0;
    let mut sse = 0;
    for (a, b) in texels.iter().zip(d) {
        let e = (*a as i32 - b as i32).unsigned_abs();
        max = max.max(e);
        sse += e * e;
    }
    (max, sse)
}

/// Maximum absolute and summed squared error of a block's reconstruction.
pub fn encoding_error(texels: &[u8; 16], block: &[u8; 8]) -> (u32, u32) {
    block_error(texels, block)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_two_valued() {
        for v in [0u8, 1, 128, 254, 255] {
            let t = [v; 16];
            assert_eq!(decode_block(&encode_block(&t)), t);
        }
        let mut t = [51u8; 16];
        for i in (0..16).step_by(3) {
            t[i] = 204;
        }
        assert_eq!(decode_block(&encode_block(&t)), t);
    }

    #[test]
    fn ramp_error() {
        let t: [u8; 16] = std::array::from_fn(|i| (i * 17) as u8);
        let (max, _) = encoding_error(&t, &encode_block(&t));
        assert!(max <= 19, "max error {max}");
    }

    #[test]
    fn palette_modes() {
        assert_eq!(palette(255, 0), [255, 0, 219, 182, 146, 109, 73, 36]);
        assert_eq!(palette(0, 255), [0, 255, 51, 102, 153, 204, 0, 255]);
    }

    #[test]
    fn plane_round_trip_and_size() {
        let (w, h) = (8, 12);
        let plane: Vec<u8> = (0..w * h).map(|i| ((i * 37) % 7 * 30) as u8).collect();
        let enc = bc4_encode(&plane, w, h).unwrap();
        assert_eq!(enc.len(), (w / 4) * (h / 4) * 8);
        let dec = bc4_decode(&enc, w, h).unwrap();
        assert_eq!(dec.len(), plane.len());
        assert!(bc4_encode(&plane, 6, 16).is_err());
        assert!(bc4_decode(&enc[1..], w, h).is_err());
    }
}
