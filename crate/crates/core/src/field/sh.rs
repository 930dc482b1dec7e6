use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const SH_COEFFS: usize = 9;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2A: f64 = 1.092_548_430_592_079_2;
const C2B: f64 = 0.315_391_565_252_520_05;
const C2C: f64 = 0.546_274_215_296_039_6;

/// Real spherical harmonics of degree 0..=2, ordered
/// `Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22`, without the Condon–Shortley phase.
pub fn sh_encode(d: &Vec3) -> Result<[f64; SH_COEFFS]> {
    let n = d.norm();
    if !((n - 1.0).abs() <= 1e-6) {
        return Err(Error::Argument(format!(
            "sh_encode needs a unit direction, got norm {n}"
        )));
    }
    Ok(sh_encode_unchecked(d))
}

#[inline]
pub fn sh_encode_unchecked(d: &Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2A * x * y,
        C2A * y * z,
        C2B * (3.0 * z * z - 1.0),
        C2A * x * z,
        C2C * (x * x - y * y),
    ]
}
