use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera};

/// Altitude thresholds that switch between LOD levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelPolicy {
    /// Thresholds as multiples of the block height, ascending.
    pub height_multiples: [f64; 4],
    /// Relative half-width of the band around each threshold inside which the level is kept.
    pub hysteresis: f64,
}

impl Default for LevelPolicy {
    fn default() -> Self {
        Self {
            height_multiples: [1.0, 2.0, 4.0, 8.0],
            hysteresis: 0.05,
        }
    }
}

impl LevelPolicy {
    pub fn validate(&self) -> Result<()> {
        let m = &self.height_multiples;
        if !(m[0] > 0.0) || m.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!(
                "level thresholds must be positive and strictly increasing, got {m:?}"
            )));
        }
        if !(0.0..0.5).contains(&self.hysteresis) {
            return Err(Error::Config("hysteresis must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Absolute altitude thresholds for a block.
    pub fn thresholds(&self, aabb: &Aabb) -> [f64; 4] {
        let h = aabb.extent().z;
        self.height_multiples.map(|m| m * h)
    }
}

/// Camera height above the block's top face, never negative.
pub fn altitude(camera: &Camera, aabb: &Aabb) -> f64 {
    (camera.position.z - aabb.max[2]).max(0.0)
}

/// Level (1..=5) for altitude `a`: one plus the number of thresholds at or below `a`.
pub fn level_for_altitude(a: f64, thresholds: &[f64; 4]) -> usize {
    1 + thresholds.iter().filter(|&&h| h <= a).count()
}

/// Level for `camera` over `aabb`. With a `previous` level, the level only rises once the
/// altitude clears a threshold by the hysteresis margin and only falls once it drops below it
/// by the same margin.
pub fn select_level(
    camera: &Camera,
    aabb: &Aabb,
    policy: &LevelPolicy,
    previous: Option<usize>,
) -> usize {
    let a = altitude(camera, aabb);
    let th = policy.thresholds(aabb);
    let Some(prev) = previous else {
        return level_for_altitude(a, &th);
    };
    let up = 1 + th
        .iter()
        .filter(|&&h| a >= h * (1.0 + policy.hysteresis))
        .count();
    let down = 1 + th
        .iter()
        .filter(|&&h| a >= h * (1.0 - policy.hysteresis))
        .count();
    prev.clamp(up, down)
}
