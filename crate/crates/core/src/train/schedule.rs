//! Epoch schedules of the opacity threshold `f` and the part-1 weight `beta`.

use super::config::TrainConfig;

/// Opacity threshold used by the renormalized composite at `epoch`, with default constants.
pub fn threshold_f(epoch: u64) -> f64 {
    Schedule::default().threshold_f(epoch)
}

/// Weight of the plain composite loss at `epoch`, with default constants.
pub fn beta(epoch: u64) -> f64 {
    Schedule::default().beta(epoch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub phase_epochs: u64,
    pub f_cap: f64,
    pub f_coefficient: f64,
    pub beta_base: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            phase_epochs: 10_000,
            f_cap: 0.3,
            f_coefficient: 0.012,
            beta_base: 0.8,
        }
    }
}

impl Schedule {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            phase_epochs: c.phase_epochs,
            f_cap: c.f_cap,
            f_coefficient: c.f_coefficient,
            beta_base: c.beta_base,
        }
    }

    pub fn threshold_f(&self, epoch: u64) -> f64 {
        if epoch < self.phase_epochs {
            return 0.0;
        }
        let k = ((epoch - self.phase_epochs) / self.phase_epochs) as f64;
        (k * k * self.f_coefficient).min(self.f_cap)
    }

    pub fn beta(&self, epoch: u64) -> f64 {
        self.beta_base.powi((epoch / self.phase_epochs) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(threshold_f(0), 0.0);
        assert_eq!(threshold_f(9_999), 0.0);
        assert_eq!(threshold_f(19_999), 0.0);
        assert!((threshold_f(30_000) - 0.048).abs() < 1e-12);
        assert!((threshold_f(60_000) - 0.3).abs() < 1e-12);
        assert_eq!(threshold_f(80_000), 0.3);
        assert_eq!(beta(0), 1.0);
        assert!((beta(10_000) - 0.8).abs() < 1e-12);
        assert!((beta(50_000) - 0.32768).abs() < 1e-12);
    }
}
