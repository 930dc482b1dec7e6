use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AdamConfig, FieldConfig, LearningRates};

/// Occupancy-grid bookkeeping used to skip empty cells during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub decay: f64,
    pub threshold: f64,
    /// Epochs between direct-query refreshes.
    pub refresh_interval: u64,
    /// Fraction of cells re-queried at each refresh.
    pub refresh_fraction: f64,
    /// No cell is skipped before this epoch; the whole grid is re-queried when it ends.
    pub warmup_epochs: u64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            decay: 0.95,
            threshold: 0.01,
            refresh_interval: 256,
            refresh_fraction: 0.125,
            warmup_epochs: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub rays_per_batch: usize,
    pub phase_epochs: u64,
    pub f_cap: f64,
    pub f_coefficient: f64,
    pub beta_base: f64,
    /// Part-2 accumulation stops once the remaining transmittance drops below this.
    pub stop_transmittance: f64,
    pub depth_weight: f64,
    /// Huber threshold as a fraction of the scene diagonal.
    pub huber_fraction: f64,
    /// Vertex clamp box half-width in cells.
    pub vertex_clamp: f64,
    pub levels: usize,
    /// Level-1 lattice resolution.
    pub base_resolution: usize,
    pub coarsen_epochs: Vec<u64>,
    pub coarsen_samples: usize,
    pub max_samples_per_ray: usize,
    /// Samples are evaluated in waves of this many per ray so that opaque rays stop early.
    pub wave_size: usize,
    /// Transmittance below which a ray stops collecting samples.
    pub min_transmittance: f64,
    /// Rays processed together; bounds memory without changing results.
    pub chunk_rays: usize,
    /// Encoder outputs are quantized to 8 bits for this final fraction of the epochs.
    pub quantize_fraction: f64,
    pub learning_rates: LearningRates,
    pub adam: AdamConfig,
    pub field: FieldConfig,
    pub occupancy: OccupancyConfig,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    /// Epochs between held-out probe renders in the log.
    pub probe_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80_000,
            rays_per_batch: 4096,
            phase_epochs: 10_000,
            f_cap: 0.3,
            f_coefficient: 0.012,
            beta_base: 0.8,
            stop_transmittance: 0.2,
            depth_weight: 0.05,
            huber_fraction: 0.05,
            vertex_clamp: 0.5,
            levels: 5,
            base_resolution: 128,
            coarsen_epochs: vec![10_000, 12_000, 14_000, 16_000],
            coarsen_samples: 32,
            max_samples_per_ray: 32,
            wave_size: 16,
            min_transmittance: 1e-4,
            chunk_rays: 512,
            quantize_fraction: 0.1,
            learning_rates: LearningRates::default(),
            adam: AdamConfig::default(),
            field: FieldConfig::default(),
            occupancy: OccupancyConfig::default(),
            seed: 0,
            checkpoint_interval: 5000,
            log_interval: 100,
            probe_interval: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f_coefficient", self.f_coefficient),
            ("f_cap", self.f_cap),
            ("beta_base", self.beta_base),
            ("stop_transmittance", self.stop_transmittance),
            ("huber_fraction", self.huber_fraction),
            ("vertex_clamp", self.vertex_clamp),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.depth_weight.is_finite() && self.depth_weight >= 0.0) {
            return Err(Error::Config(format!(
                "depth_weight must be non-negative, got {}",
                self.depth_weight
            )));
        }
        if self.beta_base > 1.0 || self.f_cap > 1.0 || self.stop_transmittance > 1.0 {
            return Err(Error::Config(
                "beta_base, f_cap and stop_transmittance must not exceed 1".into(),
            ));
        }
        if self.epochs == 0 || self.phase_epochs == 0 || self.phase_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "phase boundary ({}) must be positive and below the epoch count ({})",
                self.phase_epochs, self.epochs
            )));
        }
        if self.rays_per_batch == 0
            || self.chunk_rays == 0
            || self.max_samples_per_ray == 0
            || self.wave_size == 0
        {
            return Err(Error::Config(
                "batch, chunk, sample cap and wave size must be positive".into(),
            ));
        }
        if self.levels == 0 || self.levels > 5 {
            return Err(Error::Config(format!(
                "level count must be in 1..=5, got {}",
                self.levels
            )));
        }
        if self.coarsen_epochs.len() + 1 < self.levels {
            return Err(Error::Config(format!(
                "{} levels need {} coarsening epochs, got {}",
                self.levels,
                self.levels - 1,
                self.coarsen_epochs.len()
            )));
        }
        if self.coarsen_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "coarsening epochs must be strictly increasing".into(),
            ));
        }
        if self.base_resolution == 0 || self.base_resolution % (1 << (self.levels - 1)) != 0 {
            return Err(Error::Config(format!(
                "base resolution {} must be divisible by 2^(levels-1)",
                self.base_resolution
            )));
        }
        if self.coarsen_samples == 0 {
            return Err(Error::Config("coarsen_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.quantize_fraction) {
            return Err(Error::Config("quantize_fraction must lie in [0, 1]".into()));
        }
        let occ = &self.occupancy;
        if !(occ.decay > 0.0 && occ.decay < 1.0) || !(0.0..1.0).contains(&occ.threshold) {
            return Err(Error::Config(
                "occupancy decay must lie in (0,1) and threshold in [0,1)".into(),
            ));
        }
        if !(occ.refresh_fraction > 0.0 && occ.refresh_fraction <= 1.0) || occ.refresh_interval == 0
        {
            return Err(Error::Config(
                "occupancy refresh settings must be positive".into(),
            ));
        }
        self.field.hash.validate()
    }

    /// Epoch from which encoder outputs are quantized.
    pub fn quantize_from(&self) -> u64 {
        self.epochs - (self.epochs as f64 * self.quantize_fraction).round() as u64
    }
}
