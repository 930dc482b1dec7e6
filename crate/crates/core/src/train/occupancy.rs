use rand::Rng;

use crate::field::FieldNetwork;
use crate::geometry::{GridSpec, Vec3};

/// Running maximum of observed opacity per fine-grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    values: Vec<f64>,
    pub decay: f64,
    pub threshold: f64,
}

impl OccupancyGrid {
    /// All cells at zero.
    pub fn new(spec: GridSpec, decay: f64, threshold: f64) -> Self {
        Self::filled(spec, decay, threshold, 0.0)
    }

    pub fn filled(spec: GridSpec, decay: f64, threshold: f64, value: f64) -> Self {
        Self {
            spec,
            values: vec![value.clamp(0.0, 1.0); spec.cell_count()],
            decay,
            threshold,
        }
    }

    pub fn from_values(spec: GridSpec, decay: f64, threshold: f64, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), spec.cell_count());
        Self {
            spec,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            decay,
            threshold,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.values[cell] > self.threshold
    }

    pub fn active_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v > self.threshold).count() as f64
            / self.values.len() as f64
    }

    /// Active flags for a grid `factor` times coarser per axis: a coarse cell is active when any
    /// fine cell inside it is.
    pub fn coarse_mask(&self, factor: usize) -> Vec<bool> {
        let n = self.spec.resolution;
        if factor <= 1 {
            return self.values.iter().map(|&v| v > self.threshold).collect();
        }
        let m = n.div_ceil(factor);
        let mut mask = vec![false; m * m * m];
        for (cell, &v) in self.values.iter().enumerate() {
            if v > self.threshold {
                let (a, b, c) = (
                    cell % n / factor,
                    (cell / n) % n / factor,
                    cell / (n * n) / factor,
                );
                mask[a + m * (b + m * c)] = true;
            }
        }
        mask
    }

    /// Decays every cell, then merges the sampled opacities by maximum.
    pub fn update(&mut self, samples: &[(usize, f64)]) {
        for v in &mut self.values {
            *v *= self.decay;
        }
        for &(cell, alpha) in samples {
            let v = &mut self.values[cell];
            *v = v.max(alpha.clamp(0.0, 1.0));
        }
    }

    /// Re-queries `fraction` of the cells (chosen at random) at one random interior point each.
    pub fn refresh(&mut self, net: &FieldNetwork, fraction: f64, rng: &mut impl Rng) {
        let count = ((self.values.len() as f64 * fraction).ceil() as usize).min(self.values.len());
        let cells = rand::seq::index::sample(rng, self.values.len(), count).into_vec();
        self.query_cells(net, &cells, rng);
    }

    /// Re-queries every cell.
    pub fn refresh_all(&mut self, net: &FieldNetwork, rng: &mut impl Rng) {
        let cells: Vec<usize> = (0..self.values.len()).collect();
        self.query_cells(net, &cells, rng);
    }

    fn query_cells(&mut self, net: &FieldNetwork, cells: &[usize], rng: &mut impl Rng) {
        let points: Vec<Vec3> = cells
            .iter()
            .map(|&c| {
                let b = self.spec.cell_bounds(c);
                Vec3::new(
                    rng.gen_range(b.min[0]..b.max[0]),
                    rng.gen_range(b.min[1]..b.max[1]),
                    rng.gen_range(b.min[2]..b.max[2]),
                )
            })
            .collect();
        for (chunk_cells, chunk_points) in cells.chunks(8192).zip(points.chunks(8192)) {
            let out = net.encode_batch(chunk_points);
            for (&c, s) in chunk_cells.iter().zip(out) {
                let v = &mut self.values[c];
                *v = (*v * self.decay).max(s.alpha);
            }
        }
    }
}

/// Decays `grid` and merges `samples` (cell, opacity) into it.
pub fn update_occupancy(grid: &mut OccupancyGrid, samples: &[(usize, f64)]) {
    grid.update(samples);
}
