use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: f64,
    pub max_resolution: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            features_per_level: 2,
            log2_table_size: 19,
            base_resolution: 16.0,
            max_resolution: 2048.0,
        }
    }
}

impl HashGridConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 {
            return Err(Error::Config(
                "hash grid needs at least one level and feature".into(),
            ));
        }
        if !(1..=26).contains(&self.log2_table_size) {
            return Err(Error::Config("hash table size must be 2^1 ..= 2^26".into()));
        }
        if !(self.base_resolution >= 1.0 && self.max_resolution >= self.base_resolution) {
            return Err(Error::Config(
                "hash resolutions must satisfy 1 <= base <= max".into(),
            ));
        }
        Ok(())
    }

    /// Cells per axis on each level: a geometric progression from base to max.
    pub fn level_resolutions(&self) -> Vec<u32> {
        let growth = if self.levels > 1 {
            ((self.max_resolution.ln() - self.base_resolution.ln()) / (self.levels - 1) as f64)
                .exp()
        } else {
            1.0
        };
        (0..self.levels)
            .map(|l| (self.base_resolution * growth.powi(l as i32) + 1e-9).floor() as u32)
            .collect()
    }
}

/// Per-sample record of a batched [`HashGrid::encode_batch`] call.
#[derive(Debug, Clone, Default)]
pub struct HashTape {
    pub(crate) n: usize,
    /// `n * levels * 8` entry indices.
    corners: Vec<u32>,
    /// `n * levels` in-cell fractions.
    fracs: Vec<[f64; 3]>,
    /// Per-sample axes that were clamped into the unit cube.
    clamped: Vec<[bool; 3]>,
}

impl HashTape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Multiresolution hash encoding over the unit cube.
#[derive(Debug)]
pub struct HashGrid {
    config: HashGridConfig,
    resolutions: Vec<u32>,
    /// Entry offset of each level into the table.
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    dense: Vec<bool>,
    /// `entries * features_per_level` learned values.
    pub(crate) params: Vec<f64>,
    clamped: AtomicU64,
}

impl Clone for HashGrid {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            resolutions: self.resolutions.clone(),
            offsets: self.offsets.clone(),
            sizes: self.sizes.clone(),
            dense: self.dense.clone(),
            params: self.params.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for HashGrid {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl HashGrid {
    /// Table initialized uniformly in `[-1e-4, 1e-4]`.
    pub fn new(config: HashGridConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        for p in grid.params.iter_mut() {
            *p = rng.gen_range(-1e-4..1e-4);
        }
        Ok(grid)
    }

    pub fn zeros(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let table = 1usize << config.log2_table_size;
        let resolutions = config.level_resolutions();
        let mut offsets = Vec::with_capacity(config.levels);
        let mut sizes = Vec::with_capacity(config.levels);
        let mut dense = Vec::with_capacity(config.levels);
        let mut total = 0usize;
        for &r in &resolutions {
            let corners = (r as usize + 1).pow(3);
            let is_dense = corners <= table;
            let size = if is_dense { corners } else { table };
            offsets.push(total);
            sizes.push(size);
            dense.push(is_dense);
            total += size;
        }
        Ok(Self {
            params: vec![0.0; total * config.features_per_level],
            config,
            resolutions,
            offsets,
            sizes,
            dense,
            clamped: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn is_dense_level(&self, level: usize) -> bool {
        self.dense[level]
    }

    /// Number of queries that fell outside the unit cube and were clamped.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Table entry (not float) index of lattice corner `c` on `level`.
    #[inline]
    pub fn corner_entry(&self, level: usize, c: [u32; 3]) -> usize {
        let local = if self.dense[level] {
            let side = self.resolutions[level] as usize + 1;
            c[0] as usize + side * (c[1] as usize + side * c[2] as usize)
        } else {
            let h = (c[0] as u64).wrapping_mul(PRIMES[0])
                ^ (c[1] as u64).wrapping_mul(PRIMES[1])
                ^ (c[2] as u64).wrapping_mul(PRIMES[2]);
            (h as usize) & (self.sizes[level] - 1)
        };
        self.offsets[level] + local
    }

    fn clamp_input(&self, p: &Vec3) -> (Vec3, [bool; 3]) {
        let mut q = *p;
        let mut flags = [false; 3];
        for a in 0..3 {
            if !(0.0..=1.0).contains(&q[a]) {
                flags[a] = true;
                q[a] = if q[a].is_nan() {
                    0.5
                } else {
                    q[a].clamp(0.0, 1.0)
                };
            }
        }
        if flags.iter().any(|&f| f) {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        (q, flags)
    }

    #[inline]
    fn locate(&self, level: usize, p: &Vec3) -> ([u32; 3], [f64; 3]) {
        let r = self.resolutions[level];
        let mut cell = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = p[a] * r as f64;
            let c = (x.floor() as u32).min(r - 1);
            cell[a] = c;
            frac[a] = x - c as f64;
        }
        (cell, frac)
    }

    #[inline]
    fn corner_weight(frac: &[f64; 3], corner: usize) -> f64 {
        let w = |a: usize| {
            if corner >> a & 1 == 1 {
                frac[a]
            } else {
                1.0 - frac[a]
            }
        };
        w(0) * w(1) * w(2)
    }

    /// Encodes one point of the unit cube (clamped otherwise).
    pub fn encode(&self, p: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_batch(std::slice::from_ref(p), &mut out, None);
        out
    }

    /// Encodes `points` into `out` (`n * output_dim`, row-major), recording a tape when requested.
    pub fn encode_batch(&self, points: &[Vec3], out: &mut [f64], mut tape: Option<&mut HashTape>) {
        let f = self.config.features_per_level;
        let levels = self.config.levels;
        let dim = self.output_dim();
        assert_eq!(out.len(), points.len() * dim);
        if let Some(t) = tape.as_deref_mut() {
            t.n = points.len();
            t.corners.clear();
            t.corners.reserve(points.len() * levels * 8);
            t.fracs.clear();
            t.fracs.reserve(points.len() * levels);
            t.clamped.clear();
            t.clamped.reserve(points.len());
        }
        for (i, p) in points.iter().enumerate() {
            let (q, flags) = self.clamp_input(p);
            let row = &mut out[i * dim..(i + 1) * dim];
            for l in 0..levels {
                let (cell, frac) = self.locate(l, &q);
                let acc = &mut row[l * f..(l + 1) * f];
                acc.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..8 {
                    let corner = [
                        cell[0] + (c & 1) as u32,
                        cell[1] + (c >> 1 & 1) as u32,
                        cell[2] + (c >> 2 & 1) as u32,
                    ];
                    let e = self.corner_entry(l, corner);
                    let w = Self::corner_weight(&frac, c);
                    let vals = &self.params[e * f..(e + 1) * f];
                    for k in 0..f {
                        acc[k] += w * vals[k];
                    }
                    if let Some(t) = tape.as_deref_mut() {
                        t.corners.push(e as u32);
                    }
                }
                if let Some(t) = tape.as_deref_mut() {
                    t.fracs.push(frac);
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.clamped.push(flags);
            }
        }
    }

    /// Encoding plus its Jacobian with respect to the unit-cube position (`output_dim` rows of 3).
    pub fn encode_with_jacobian(&self, p: &Vec3) -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut tape = HashTape::default();
        let mut out = vec![0.0; self.output_dim()];
        self.encode_batch(std::slice::from_ref(p), &mut out, Some(&mut tape));
        let f = self.config.features_per_level;
        let mut jac = vec![[0.0; 3]; self.output_dim()];
        for l in 0..self.config.levels {
            let r = self.resolutions[l] as f64;
            let frac = tape.fracs[l];
            for c in 0..8 {
                let e = tape.corners[l * 8 + c] as usize;
                let dw = Self::corner_weight_grad(&frac, c);
                for k in 0..f {
                    let v = self.params[e * f + k];
                    for a in 0..3 {
                        if !tape.clamped[0][a] {
                            jac[l * f + k][a] += v * dw[a] * r;
                        }
                    }
                }
            }
        }
        (out, jac)
    }

    #[inline]
    fn corner_weight_grad(frac: &[f64; 3], corner: usize) -> [f64; 3] {
        let w = |a: usize| {
            if corner >> a & 1 == 1 {
                frac[a]
            } else {
                1.0 - frac[a]
            }
        };
        let s = |a: usize| if corner >> a & 1 == 1 { 1.0 } else { -1.0 };
        [s(0) * w(1) * w(2), w(0) * s(1) * w(2), w(0) * w(1) * s(2)]
    }

    /// Backpropagates `d_out` (`n * output_dim`). Table gradients are accumulated for the first
    /// `param_rows` samples only; position gradients (unit-cube frame) are returned for all.
    pub fn backward(
        &self,
        tape: &HashTape,
        d_out: &[f64],
        param_rows: usize,
        d_table: Option<&mut [f64]>,
        d_pos: Option<&mut [Vec3]>,
    ) {
        let f = self.config.features_per_level;
        let levels = self.config.levels;
        let dim = self.output_dim();
        assert_eq!(d_out.len(), tape.n * dim);
        if let Some(grad) = d_table {
            for i in 0..param_rows.min(tape.n) {
                let row = &d_out[i * dim..(i + 1) * dim];
                for l in 0..levels {
                    let g = &row[l * f..(l + 1) * f];
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let frac = &tape.fracs[i * levels + l];
                    for c in 0..8 {
                        let e = tape.corners[(i * levels + l) * 8 + c] as usize;
                        let w = Self::corner_weight(frac, c);
                        for k in 0..f {
                            grad[e * f + k] += w * g[k];
                        }
                    }
                }
            }
        }
        if let Some(dp) = d_pos {
            for i in 0..tape.n {
                let row = &d_out[i * dim..(i + 1) * dim];
                let mut acc = Vec3::zeros();
                for l in 0..levels {
                    let g = &row[l * f..(l + 1) * f];
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let r = self.resolutions[l] as f64;
                    let frac = &tape.fracs[i * levels + l];
                    for c in 0..8 {
                        let e = tape.corners[(i * levels + l) * 8 + c] as usize;
                        let dw = Self::corner_weight_grad(frac, c);
                        let mut s = 0.0;
                        for k in 0..f {
                            s += self.params[e * f + k] * g[k];
                        }
                        for a in 0..3 {
                            acc[a] += s * dw[a] * r;
                        }
                    }
                }
                for a in 0..3 {
                    if tape.clamped[i][a] {
                        acc[a] = 0.0;
                    }
                }
                dp[i] = acc;
            }
        }
    }
}
