//! Loss evaluation over a set of rays with fixed intersections, and its gradients.
//!
//! Intersections are found once per step. Each sample keeps the face it hit and its barycentric
//! coordinates; its position is `p = sum b_k v_k` over the current vertices, so the loss is a
//! smooth function of the vertices and network parameters for a fixed set of hits.

use crate::field::{
    decoder_input, sh_encode_unchecked, DecoderTape, EncoderTape, FieldGradients, FieldNetwork,
    DECODER_INPUTS, ENCODER_OUTPUTS, FEATURE_CHANNELS, SH_COEFFS,
};
use crate::geometry::{OctahedralMeshGrid, Ray, Vec3};

use super::composite::{
    composite_backward, composite_ray, composite_renormalized, renormalized_backward,
};
use super::composite::{ChainSample, Composite, SampleGrad};

/// One training ray with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTarget {
    pub ray: Ray,
    pub color: [f64; 3],
    /// Pseudo-depth target along the ray, when an SfM point supports this pixel.
    pub depth: Option<f64>,
}

/// A ray–face hit whose barycentric coordinates stay fixed while vertices move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenHit {
    pub face: u32,
    pub barycentric: [f64; 3],
}

/// Borrowed mesh data of one level.
#[derive(Debug, Clone, Copy)]
pub struct LevelGeometry<'a> {
    pub vertices: &'a [Vec3],
    pub faces: &'a [[u32; 3]],
    pub face_to_cell: &'a [u32],
}

impl<'a> From<&'a OctahedralMeshGrid> for LevelGeometry<'a> {
    fn from(m: &'a OctahedralMeshGrid) -> Self {
        Self {
            vertices: m.vertices(),
            faces: m.faces(),
            face_to_cell: m.face_to_cell(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    pub beta: f64,
    pub f: f64,
    pub stop_transmittance: f64,
    pub depth_weight: f64,
    pub huber_delta: f64,
    /// Rays stop collecting samples below this transmittance; zero disables early termination.
    pub min_transmittance: f64,
    pub wave_size: usize,
    /// Photometric terms are divided by this (the full batch size).
    pub ray_normalizer: f64,
    /// The depth term is divided by this (rays with a depth target in the full batch).
    pub depth_normalizer: f64,
}

impl ObjectiveParams {
    pub fn new(beta: f64, f: f64, rays: usize, depth_rays: usize) -> Self {
        Self {
            beta,
            f,
            stop_transmittance: 0.2,
            depth_weight: 0.05,
            huber_delta: 0.05,
            min_transmittance: 0.0,
            wave_size: 16,
            ray_normalizer: rays.max(1) as f64,
            depth_normalizer: depth_rays.max(1) as f64,
        }
    }
}

/// Loss terms; photometric parts are means over the batch of squared color errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub part1: Vec<f64>,
    pub part2: Vec<f64>,
    pub rgb: f64,
    pub depth: f64,
    pub total: f64,
    pub part2_rays: usize,
    pub samples: usize,
}

impl LossBreakdown {
    fn with_levels(levels: usize) -> Self {
        Self {
            part1: vec![0.0; levels],
            part2: vec![0.0; levels],
            ..Default::default()
        }
    }

    /// Adds the terms of another chunk of the same batch.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        if self.part1.len() < other.part1.len() {
            self.part1.resize(other.part1.len(), 0.0);
            self.part2.resize(other.part2.len(), 0.0);
        }
        for (a, b) in self.part1.iter_mut().zip(&other.part1) {
            *a += b;
        }
        for (a, b) in self.part2.iter_mut().zip(&other.part2) {
            *a += b;
        }
        self.rgb += other.rgb;
        self.depth += other.depth;
        self.total += other.total;
        self.part2_rays += other.part2_rays;
        self.samples += other.samples;
    }
}

/// Gradients of the loss with respect to network parameters and every level's vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub field: FieldGradients,
    pub vertices: Vec<Vec<Vec3>>,
}

impl Gradients {
    pub fn new(net: &FieldNetwork, vertex_counts: &[usize]) -> Self {
        Self {
            field: FieldGradients::zeros_like(net),
            vertices: vertex_counts
                .iter()
                .map(|&n| vec![Vec3::zeros(); n])
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.field.clear();
        for v in &mut self.vertices {
            v.iter_mut().for_each(|g| *g = Vec3::zeros());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.field.is_finite()
            && self
                .vertices
                .iter()
                .flatten()
                .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Everything produced by one pass over a chunk of rays.
#[derive(Debug, Clone, Default)]
pub struct ChunkOutput {
    pub loss: LossBreakdown,
    /// `(cell, alpha)` for every level-1 sample.
    pub occupancy: Vec<(usize, f64)>,
    /// Plain composite of each ray at the first level.
    pub composites: Vec<Composite>,
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Pseudo-depth loss over `(expected depth, target)` pairs; pairs without a target add nothing.
pub fn pseudo_depth_loss(pairs: &[(f64, Option<f64>)], weight: f64, delta: f64) -> f64 {
    let valid: Vec<f64> = pairs
        .iter()
        .filter_map(|&(t, target)| target.map(|s| huber(t - s, delta)))
        .collect();
    if valid.is_empty() {
        return 0.0;
    }
    weight * valid.iter().sum::<f64>() / valid.len() as f64
}

struct Chain {
    ray: usize,
    level: usize,
    next: usize,
    trans: f64,
    done: bool,
    rows: Vec<(u32, u32)>,
}

#[derive(Default)]
struct Wave {
    enc: EncoderTape,
    dec: DecoderTape,
    /// (level, ray, hit) per row.
    origin: Vec<(usize, usize, FrozenHit)>,
    t: Vec<f64>,
    alpha: Vec<f64>,
    color: Vec<[f64; 3]>,
    level1_rows: usize,
}

/// Evaluates the loss on `targets` and, when `grads` is given, adds its gradients.
///
/// `hits[r][l]` lists the sorted hits of ray `r` against level `l` of `levels`. The first level
/// trains both network and vertices; later levels reach only their vertices.
pub fn evaluate_chunk(
    net: &FieldNetwork,
    levels: &[LevelGeometry<'_>],
    targets: &[RayTarget],
    hits: &[Vec<Vec<FrozenHit>>],
    params: &ObjectiveParams,
    mut grads: Option<&mut Gradients>,
) -> ChunkOutput {
    assert_eq!(targets.len(), hits.len());
    let nlev = levels.len();
    let sh: Vec<[f64; SH_COEFFS]> = targets
        .iter()
        .map(|t| sh_encode_unchecked(&t.ray.direction))
        .collect();

    let mut chains = Vec::with_capacity(nlev * targets.len());
    for level in 0..nlev {
        for ray in 0..targets.len() {
            let empty = hits[ray].get(level).map_or(true, |h| h.is_empty());
            chains.push(Chain {
                ray,
                level,
                next: 0,
                trans: 1.0,
                done: empty,
                rows: Vec::new(),
            });
        }
    }

    let mut waves: Vec<Wave> = Vec::new();
    loop {
        let mut wave = Wave::default();
        for chain in chains.iter_mut().filter(|c| !c.done) {
            let list = &hits[chain.ray][chain.level];
            let end = (chain.next + params.wave_size).min(list.len());
            for k in chain.next..end {
                chain
                    .rows
                    .push((waves.len() as u32, wave.origin.len() as u32));
                wave.origin.push((chain.level, chain.ray, list[k]));
                if chain.level == 0 {
                    wave.level1_rows += 1;
                }
            }
            chain.next = end;
        }
        if wave.origin.is_empty() {
            break;
        }
        let points: Vec<Vec3> = wave
            .origin
            .iter()
            .map(|&(level, _, h)| sample_point(&levels[level], &h))
            .collect();
        wave.t = points
            .iter()
            .zip(&wave.origin)
            .map(|(p, &(_, ray, _))| (p - targets[ray].ray.origin).dot(&targets[ray].ray.direction))
            .collect();
        let enc = net.encode_recorded(&points, &mut wave.enc);
        let inputs: Vec<[f64; DECODER_INPUTS]> = enc
            .iter()
            .zip(&wave.origin)
            .map(|(s, &(_, ray, _))| decoder_input(&s.features, &sh[ray]))
            .collect();
        wave.color = net.decode_recorded(&inputs, &mut wave.dec);
        wave.alpha = enc.iter().map(|s| s.alpha).collect();
        let w = waves.len() as u32;
        for chain in chains.iter_mut().filter(|c| !c.done) {
            for &(_, row) in chain.rows.iter().rev().take_while(|&&(cw, _)| cw == w) {
                chain.trans *= 1.0 - wave.alpha[row as usize];
            }
            if chain.next >= hits[chain.ray][chain.level].len()
                || chain.trans < params.min_transmittance
            {
                chain.done = true;
            }
        }
        waves.push(wave);
    }

    let mut out = ChunkOutput {
        loss: LossBreakdown::with_levels(nlev),
        ..Default::default()
    };
    out.loss.samples = waves.iter().map(|w| w.origin.len()).sum();
    for wave in &waves {
        for (row, &(level, _, h)) in wave.origin.iter().enumerate() {
            if level == 0 {
                out.occupancy.push((
                    levels[0].face_to_cell[h.face as usize] as usize,
                    wave.alpha[row],
                ));
            }
        }
    }

    let mut sample_grads: Vec<Vec<SampleGrad>> = waves
        .iter()
        .map(|w| vec![SampleGrad::default(); w.origin.len()])
        .collect();
    let want = grads.is_some();
    let beta = params.beta;
    out.composites = vec![composite_ray(&[]); targets.len()];
    for chain in &chains {
        let samples: Vec<ChainSample> = chain
            .rows
            .iter()
            .map(|&(w, r)| {
                let wave = &waves[w as usize];
                ChainSample {
                    t: wave.t[r as usize],
                    alpha: wave.alpha[r as usize],
                    color: wave.color[r as usize],
                }
            })
            .collect();
        let target = &targets[chain.ray];
        let comp = composite_ray(&samples);
        let mut local = vec![SampleGrad::default(); samples.len()];
        let err1 = sq_err(&comp.color, &target.color);
        out.loss.part1[chain.level] += err1 / params.ray_normalizer;
        let mut d_color = [0.0; 3];
        for k in 0..3 {
            d_color[k] = beta * 2.0 * (comp.color[k] - target.color[k]) / params.ray_normalizer;
        }
        let mut d_depth = 0.0;
        if chain.level == 0 {
            out.composites[chain.ray] = comp;
            if let Some(t_star) = target.depth {
                let r = comp.depth - t_star;
                out.loss.depth +=
                    params.depth_weight * huber(r, params.huber_delta) / params.depth_normalizer;
                d_depth = params.depth_weight * huber_grad(r, params.huber_delta)
                    / params.depth_normalizer;
            }
        }
        if want {
            composite_backward(&samples, d_color, d_depth, &mut local);
        }
        if beta < 1.0 {
            if let Some(r) = composite_renormalized(&samples, params.f, params.stop_transmittance) {
                out.loss.part2_rays += 1;
                out.loss.part2[chain.level] +=
                    sq_err(&r.color, &target.color) / params.ray_normalizer;
                if want {
                    let mut d2 = [0.0; 3];
                    for k in 0..3 {
                        d2[k] = (1.0 - beta) * 2.0 * (r.color[k] - target.color[k])
                            / params.ray_normalizer;
                    }
                    renormalized_backward(&samples, &r, d2, &mut local);
                }
            }
        }
        if want {
            for (&(w, r), g) in chain.rows.iter().zip(&local) {
                sample_grads[w as usize][r as usize] = *g;
            }
        }
    }
    for l in 0..nlev {
        out.loss.rgb += beta * out.loss.part1[l] + (1.0 - beta) * out.loss.part2[l];
    }
    out.loss.total = out.loss.rgb + out.loss.depth;

    if let Some(g) = grads.as_deref_mut() {
        for (wave, sg) in waves.iter().zip(&sample_grads) {
            backward_wave(net, levels, targets, wave, sg, g);
        }
    }
    out
}

fn backward_wave(
    net: &FieldNetwork,
    levels: &[LevelGeometry<'_>],
    targets: &[RayTarget],
    wave: &Wave,
    sg: &[SampleGrad],
    g: &mut Gradients,
) {
    let d_rgb: Vec<[f64; 3]> = sg.iter().map(|s| s.color).collect();
    let d_feat = net.decoder_backward(&wave.dec, &d_rgb, wave.level1_rows, &mut g.field);
    let d_enc: Vec<[f64; ENCODER_OUTPUTS]> = d_feat
        .iter()
        .zip(sg)
        .map(|(df, s)| {
            let mut row = [0.0; ENCODER_OUTPUTS];
            row[..FEATURE_CHANNELS].copy_from_slice(df);
            row[FEATURE_CHANNELS] = s.alpha;
            row
        })
        .collect();
    let d_pos = net.encoder_backward(&wave.enc, &d_enc, wave.level1_rows, &mut g.field);
    for ((&(level, ray, h), dp), s) in wave.origin.iter().zip(&d_pos).zip(sg) {
        let d_point = dp + targets[ray].ray.direction * s.t;
        let face = levels[level].faces[h.face as usize];
        for (k, &vi) in face.iter().enumerate() {
            g.vertices[level][vi as usize] += d_point * h.barycentric[k];
        }
    }
}

fn sample_point(level: &LevelGeometry<'_>, h: &FrozenHit) -> Vec3 {
    let [a, b, c] = level.faces[h.face as usize];
    level.vertices[a as usize] * h.barycentric[0]
        + level.vertices[b as usize] * h.barycentric[1]
        + level.vertices[c as usize] * h.barycentric[2]
}

fn sq_err(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}
