//! Alpha compositing along a ray and its exact derivatives.

/// One sample on a ray: distance, opacity and color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSample {
    pub t: f64,
    pub alpha: f64,
    pub color: [f64; 3],
}

/// Samples of one ray ordered by distance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaySampleChain {
    pub samples: Vec<ChainSample>,
}

impl RaySampleChain {
    pub fn new(samples: Vec<ChainSample>) -> Self {
        Self { samples }
    }

    /// `T_i`, the product of `1 - alpha_j` over earlier samples.
    pub fn transmittances(&self) -> Vec<f64> {
        transmittances(&self.samples)
    }

    /// Transmittance left after the last sample.
    pub fn remaining(&self) -> f64 {
        self.samples.iter().fold(1.0, |t, s| t * (1.0 - s.alpha))
    }
}

pub fn transmittances(samples: &[ChainSample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut t = 1.0;
    for s in samples {
        out.push(t);
        t *= 1.0 - s.alpha;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub depth: f64,
    pub acc: f64,
}

/// Derivatives of a scalar objective with respect to one sample's inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleGrad {
    pub alpha: f64,
    pub color: [f64; 3],
    pub t: f64,
}

/// Floor on the accumulated opacity when normalizing the expected depth.
pub const DEPTH_EPS: f64 = 1e-10;

/// Front-to-back composite over a black background.
pub fn composite_ray(samples: &[ChainSample]) -> Composite {
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut trans = 1.0;
    for s in samples {
        let w = trans * s.alpha;
        for (c, v) in color.iter_mut().zip(s.color) {
            *c += w * v;
        }
        depth += w * s.t;
        trans *= 1.0 - s.alpha;
    }
    let acc = 1.0 - trans;
    Composite {
        color,
        depth: depth / acc.max(DEPTH_EPS),
        acc,
    }
}

/// Adds the gradient of `d_color . C + d_depth * depth` to `out`, one entry per sample.
pub fn composite_backward(
    samples: &[ChainSample],
    d_color: [f64; 3],
    d_depth: f64,
    out: &mut [SampleGrad],
) {
    let n = samples.len();
    debug_assert_eq!(out.len(), n);
    if n == 0 {
        return;
    }
    let trans = transmittances(samples);
    let mut acc_w = 0.0;
    let mut depth_w = 0.0;
    for (s, &t) in samples.iter().zip(&trans) {
        acc_w += t * s.alpha;
        depth_w += t * s.alpha * s.t;
    }
    let denom = acc_w.max(DEPTH_EPS);
    let depth = depth_w / denom;
    let acc_active = acc_w > DEPTH_EPS;

    // Suffix sums of what lies behind sample i, seen from just after it.
    let mut suffix_c = [0.0; 3];
    let mut suffix_a = 0.0;
    let mut suffix_d = 0.0;
    for i in (0..n).rev() {
        let s = &samples[i];
        let ti = trans[i];
        let w = ti * s.alpha;
        let mut g = 0.0;
        for k in 0..3 {
            g += d_color[k] * ti * (s.color[k] - suffix_c[k]);
            out[i].color[k] += d_color[k] * w;
        }
        if d_depth != 0.0 {
            let d_num = ti * (s.t - suffix_d);
            let d_acc = ti * (1.0 - suffix_a);
            let d_hat = if acc_active {
                (d_num - depth * d_acc) / denom
            } else {
                d_num / denom
            };
            g += d_depth * d_hat;
            out[i].t += d_depth * w / denom;
        }
        out[i].alpha += g;
        let keep = 1.0 - s.alpha;
        for k in 0..3 {
            suffix_c[k] = s.alpha * s.color[k] + keep * suffix_c[k];
        }
        suffix_a = s.alpha + keep * suffix_a;
        suffix_d = s.alpha * s.t + keep * suffix_d;
    }
}

/// Result of the filtered, early-stopped, renormalized composite.
#[derive(Debug, Clone, PartialEq)]
pub struct Renormalized {
    pub color: [f64; 3],
    /// Indices of the samples that contributed, in ray order.
    pub kept: Vec<usize>,
    /// Transmittance left after the kept samples.
    pub remaining: f64,
}

/// Keeps samples with `alpha > f`, stops once the remaining transmittance falls below
/// `stop`, and divides by the accumulated opacity. `None` when nothing survives.
pub fn composite_renormalized(samples: &[ChainSample], f: f64, stop: f64) -> Option<Renormalized> {
    let mut kept = Vec::new();
    let mut num = [0.0; 3];
    let mut trans = 1.0;
    for (i, s) in samples.iter().enumerate() {
        if s.alpha <= f {
            continue;
        }
        kept.push(i);
        let w = trans * s.alpha;
        for (n, c) in num.iter_mut().zip(s.color) {
            *n += w * c;
        }
        trans *= 1.0 - s.alpha;
        if trans < stop {
            break;
        }
    }
    let q = 1.0 - trans;
    if kept.is_empty() || q <= 1e-12 {
        return None;
    }
    Some(Renormalized {
        color: num.map(|v| v / q),
        kept,
        remaining: trans,
    })
}

/// Adds the gradient of `d_color . C'` to `out` for the kept samples.
pub fn renormalized_backward(
    samples: &[ChainSample],
    r: &Renormalized,
    d_color: [f64; 3],
    out: &mut [SampleGrad],
) {
    let q = 1.0 - r.remaining;
    let mut trans = Vec::with_capacity(r.kept.len());
    let mut t = 1.0;
    for &i in &r.kept {
        trans.push(t);
        t *= 1.0 - samples[i].alpha;
    }
    let mut suffix_c = [0.0; 3];
    let mut suffix_a = 0.0;
    for (j, &i) in r.kept.iter().enumerate().rev() {
        let s = &samples[i];
        let tj = trans[j];
        let d_q = tj * (1.0 - suffix_a);
        let mut g = 0.0;
        for k in 0..3 {
            let d_n = tj * (s.color[k] - suffix_c[k]);
            g += d_color[k] * (d_n - r.color[k] * d_q) / q;
            out[i].color[k] += d_color[k] * tj * s.alpha / q;
        }
        out[i].alpha += g;
        let keep = 1.0 - s.alpha;
        for k in 0..3 {
            suffix_c[k] = s.alpha * s.color[k] + keep * suffix_c[k];
        }
        suffix_a = s.alpha + keep * suffix_a;
    }
}
