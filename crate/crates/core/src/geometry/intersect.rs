use super::{Ray, Vec3};

/// Hits whose ray parameters differ by at most this much are the same sample.
pub const EDGE_DEDUP_EPS: f64 = 1e-9;

/// Ray parameter and barycentric coordinates of a ray/triangle hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    /// Weights of `(v0, v1, v2)`.
    pub barycentric: [f64; 3],
}

/// A ray/mesh hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub t: f64,
    pub face: u32,
    pub barycentric: [f64; 3],
    pub point: Vec3,
}

/// Two-sided Möller–Trumbore test. Degenerate triangles and rays parallel to the plane never hit.
#[inline]
pub fn intersect_triangle(ray: &Ray, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<TriangleHit> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if !(det.abs() > 1e-12 * scale) {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t < ray.t_min || t > ray.t_max {
        return None;
    }
    Some(TriangleHit {
        t,
        barycentric: [1.0 - u - v, u, v],
    })
}

/// Sorts hits by `t`, merges hits closer than [`EDGE_DEDUP_EPS`] keeping the lowest face index,
/// and truncates to `max_hits`.
pub fn finalize_hits(hits: &mut Vec<Intersection>, max_hits: usize) {
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
    let mut out: Vec<Intersection> = Vec::with_capacity(hits.len().min(max_hits));
    let mut cluster_t = f64::NEG_INFINITY;
    for h in hits.iter() {
        if let Some(last) = out.last_mut() {
            if h.t - cluster_t <= EDGE_DEDUP_EPS {
                if h.face < last.face {
                    *last = *h;
                }
                continue;
            }
        }
        if out.len() == max_hits {
            break;
        }
        cluster_t = h.t;
        out.push(*h);
    }
    *hits = out;
}
