use super::{Aabb, Ray};

/// Walks the cells of a regular `dims` grid over `aabb` in ray order (Amanatides–Woo).
///
/// `visit(cell, t_enter, t_exit)` returns `false` to stop the walk.
pub fn traverse_grid(
    ray: &Ray,
    aabb: &Aabb,
    dims: [usize; 3],
    mut visit: impl FnMut([usize; 3], f64, f64) -> bool,
) {
    let inv = ray.inv_direction();
    let Some((t0, t1)) = aabb.ray_interval(&ray.origin, &inv, ray.t_min, ray.t_max) else {
        return;
    };
    let ext = aabb.extent();
    let size = [
        ext.x / dims[0] as f64,
        ext.y / dims[1] as f64,
        ext.z / dims[2] as f64,
    ];
    let entry = ray.at(t0);
    let mut cell = [0usize; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let rel = ((entry[a] - aabb.min[a]) / size[a]).floor();
        cell[a] = (rel.max(0.0) as usize).min(dims[a] - 1);
        let d = ray.direction[a];
        if d > 0.0 {
            step[a] = 1;
            let boundary = aabb.min[a] + (cell[a] + 1) as f64 * size[a];
            t_next[a] = (boundary - ray.origin[a]) * inv[a];
            t_delta[a] = size[a] * inv[a];
        } else if d < 0.0 {
            step[a] = -1;
            let boundary = aabb.min[a] + cell[a] as f64 * size[a];
            t_next[a] = (boundary - ray.origin[a]) * inv[a];
            t_delta[a] = -size[a] * inv[a];
        }
    }
    let mut t = t0;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let t_exit = t_next[axis].min(t1);
        if !visit(cell, t, t_exit) || t_next[axis] >= t1 {
            return;
        }
        t = t_next[axis];
        t_next[axis] += t_delta[axis];
        let c = cell[axis] as i64 + step[axis];
        if c < 0 || c >= dims[axis] as i64 {
            return;
        }
        cell[axis] = c as usize;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn walks_a_row() {
        let aabb = Aabb::new([0.0; 3], [4.0, 1.0, 1.0]);
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        let mut cells = Vec::new();
        traverse_grid(&ray, &aabb, [4, 1, 1], |c, _, _| {
            cells.push(c[0]);
            true
        });
        assert_eq!(cells, vec![0, 1, 2, 3]);
    }

    #[test]
    fn visits_cells_containing_the_ray() {
        let aabb = Aabb::new([0.0; 3], [1.0; 3]);
        let ray = Ray::new(Vec3::new(0.05, 0.1, 1.5), Vec3::new(0.3, 0.5, -1.0));
        let dims = [8, 8, 8];
        traverse_grid(&ray, &aabb, dims, |c, t0, t1| {
            let mid = ray.at(0.5 * (t0 + t1));
            for a in 0..3 {
                let lo = c[a] as f64 / 8.0;
                assert!(mid[a] >= lo - 1e-9 && mid[a] <= lo + 0.125 + 1e-9);
            }
            true
        });
    }

    #[test]
    fn miss_visits_nothing() {
        let aabb = Aabb::new([0.0; 3], [1.0; 3]);
        let ray = Ray::new(Vec3::new(2.0, 2.0, 2.0), Vec3::x());
        let mut n = 0;
        traverse_grid(&ray, &aabb, [2, 2, 2], |_, _, _| {
            n += 1;
            true
        });
        assert_eq!(n, 0);
    }
}
