//! Coarsening one mesh level into the next.

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::FieldNetwork;
use crate::geometry::{GridSpec, OctahedralMeshGrid, Vec3};

/// Index of the most opaque child; ties go to the lowest index.
///
/// Child `dx + 2*dy + 4*dz` is the fine cell at offset `(dx, dy, dz)` inside its coarse parent.
pub fn select_child(opacities: &[f64; 8]) -> usize {
    let mut best = 0;
    for (i, &v) in opacities.iter().enumerate().skip(1) {
        if v > opacities[best] {
            best = i;
        }
    }
    best
}

/// Maximum opacity over `samples` uniformly random points inside each cell of `spec`.
pub fn estimate_cell_opacity(
    net: &FieldNetwork,
    spec: &GridSpec,
    samples: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let cells = spec.cell_count();
    let mut out = vec![0.0f64; cells];
    let cells_per_chunk = (8192 / samples.max(1)).max(1);
    let mut points = Vec::with_capacity(cells_per_chunk * samples);
    let mut start = 0;
    while start < cells {
        let end = (start + cells_per_chunk).min(cells);
        points.clear();
        for cell in start..end {
            let b = spec.cell_bounds(cell);
            for _ in 0..samples {
                points.push(Vec3::new(
                    rng.gen_range(b.min[0]..b.max[0]),
                    rng.gen_range(b.min[1]..b.max[1]),
                    rng.gen_range(b.min[2]..b.max[2]),
                ));
            }
        }
        let enc = net.encode_batch(&points);
        for (k, cell) in (start..end).enumerate() {
            out[cell] = enc[k * samples..(k + 1) * samples]
                .iter()
                .map(|s| s.alpha)
                .fold(0.0, f64::max);
        }
        start = end;
    }
    out
}

/// Builds the next coarser level: each coarse cell's center vertex is the optimized center
/// vertex of its most opaque child cell.
pub fn lod_coarsen(
    fine: &OctahedralMeshGrid,
    net: &FieldNetwork,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<OctahedralMeshGrid> {
    let n = fine.resolution();
    if n < 2 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "cannot coarsen a grid of odd or unit resolution {n}"
        )));
    }
    let coarse_spec = GridSpec::new(n / 2, fine.spec().aabb)?;
    let mut coarse = OctahedralMeshGrid::new(coarse_spec, fine.level() + 1)?;
    let opacity = estimate_cell_opacity(net, fine.spec(), samples, rng);
    let m = n / 2;
    let fine_vertices = fine.vertices();
    let mut chosen = Vec::with_capacity(m * m * m);
    for cell in 0..m * m * m {
        let [a, b, c] = coarse.cell_coords(cell);
        let mut children = [0usize; 8];
        let mut values = [0.0; 8];
        for (idx, (child, value)) in children.iter_mut().zip(values.iter_mut()).enumerate() {
            let (dx, dy, dz) = (idx & 1, (idx >> 1) & 1, (idx >> 2) & 1);
            *child = fine.cell_index(2 * a + dx, 2 * b + dy, 2 * c + dz);
            *value = opacity[*child];
        }
        let pick = children[select_child(&values)];
        chosen.push((coarse.cell_apex(cell), fine_vertices[fine.cell_apex(pick)]));
    }
    coarse.update_vertices(|v| {
        for (i, p) in chosen {
            v[i] = p;
        }
    });
    coarse.clamp_to_rest();
    Ok(coarse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(select_child(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.9, 0.6, 0.7]), 5);
        assert_eq!(select_child(&[0.4; 8]), 0);
        assert_eq!(select_child(&[0.1, 0.8, 0.2, 0.8, 0.0, 0.0, 0.0, 0.0]), 1);
    }
}
