use super::intersect::{finalize_hits, intersect_triangle, Intersection};
use super::{Aabb, Ray, Vec3};
use crate::error::{Error, Result};

/// Faces per lattice cell: 8 hull triangles followed by 12 apex fans.
pub const FACES_PER_CELL: usize = 20;

/// Cells per axis of LOD levels 1 through 5 at full scale.
pub const LOD_RESOLUTIONS: [usize; 5] = [128, 64, 32, 16, 8];

const MAX_RESOLUTION: usize = 512;

/// Lattice resolution and the region it spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: usize,
    pub aabb: Aabb,
}

impl GridSpec {
    pub fn new(resolution: usize, aabb: Aabb) -> Result<Self> {
        let spec = Self { resolution, aabb };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid of `level` (1-based) when level 1 has `base_resolution` cells per axis.
    pub fn for_level(base_resolution: usize, level: usize, aabb: Aabb) -> Result<Self> {
        if level == 0 || level > 5 {
            return Err(Error::Config(format!("LOD level {level} outside 1..=5")));
        }
        let shift = level - 1;
        if base_resolution >> shift == 0 || (base_resolution >> shift) << shift != base_resolution {
            return Err(Error::Config(format!(
                "base resolution {base_resolution} cannot be halved {shift} times"
            )));
        }
        Self::new(base_resolution >> shift, aabb)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution > MAX_RESOLUTION {
            return Err(Error::Config(format!(
                "grid resolution {} outside 1..={MAX_RESOLUTION}",
                self.resolution
            )));
        }
        if !self.aabb.is_valid() {
            return Err(Error::Config(
                "grid AABB must satisfy min < max on every axis".into(),
            ));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> Vec3 {
        self.aabb.extent() / self.resolution as f64
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(3)
    }

    /// Index of the cell containing `p`, if inside the AABB.
    pub fn cell_of(&self, p: &Vec3) -> Option<usize> {
        if !self.aabb.contains(p) {
            return None;
        }
        let n = self.resolution;
        let u = self.aabb.normalize(p);
        let c = |x: f64| ((x * n as f64) as usize).min(n - 1);
        Some(c(u.x) + n * (c(u.y) + n * c(u.z)))
    }

    pub fn cell_bounds(&self, cell: usize) -> Aabb {
        let n = self.resolution;
        let (a, b, c) = (cell % n, (cell / n) % n, cell / (n * n));
        let cs = self.cell_size();
        let lo = self.aabb.min_v() + Vec3::new(a as f64 * cs.x, b as f64 * cs.y, c as f64 * cs.z);
        let hi = lo + cs;
        Aabb::new([lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z])
    }
}

#[derive(Debug, Clone, Copy)]
struct BvhNode {
    min: [f64; 3],
    max: [f64; 3],
    left: u32,
    right: u32,
    /// `u32::MAX` for inner nodes.
    cell: u32,
}

/// Octahedral lattice mesh: one 20-triangle octahedron per cell, built from the cell's own center
/// (apex) and its six axis neighbors' centers (hull). A ghost ring of lattice points gives border
/// cells a full octahedron.
#[derive(Debug, Clone)]
pub struct OctahedralMeshGrid {
    spec: GridSpec,
    level: usize,
    vertices: Vec<Vec3>,
    rest_positions: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    face_to_cell: Vec<u32>,
    nodes: Vec<BvhNode>,
}

/// Builds the level-`level` octahedral mesh for `spec`.
pub fn build_octahedral_grid(spec: GridSpec, level: usize) -> Result<OctahedralMeshGrid> {
    OctahedralMeshGrid::new(spec, level)
}

impl OctahedralMeshGrid {
    pub fn new(spec: GridSpec, level: usize) -> Result<Self> {
        spec.validate()?;
        if level == 0 || level > 5 {
            return Err(Error::Config(format!("LOD level {level} outside 1..=5")));
        }
        let n = spec.resolution;
        let l = n + 2;
        let cs = spec.cell_size();
        let min = spec.aabb.min_v();
        let mut rest = Vec::with_capacity(l * l * l);
        for k in 0..l {
            for j in 0..l {
                for i in 0..l {
                    rest.push(
                        min + Vec3::new(
                            (i as f64 - 0.5) * cs.x,
                            (j as f64 - 0.5) * cs.y,
                            (k as f64 - 0.5) * cs.z,
                        ),
                    );
                }
            }
        }

        let mut faces = Vec::with_capacity(FACES_PER_CELL * n * n * n);
        let mut face_to_cell = Vec::with_capacity(FACES_PER_CELL * n * n * n);
        let idx = |i: usize, j: usize, k: usize| (i + l * (j + l * k)) as u32;
        for c in 0..n {
            for b in 0..n {
                for a in 0..n {
                    let cell = (a + n * (b + n * c)) as u32;
                    let (i, j, k) = (a + 1, b + 1, c + 1);
                    let center = idx(i, j, k);
                    let xp = idx(i + 1, j, k);
                    let xm = idx(i - 1, j, k);
                    let yp = idx(i, j + 1, k);
                    let ym = idx(i, j - 1, k);
                    let zp = idx(i, j, k + 1);
                    let zm = idx(i, j, k - 1);
                    // hull, wound outward
                    for &(x, sx) in &[(xp, 1), (xm, -1)] {
                        for &(y, sy) in &[(yp, 1), (ym, -1)] {
                            for &(z, sz) in &[(zp, 1), (zm, -1)] {
                                if sx * sy * sz > 0 {
                                    faces.push([x, y, z]);
                                } else {
                                    faces.push([x, z, y]);
                                }
                            }
                        }
                    }
                    // apex fans in the three axis planes
                    faces.extend_from_slice(&[
                        [center, xp, yp],
                        [center, yp, xm],
                        [center, xm, ym],
                        [center, ym, xp],
                        [center, yp, zp],
                        [center, zp, ym],
                        [center, ym, zm],
                        [center, zm, yp],
                        [center, zp, xp],
                        [center, xp, zm],
                        [center, zm, xm],
                        [center, xm, zp],
                    ]);
                    face_to_cell.extend(std::iter::repeat(cell).take(FACES_PER_CELL));
                }
            }
        }

        let mut mesh = Self {
            spec,
            level,
            vertices: rest.clone(),
            rest_positions: rest,
            faces,
            face_to_cell,
            nodes: Vec::new(),
        };
        mesh.build_bvh();
        Ok(mesh)
    }

    /// Same topology as [`OctahedralMeshGrid::new`] with explicit vertex positions.
    pub fn with_vertices(spec: GridSpec, level: usize, vertices: Vec<Vec3>) -> Result<Self> {
        let mut mesh = Self::new(spec, level)?;
        if vertices.len() != mesh.vertices.len() {
            return Err(Error::Validation(format!(
                "expected {} lattice vertices, got {}",
                mesh.vertices.len(),
                vertices.len()
            )));
        }
        mesh.update_vertices(|v| v.copy_from_slice(&vertices));
        Ok(mesh)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn resolution(&self) -> usize {
        self.spec.resolution
    }

    pub fn cell_size(&self) -> Vec3 {
        self.spec.cell_size()
    }

    pub fn cell_count(&self) -> usize {
        self.spec.cell_count()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest_positions
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_to_cell(&self) -> &[u32] {
        &self.face_to_cell
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Lattice side length, including the ghost ring.
    pub fn lattice_side(&self) -> usize {
        self.spec.resolution + 2
    }

    pub fn lattice_index(&self, i: usize, j: usize, k: usize) -> usize {
        let l = self.lattice_side();
        i + l * (j + l * k)
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let n = self.spec.resolution;
        [cell % n, (cell / n) % n, cell / (n * n)]
    }

    pub fn cell_index(&self, a: usize, b: usize, c: usize) -> usize {
        let n = self.spec.resolution;
        a + n * (b + n * c)
    }

    /// Lattice vertex that is the apex of `cell`.
    pub fn cell_apex(&self, cell: usize) -> usize {
        let [a, b, c] = self.cell_coords(cell);
        self.lattice_index(a + 1, b + 1, c + 1)
    }

    /// Apex followed by the six hull vertices of `cell`'s octahedron.
    pub fn cell_vertex_ids(&self, cell: usize) -> [usize; 7] {
        let [a, b, c] = self.cell_coords(cell);
        let (i, j, k) = (a + 1, b + 1, c + 1);
        [
            self.lattice_index(i, j, k),
            self.lattice_index(i + 1, j, k),
            self.lattice_index(i - 1, j, k),
            self.lattice_index(i, j + 1, k),
            self.lattice_index(i, j - 1, k),
            self.lattice_index(i, j, k + 1),
            self.lattice_index(i, j, k - 1),
        ]
    }

    /// Mutates vertex positions and refits the acceleration structure.
    pub fn update_vertices(&mut self, f: impl FnOnce(&mut [Vec3])) {
        f(&mut self.vertices);
        self.refit();
    }

    /// Per-axis half-cell clamp box around each rest position.
    pub fn clamp_to_rest(&mut self) {
        self.clamp_within(0.5);
    }

    /// Clamps every vertex to `cells` cell sizes of its rest position on each axis.
    pub fn clamp_within(&mut self, cells: f64) {
        let half = self.cell_size() * cells;
        let rest = &self.rest_positions;
        for (v, r) in self.vertices.iter_mut().zip(rest) {
            for a in 0..3 {
                v[a] = v[a].clamp(r[a] - half[a], r[a] + half[a]);
            }
        }
        self.refit();
    }

    /// Maximum per-axis displacement from rest, in units of the cell size on that axis.
    pub fn max_displacement_cells(&self) -> f64 {
        let cs = self.cell_size();
        self.vertices
            .iter()
            .zip(&self.rest_positions)
            .map(|(v, r)| {
                (0..3)
                    .map(|a| (v[a] - r[a]).abs() / cs[a])
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// All hits of `ray`, sorted, deduplicated and truncated to `max_hits`.
    pub fn intersect(&self, ray: &Ray, max_hits: usize) -> Vec<Intersection> {
        let mut hits = Vec::new();
        self.intersect_into(ray, max_hits, |_| true, &mut hits);
        hits
    }

    /// Like [`Self::intersect`], skipping every face whose owning cell fails `active`.
    pub fn intersect_into(
        &self,
        ray: &Ray,
        max_hits: usize,
        mut active: impl FnMut(usize) -> bool,
        hits: &mut Vec<Intersection>,
    ) {
        hits.clear();
        let inv = ray.inv_direction();
        let mut stack = [0u32; 96];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            let bounds = Aabb::new(node.min, node.max);
            if bounds
                .ray_interval(&ray.origin, &inv, ray.t_min, ray.t_max)
                .is_none()
            {
                continue;
            }
            if node.cell != u32::MAX {
                let cell = node.cell as usize;
                if !active(cell) {
                    continue;
                }
                let base = cell * FACES_PER_CELL;
                for f in base..base + FACES_PER_CELL {
                    let [a, b, c] = self.faces[f];
                    let (va, vb, vc) = (
                        &self.vertices[a as usize],
                        &self.vertices[b as usize],
                        &self.vertices[c as usize],
                    );
                    if let Some(h) = intersect_triangle(ray, va, vb, vc) {
                        let [w0, w1, w2] = h.barycentric;
                        hits.push(Intersection {
                            t: h.t,
                            face: f as u32,
                            barycentric: h.barycentric,
                            point: va * w0 + vb * w1 + vc * w2,
                        });
                    }
                }
            } else {
                stack[sp] = node.left;
                stack[sp + 1] = node.right;
                sp += 2;
            }
        }
        finalize_hits(hits, max_hits);
    }

    /// Maps every vertex and rest position through `f`; topology is unchanged.
    pub(crate) fn transform_frame(&mut self, f: impl Fn(&Vec3) -> Vec3, aabb: Aabb) {
        for v in self
            .vertices
            .iter_mut()
            .chain(self.rest_positions.iter_mut())
        {
            *v = f(v);
        }
        self.spec.aabb = aabb;
        self.refit();
    }

    fn build_bvh(&mut self) {
        let n = self.spec.resolution;
        self.nodes.clear();
        self.nodes.reserve(2 * n * n * n);
        self.build_node([0, 0, 0], [n, n, n]);
        self.refit();
    }

    fn build_node(&mut self, lo: [usize; 3], hi: [usize; 3]) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(BvhNode {
            min: [0.0; 3],
            max: [0.0; 3],
            left: 0,
            right: 0,
            cell: u32::MAX,
        });
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        if ext == [1, 1, 1] {
            self.nodes[id as usize].cell = self.cell_index(lo[0], lo[1], lo[2]) as u32;
            return id;
        }
        let axis = (0..3).max_by_key(|&a| (ext[a], 3 - a)).unwrap();
        let mid = lo[axis] + ext[axis] / 2;
        let mut left_hi = hi;
        left_hi[axis] = mid;
        let mut right_lo = lo;
        right_lo[axis] = mid;
        let left = self.build_node(lo, left_hi);
        let right = self.build_node(right_lo, hi);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        id
    }

    fn refit(&mut self) {
        // Children always follow their parent, so a reverse sweep sees children first.
        for i in (0..self.nodes.len()).rev() {
            let node = self.nodes[i];
            let mut b = Aabb::empty();
            if node.cell != u32::MAX {
                for v in self.cell_vertex_ids(node.cell as usize) {
                    b.grow(&self.vertices[v]);
                }
                let pad = 1e-9
                    * (1.0
                        + b.min
                            .iter()
                            .chain(&b.max)
                            .fold(0.0f64, |m, x| m.max(x.abs())));
                b = b.dilate(pad);
            } else {
                let l = &self.nodes[node.left as usize];
                let r = &self.nodes[node.right as usize];
                b = Aabb::new(l.min, l.max).union(&Aabb::new(r.min, r.max));
            }
            self.nodes[i].min = b.min;
            self.nodes[i].max = b.max;
        }
    }
}
