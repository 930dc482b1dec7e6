use super::intersect::{finalize_hits, intersect_triangle, Intersection};
use super::{Aabb, Ray, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Inner: `start` is the left child, `count == 0`.
    start: u32,
    count: u32,
    right: u32,
}

/// Median-split BVH over an arbitrary triangle soup. Used for baked meshes.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl TriangleBvh {
    pub fn build(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let centroids: Vec<Vec3> = faces
            .iter()
            .map(|f| {
                (vertices[f[0] as usize] + vertices[f[1] as usize] + vertices[f[2] as usize]) / 3.0
            })
            .collect();
        let mut bvh = Self {
            nodes: Vec::new(),
            order: Vec::new(),
        };
        if !faces.is_empty() {
            bvh.build_node(vertices, faces, &centroids, &mut order, 0, faces.len());
        }
        bvh.order = order;
        bvh
    }

    fn build_node(
        &mut self,
        vertices: &[Vec3],
        faces: &[[u32; 3]],
        centroids: &[Vec3],
        order: &mut [u32],
        start: usize,
        end: usize,
    ) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &order[start..end] {
            for &v in &faces[f as usize] {
                bounds.grow(&vertices[v as usize]);
            }
            cbounds.grow(&centroids[f as usize]);
        }
        let pad = 1e-9
            * (1.0
                + bounds
                    .min
                    .iter()
                    .chain(&bounds.max)
                    .fold(0.0f64, |m, x| m.max(x.abs())));
        bounds = bounds.dilate(pad);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            bounds,
            start: start as u32,
            count: (end - start) as u32,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = cbounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(vertices, faces, centroids, order, start, mid);
        let right = self.build_node(vertices, faces, centroids, order, mid, end);
        let node = &mut self.nodes[id as usize];
        node.start = left;
        node.count = 0;
        node.right = right;
        id
    }

    /// Sorted, deduplicated hits of `ray` against the mesh this BVH was built over.
    pub fn intersect(
        &self,
        vertices: &[Vec3],
        faces: &[[u32; 3]],
        ray: &Ray,
        max_hits: usize,
    ) -> Vec<Intersection> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() {
            return hits;
        }
        let inv = ray.inv_direction();
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node
                .bounds
                .ray_interval(&ray.origin, &inv, ray.t_min, ray.t_max)
                .is_none()
            {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = faces[f as usize];
                    let (va, vb, vc) = (
                        &vertices[a as usize],
                        &vertices[b as usize],
                        &vertices[c as usize],
                    );
                    if let Some(h) = intersect_triangle(ray, va, vb, vc) {
                        let [w0, w1, w2] = h.barycentric;
                        hits.push(Intersection {
                            t: h.t,
                            face: f,
                            barycentric: h.barycentric,
                            point: va * w0 + vb * w1 + vc * w2,
                        });
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.right);
            }
        }
        finalize_hits(&mut hits, max_hits);
        hits
    }
}
