#![allow(dead_code)]

use nerfmesh::bake::ExtractedMesh;
use nerfmesh::field::{FieldConfig, FieldNetwork, HashGridConfig, FEATURE_CHANNELS};
use nerfmesh::geometry::{Aabb, Camera, GridSpec, Intrinsics, OctahedralMeshGrid, Ray, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_box() -> Aabb {
    Aabb::new([-1.0; 3], [1.0; 3])
}

/// 16 levels × 2 features with a small table so that hashing collides.
pub fn small_hash() -> HashGridConfig {
    HashGridConfig {
        levels: 16,
        features_per_level: 2,
        log2_table_size: 10,
        base_resolution: 2.0,
        max_resolution: 32.0,
    }
}

/// Network with its hash table drawn from `±table_scale`, so features vary visibly in space.
pub fn random_network(seed: u64, aabb: Aabb, table_scale: f64) -> FieldNetwork {
    let mut net = FieldNetwork::new(
        aabb,
        &FieldConfig {
            hash: small_hash(),
            seed,
        },
    )
    .unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in net.hash.params_mut() {
        *p = if table_scale > 0.0 {
            r.gen_range(-table_scale..table_scale)
        } else {
            0.0
        };
    }
    net
}

/// Makes the encoder's opacity output the constant `alpha`.
pub fn fix_alpha(net: &mut FieldNetwork, alpha: f64) {
    let last = net.encoder.layer_count() - 1;
    let fan_in = net.encoder.widths()[last];
    let (w, b) = net.encoder.layer_params_mut(last);
    w[FEATURE_CHANNELS * fan_in..(FEATURE_CHANNELS + 1) * fan_in].fill(0.0);
    b[FEATURE_CHANNELS] = (alpha / (1.0 - alpha)).ln();
}

/// Octahedral grid whose vertices are moved uniformly by up to `cells` cell sizes per axis.
pub fn perturbed_grid(
    n: usize,
    aabb: Aabb,
    level: usize,
    cells: f64,
    r: &mut impl Rng,
) -> OctahedralMeshGrid {
    let mut grid = OctahedralMeshGrid::new(GridSpec::new(n, aabb).unwrap(), level).unwrap();
    let cs = grid.cell_size();
    grid.update_vertices(|v| {
        for p in v.iter_mut() {
            for a in 0..3 {
                p[a] += r.gen_range(-cells..=cells) * cs[a];
            }
        }
    });
    grid
}

/// Faces of `grid` accepted by `keep`, with compact vertex indices.
pub fn mesh_from_faces(
    grid: &OctahedralMeshGrid,
    mut keep: impl FnMut(usize) -> bool,
) -> ExtractedMesh {
    let mut remap = vec![u32::MAX; grid.vertices().len()];
    let mut out = ExtractedMesh::default();
    for (f, face) in grid.faces().iter().enumerate() {
        if !keep(f) {
            continue;
        }
        out.faces.push(face.map(|v| {
            let slot = &mut remap[v as usize];
            if *slot == u32::MAX {
                *slot = out.vertices.len() as u32;
                out.vertices.push(grid.vertices()[v as usize]);
            }
            *slot
        }));
        out.source_faces.push(f as u32);
    }
    out.retention = out.faces.len() as f64 / grid.face_count() as f64;
    out
}

/// Two triangles spanning `[-s, s]²` in the plane `z = 0`.
pub fn quad(s: f64) -> ExtractedMesh {
    ExtractedMesh {
        vertices: vec![
            Vec3::new(-s, -s, 0.0),
            Vec3::new(s, -s, 0.0),
            Vec3::new(s, s, 0.0),
            Vec3::new(-s, s, 0.0),
        ],
        faces: vec![[0, 1, 2], [0, 2, 3]],
        source_faces: vec![0, 1],
        retention: 1.0,
    }
}

pub fn camera(width: u32, height: u32, fov: f64, eye: Vec3, target: Vec3) -> Camera {
    Camera::look_at(
        Intrinsics::from_fov(width, height, fov),
        eye,
        target,
        Vec3::z(),
    )
    .unwrap()
}

pub fn unit_vector(r: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Ray from a random point around the box towards a random point inside it.
pub fn ray_into_box(aabb: &Aabb, r: &mut impl Rng) -> Ray {
    let c = aabb.center();
    let origin = c + unit_vector(r) * aabb.diagonal() * r.gen_range(0.6..1.2);
    let target = Vec3::new(
        r.gen_range(aabb.min[0]..aabb.max[0]),
        r.gen_range(aabb.min[1]..aabb.max[1]),
        r.gen_range(aabb.min[2]..aabb.max[2]),
    );
    Ray::new(origin, target - origin)
}
