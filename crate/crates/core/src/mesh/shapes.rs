//! Generated phantom meshes so scenarios need no external data.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

use super::TriangleMesh;

/// Head phantom semi-axes (front-back, left-right, vertical), meters.
pub const HEAD_SEMI_AXES: [f64; 3] = [0.095, 0.075, 0.11];

/// Femur phantom shaft length and radius, meters.
pub const FEMUR_LENGTH: f64 = 0.30;
pub const FEMUR_SHAFT_RADIUS: f64 = 0.014;

/// Geodesic sphere built by repeated 4-way subdivision of an icosahedron.
///
/// The icosahedron is oriented with a face centered on +z, so a ray along the
/// z axis meets a face whose normal is exactly (0, 0, 1).
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let [a, b, c] = faces[1].map(|i| verts[i]);
    let centroid = (a + b + c).normalize();
    let align = UnitQuaternion::rotation_between(&centroid, &Vector3::z()).unwrap_or_else(UnitQuaternion::identity);
    for v in &mut verts {
        *v = align * *v;
    }

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |i: usize, j: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (i.min(j), i.max(j));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[i] + verts[j]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [i, j, k] in faces {
            let ij = mid(i, j, &mut verts);
            let jk = mid(j, k, &mut verts);
            let ki = mid(k, i, &mut verts);
            next.extend([[i, ij, ki], [j, jk, ij], [k, ki, jk], [ij, jk, ki]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    let mut mesh = TriangleMesh::new(verts, faces).expect("icosphere is valid");
    mesh.orient_outward();
    mesh
}

pub fn ellipsoid(semi_axes: [f64; 3], subdivisions: u32) -> TriangleMesh {
    let unit = icosphere(1.0, subdivisions);
    let verts = unit
        .vertices()
        .iter()
        .map(|v| Vector3::new(v.x * semi_axes[0], v.y * semi_axes[1], v.z * semi_axes[2]))
        .collect();
    TriangleMesh::new(verts, unit.triangles().to_vec()).expect("ellipsoid is valid")
}

/// Head-sized ellipsoid centered at the origin, +x facing forward, +z up.
pub fn head_phantom() -> TriangleMesh {
    ellipsoid(HEAD_SEMI_AXES, 4)
}

/// Proximal femur phantom: a closed tube along +x from 0 to
/// [`FEMUR_LENGTH`] whose radius swells near x = 0 and carries a lateral
/// (+y) trochanter bulge.
pub fn femur_phantom() -> TriangleMesh {
    let rings = 60;
    let segments = 48;
    let radius = |x: f64, theta: f64| {
        let head = 0.010 * (-((x - 0.02) / 0.03).powi(2)).exp();
        let lateral = theta.cos().max(0.0).powi(2);
        let trochanter = 0.012 * (-((x - 0.04) / 0.025).powi(2)).exp() * lateral;
        FEMUR_SHAFT_RADIUS + head + trochanter
    };
    let mut verts = Vec::new();
    for r in 0..=rings {
        let x = FEMUR_LENGTH * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = 2.0 * PI * s as f64 / segments as f64;
            let rad = radius(x, theta);
            verts.push(Vector3::new(x, rad * theta.cos(), rad * theta.sin()));
        }
    }
    let start_cap = verts.len();
    verts.push(Vector3::new(0.0, 0.0, 0.0));
    let end_cap = verts.len();
    verts.push(Vector3::new(FEMUR_LENGTH, 0.0, 0.0));

    let idx = |r: usize, s: usize| r * segments + (s % segments);
    let mut tris = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            tris.push([idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)]);
            tris.push([idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)]);
        }
    }
    for s in 0..segments {
        tris.push([start_cap, idx(0, s), idx(0, s + 1)]);
        tris.push([end_cap, idx(rings, s + 1), idx(rings, s)]);
    }
    let mut mesh = TriangleMesh::new(verts, tris).expect("femur phantom is valid");
    mesh.orient_outward();
    mesh
}

/// Square grid in the z = 0 plane spanning `[-half, half]²`, normal +z.
pub fn plane(half: f64, cells: usize) -> TriangleMesh {
    let n = cells + 1;
    let mut verts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            verts.push(Vector3::new(
                -half + 2.0 * half * i as f64 / cells as f64,
                -half + 2.0 * half * j as f64 / cells as f64,
                0.0,
            ));
        }
    }
    let mut tris = Vec::new();
    for j in 0..cells {
        for i in 0..cells {
            let a = j * n + i;
            tris.push([a, a + 1, a + n + 1]);
            tris.push([a, a + n + 1, a + n]);
        }
    }
    TriangleMesh::new(verts, tris).expect("plane is valid")
}
