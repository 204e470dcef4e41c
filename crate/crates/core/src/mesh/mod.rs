//! Triangle meshes of segmented anatomy, with a bounding-volume hierarchy for
//! closest-point and ray queries.

mod bvh;
pub mod io;
pub mod shapes;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;
use bvh::Bvh;

/// Twice this value is the cross-product norm below which a triangle is
/// dropped as degenerate.
const DEGENERATE_AREA: f64 = 1e-20;
const RAY_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("non-finite vertex {0}")]
    NonFinite(usize),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format {0:?}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Closest surface point returned by [`TriangleMesh::closest_point`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub point: Vector3<f64>,
    pub triangle: usize,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Ray parameter; the hit is at `origin + t * direction`.
    pub t: f64,
    pub point: Vector3<f64>,
    pub triangle: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawMesh", into = "RawMesh")]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    bvh: Bvh,
}

#[derive(Serialize, Deserialize)]
struct RawMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
}

impl TryFrom<RawMesh> for TriangleMesh {
    type Error = MeshError;

    fn try_from(raw: RawMesh) -> Result<Self, MeshError> {
        TriangleMesh::new(raw.vertices, raw.triangles)
    }
}

impl From<TriangleMesh> for RawMesh {
    fn from(m: TriangleMesh) -> Self {
        RawMesh {
            vertices: m.vertices,
            triangles: m.triangles,
        }
    }
}

impl TriangleMesh {
    /// Validates indices and drops zero-area triangles.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange {
                    triangle: t,
                    index,
                    count: vertices.len(),
                });
            }
        }
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i]);
                (b - a).cross(&(c - a)).norm() > DEGENERATE_AREA
            })
            .collect();
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let bvh = Bvh::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            bvh,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, triangle: usize) -> [Vector3<f64>; 3] {
        self.triangles[triangle].map(|i| self.vertices[i])
    }

    /// Unit normal from the winding order (right-hand rule).
    pub fn triangle_normal(&self, triangle: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(triangle);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn triangle_area(&self, triangle: usize) -> f64 {
        let [a, b, c] = self.corners(triangle);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Volume enclosed by the surface; positive when windings face outward.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    /// Flips every winding when the signed volume is negative. Returns whether
    /// a flip happened.
    pub fn orient_outward(&mut self) -> bool {
        if self.signed_volume() < 0.0 {
            for t in &mut self.triangles {
                t.swap(1, 2);
            }
            true
        } else {
            false
        }
    }

    pub fn scaled(&self, factor: f64) -> TriangleMesh {
        self.map_vertices(|v| v * factor)
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        self.map_vertices(|v| t.transform_point(v))
    }

    fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> TriangleMesh {
        let vertices: Vec<_> = self.vertices.iter().map(f).collect();
        let bvh = Bvh::build(&vertices, &self.triangles);
        TriangleMesh {
            vertices,
            triangles: self.triangles.clone(),
            bvh,
        }
    }

    pub fn closest_point(&self, p: &Vector3<f64>) -> SurfacePoint {
        self.bvh.closest_point(&self.vertices, &self.triangles, p)
    }

    /// Exhaustive closest-point search over every triangle.
    pub fn closest_point_brute_force(&self, p: &Vector3<f64>) -> SurfacePoint {
        let mut best: Option<SurfacePoint> = None;
        for (i, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|k| self.vertices[k]);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            let d = (q - p).norm();
            if best.map_or(true, |b| d < b.distance) {
                best = Some(SurfacePoint {
                    point: q,
                    triangle: i,
                    distance: d,
                });
            }
        }
        best.expect("mesh is non-empty")
    }

    /// Nearest forward hit of the ray `origin + t * direction`, `t > 0`.
    pub fn ray_cast(&self, origin: &Vector3<f64>, direction: &Vector3<f64>) -> Option<RayHit> {
        self.bvh.ray_cast(&self.vertices, &self.triangles, origin, direction)
    }

    pub fn ray_cast_brute_force(&self, origin: &Vector3<f64>, direction: &Vector3<f64>) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|k| self.vertices[k]);
            if let Some(t) = ray_triangle(origin, direction, &a, &b, &c) {
                if best.map_or(true, |h| t < h.t) {
                    best = Some(RayHit {
                        t,
                        point: origin + direction * t,
                        triangle: i,
                    });
                }
            }
        }
        best
    }

    /// Area-weighted uniform samples on the surface, with their triangles.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vector3<f64>, usize)> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            total += self.triangle_area(i);
            cumulative.push(total);
        }
        (0..n)
            .map(|_| {
                let x = rng.random::<f64>() * total;
                let tri = cumulative.partition_point(|&c| c < x).min(self.triangles.len() - 1);
                let [a, b, c] = self.corners(tri);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                (a + (b - a) * u + (c - a) * v, tri)
            })
            .collect()
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}

/// Closest point on triangle `abc` to `p`, covering the interior, edge and
/// vertex regions.
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Möller–Trumbore; returns the ray parameter of a forward hit.
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    (t > RAY_EPS).then_some(t)
}
