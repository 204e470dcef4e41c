//! Sphere, capsule and box collision primitives and signed distances between
//! them.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Capsule {
        p0: Vector3<f64>,
        p1: Vector3<f64>,
        radius: f64,
    },
    Box {
        pose: RigidTransform,
        half_extents: Vector3<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPrimitive {
    pub shape: Shape,
    pub label: String,
    #[serde(default)]
    pub margin: f64,
}

impl CollisionPrimitive {
    pub fn sphere(center: Vector3<f64>, radius: f64, label: impl Into<String>) -> Self {
        Self {
            shape: Shape::Sphere { center, radius },
            label: label.into(),
            margin: 0.0,
        }
    }

    pub fn capsule(p0: Vector3<f64>, p1: Vector3<f64>, radius: f64, label: impl Into<String>) -> Self {
        Self {
            shape: Shape::Capsule { p0, p1, radius },
            label: label.into(),
            margin: 0.0,
        }
    }

    pub fn cuboid(pose: RigidTransform, half_extents: Vector3<f64>, label: impl Into<String>) -> Self {
        Self {
            shape: Shape::Box { pose, half_extents },
            label: label.into(),
            margin: 0.0,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    /// Positive radii and extents, non-negative margin, finite values.
    pub fn is_valid(&self) -> bool {
        let shape_ok = match &self.shape {
            Shape::Sphere { center, radius } => *radius > 0.0 && center.iter().all(|c| c.is_finite()),
            Shape::Capsule { p0, p1, radius } => {
                *radius > 0.0 && p0.iter().chain(p1.iter()).all(|c| c.is_finite())
            }
            Shape::Box { pose, half_extents } => {
                half_extents.iter().all(|h| *h > 0.0) && pose.translation().iter().all(|c| c.is_finite())
            }
        };
        shape_ok && self.margin >= 0.0
    }

    pub fn transformed(&self, t: &RigidTransform) -> CollisionPrimitive {
        let shape = match &self.shape {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: t.transform_point(center),
                radius: *radius,
            },
            Shape::Capsule { p0, p1, radius } => Shape::Capsule {
                p0: t.transform_point(p0),
                p1: t.transform_point(p1),
                radius: *radius,
            },
            Shape::Box { pose, half_extents } => Shape::Box {
                pose: *t * *pose,
                half_extents: *half_extents,
            },
        };
        CollisionPrimitive {
            shape,
            label: self.label.clone(),
            margin: self.margin,
        }
    }

    /// Support function `max_{x ∈ shape} u·x` (margin not included).
    pub fn support(&self, u: &Vector3<f64>) -> f64 {
        match &self.shape {
            Shape::Sphere { center, radius } => center.dot(u) + radius * u.norm(),
            Shape::Capsule { p0, p1, radius } => p0.dot(u).max(p1.dot(u)) + radius * u.norm(),
            Shape::Box { pose, half_extents } => {
                let mut h = pose.translation().dot(u);
                for k in 0..3 {
                    h += half_extents[k] * pose.axis(k).dot(u).abs();
                }
                h
            }
        }
    }

    /// Signed distance from a point to the shape surface (negative inside),
    /// margin not included.
    pub fn point_distance(&self, p: &Vector3<f64>) -> f64 {
        match &self.shape {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Capsule { p0, p1, radius } => (p - closest_on_segment(p, p0, p1)).norm() - radius,
            Shape::Box { pose, half_extents } => box_point_distance(pose, half_extents, p),
        }
    }
}

/// Signed separation of two primitives minus both margins; negative values
/// are penetration depths (the shortest translation that separates them).
pub fn primitive_distance(a: &CollisionPrimitive, b: &CollisionPrimitive) -> f64 {
    geometric_distance(&a.shape, &b.shape) - a.margin - b.margin
}

fn geometric_distance(a: &Shape, b: &Shape) -> f64 {
    use Shape::*;
    match (a, b) {
        (Sphere { center: c1, radius: r1 }, Sphere { center: c2, radius: r2 }) => (c1 - c2).norm() - r1 - r2,
        (Sphere { center, radius: rs }, Capsule { p0, p1, radius: rc })
        | (Capsule { p0, p1, radius: rc }, Sphere { center, radius: rs }) => {
            (center - closest_on_segment(center, p0, p1)).norm() - rs - rc
        }
        (Capsule { p0: a0, p1: a1, radius: ra }, Capsule { p0: b0, p1: b1, radius: rb }) => {
            let (x, y) = closest_segment_segment(a0, a1, b0, b1);
            (x - y).norm() - ra - rb
        }
        (Sphere { center, radius }, Box { pose, half_extents })
        | (Box { pose, half_extents }, Sphere { center, radius }) => {
            box_point_distance(pose, half_extents, center) - radius
        }
        (Capsule { p0, p1, radius }, Box { pose, half_extents })
        | (Box { pose, half_extents }, Capsule { p0, p1, radius }) => {
            segment_box_distance(p0, p1, pose, half_extents) - radius
        }
        (Box { pose: pa, half_extents: ha }, Box { pose: pb, half_extents: hb }) => box_box_distance(pa, ha, pb, hb),
    }
}

/// Slow, generic estimate of the signed distance from support functions
/// alone: `max_u −(h_A(u) + h_B(−u))` over unit directions, by Fibonacci
/// sampling of `samples` directions followed by multi-start pattern search.
/// Never exceeds the true value for separated shapes.
pub fn support_distance_estimate(a: &CollisionPrimitive, b: &CollisionPrimitive, samples: usize) -> f64 {
    use rand::{Rng, SeedableRng};
    let f = |u: &Vector3<f64>| -(a.support(u) + b.support(&-u));
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = samples.max(16);
    let mut scored: Vec<(f64, Vector3<f64>)> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            let u = Vector3::new(r * th.cos(), r * th.sin(), z);
            (f(&u), u)
        })
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut overall = f64::NEG_INFINITY;
    for &(start, u0) in scored.iter().take(6) {
        let (mut best, mut best_u) = (start, u0);
        // Random directions: the objective has ridges where axis-aligned
        // steps stall.
        let mut step = 0.05;
        while step > 1e-10 {
            let mut improved = false;
            for _ in 0..24 {
                let dir = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let u = (best_u + dir * step).normalize();
                let v = f(&u);
                if v > best {
                    best = v;
                    best_u = u;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        overall = overall.max(best);
    }
    overall - a.margin - b.margin
}

pub fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    a + ab * ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

/// Closest points between segments `p1q1` and `p2q2`.
pub fn closest_segment_segment(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-24;
    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p1, *p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

fn box_point_distance(pose: &RigidTransform, half: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let local = pose.inverse().transform_point(p);
    let q = local.abs() - half;
    let outside = q.sup(&Vector3::zeros()).norm();
    let inside = q.max().min(0.0);
    outside + inside
}

fn segment_box_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, pose: &RigidTransform, half: &Vector3<f64>) -> f64 {
    let inv = pose.inverse();
    let a = inv.transform_point(p0);
    let b = inv.transform_point(p1);
    // Segment inside the box: penetration depth from the separating-axis
    // candidates of box ⊕ segment.
    let axis = b - a;
    let mid = (a + b) * 0.5;
    let mut candidates = vec![Vector3::x(), Vector3::y(), Vector3::z()];
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        if let Some(c) = axis.cross(&e).try_normalize(1e-12) {
            candidates.push(c);
        }
    }
    let mut min_overlap = f64::INFINITY;
    for l in &candidates {
        let r = half.dot(&l.abs()) + axis.dot(l).abs() * 0.5;
        min_overlap = min_overlap.min(r - mid.dot(l).abs());
    }
    if min_overlap >= 0.0 {
        return -min_overlap;
    }

    let f = |s: f64| {
        let q = (a + (b - a) * s).abs() - half;
        q.sup(&Vector3::zeros()).norm() + q.max().min(0.0)
    };
    // The signed distance to a convex set is convex along a line.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.min(f2).min(f(0.0)).min(f(1.0))
}

fn box_corners(pose: &RigidTransform, half: &Vector3<f64>) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        let s = Vector3::new(
            if i & 1 == 0 { -1.0 } else { 1.0 },
            if i & 2 == 0 { -1.0 } else { 1.0 },
            if i & 4 == 0 { -1.0 } else { 1.0 },
        );
        *c = pose.transform_point(&half.component_mul(&s));
    }
    out
}

fn box_edges(corners: &[Vector3<f64>; 8]) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut edges = Vec::with_capacity(12);
    for i in 0..8 {
        for bit in [1, 2, 4] {
            if i & bit == 0 {
                edges.push((corners[i], corners[i | bit]));
            }
        }
    }
    edges
}

fn box_box_distance(pa: &RigidTransform, ha: &Vector3<f64>, pb: &RigidTransform, hb: &Vector3<f64>) -> f64 {
    let axes_a = [pa.axis(0), pa.axis(1), pa.axis(2)];
    let axes_b = [pb.axis(0), pb.axis(1), pb.axis(2)];
    let mut candidates: Vec<Vector3<f64>> = axes_a.iter().chain(axes_b.iter()).copied().collect();
    for a in &axes_a {
        for b in &axes_b {
            if let Some(c) = a.cross(b).try_normalize(1e-9) {
                candidates.push(c);
            }
        }
    }
    let d = pb.translation() - pa.translation();
    let mut min_overlap = f64::INFINITY;
    let mut separated = false;
    for l in &candidates {
        let ra: f64 = (0..3).map(|k| ha[k] * axes_a[k].dot(l).abs()).sum();
        let rb: f64 = (0..3).map(|k| hb[k] * axes_b[k].dot(l).abs()).sum();
        let overlap = ra + rb - d.dot(l).abs();
        if overlap < 0.0 {
            separated = true;
            break;
        }
        min_overlap = min_overlap.min(overlap);
    }
    if !separated {
        return -min_overlap;
    }
    let ca = box_corners(pa, ha);
    let cb = box_corners(pb, hb);
    let mut best = f64::INFINITY;
    for c in &ca {
        best = best.min(box_point_distance(pb, hb, c));
    }
    for c in &cb {
        best = best.min(box_point_distance(pa, ha, c));
    }
    let ea = box_edges(&ca);
    let eb = box_edges(&cb);
    for (a0, a1) in &ea {
        for (b0, b1) in &eb {
            let (x, y) = closest_segment_segment(a0, a1, b0, b1);
            best = best.min((x - y).norm());
        }
    }
    best
}
