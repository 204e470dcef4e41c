use nalgebra::Vector3;

use super::{closest_point_on_triangle, ray_triangle, RayHit, SurfacePoint};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&self, o: &Aabb) -> Aabb {
        Aabb {
            lo: self.lo.inf(&o.lo),
            hi: self.hi.sup(&o.hi),
        }
    }

    fn distance_squared(&self, p: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let excess = (self.lo[k] - p[k]).max(p[k] - self.hi[k]).max(0.0);
            d += excess * excess;
        }
        d
    }

    /// Entry parameter of the ray into the box (slightly padded), if it
    /// intersects at t >= 0.
    fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let pad = 1e-9 * (1.0 + (self.hi[k] - self.lo[k]).abs());
            let (lo, hi) = (self.lo[k] - pad, self.hi[k] + pad);
            if dir[k] == 0.0 {
                if origin[k] < lo || origin[k] > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let a = (lo - origin[k]) * inv;
            let b = (hi - origin[k]) * inv;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split box hierarchy over triangle indices.
#[derive(Clone, Debug)]
pub(super) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub(super) fn build(vertices: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Bvh {
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for &i in t {
                    b.grow(&vertices[i]);
                }
                b
            })
            .collect();
        let centroids: Vec<Vector3<f64>> = boxes.iter().map(|b| (b.lo + b.hi) * 0.5).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1),
            order: (0..triangles.len()).collect(),
        };
        if !triangles.is_empty() {
            bvh.build_node(&boxes, &centroids, 0, triangles.len());
        }
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centroids: &[Vector3<f64>], start: usize, end: usize) -> usize {
        let bounds = self.order[start..end]
            .iter()
            .fold(Aabb::empty(), |acc, &i| acc.merge(&boxes[i]));
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let mut cb = Aabb::empty();
        for &i in &self.order[start..end] {
            cb.grow(&centroids[i]);
        }
        let extent = cb.hi - cb.lo;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        // Placeholder, patched once children exist.
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build_node(boxes, centroids, start, mid);
        let right = self.build_node(boxes, centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub(super) fn closest_point(
        &self,
        vertices: &[Vector3<f64>],
        triangles: &[[usize; 3]],
        p: &Vector3<f64>,
    ) -> SurfacePoint {
        let mut best = SurfacePoint {
            point: *p,
            triangle: usize::MAX,
            distance: f64::INFINITY,
        };
        let mut best_sq = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            // Strict comparison keeps ties reachable so the lowest index wins,
            // matching the exhaustive scan.
            if node.bounds().distance_squared(p) > best_sq {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = triangles[t].map(|i| vertices[i]);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d = (q - p).norm();
                        if d < best.distance || (d == best.distance && t < best.triangle) {
                            best = SurfacePoint {
                                point: q,
                                triangle: t,
                                distance: d,
                            };
                            best_sq = (q - p).norm_squared();
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(p);
                    let dr = self.nodes[right].bounds().distance_squared(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }

    pub(super) fn ray_cast(
        &self,
        vertices: &[Vector3<f64>],
        triangles: &[[usize; 3]],
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let entry = match node.bounds().ray_entry(origin, dir) {
                Some(t) => t,
                None => continue,
            };
            if best.is_some_and(|h| entry > h.t) {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = triangles[t].map(|i| vertices[i]);
                        if let Some(s) = ray_triangle(origin, dir, &a, &b, &c) {
                            let better = match best {
                                None => true,
                                Some(h) => s < h.t || (s == h.t && t < h.triangle),
                            };
                            if better {
                                best = Some(RayHit {
                                    t: s,
                                    point: origin + dir * s,
                                    triangle: t,
                                });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}
