//! Rigid transforms, the frame graph of the navigation setup, and pose error
//! metrics.
//!
//! Naming follows `a_T_b`: the pose of frame `b` expressed in frame `a`, i.e.
//! the transform mapping `b` coordinates into `a` coordinates. Composition
//! therefore chains as `a_T_c = a_T_b * b_T_c`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance used by [`FrameGraph::resolve`] to decide whether two paths
/// through a cycle disagree.
pub const PATH_CONSISTENCY_TOL: f64 = 1e-6;

const GIMBAL_TOL: f64 = 1e-6;
const MAX_ENUMERATED_PATHS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no path between frames {from} and {to}")]
    DisconnectedFrames { from: FrameId, to: FrameId },
    #[error("paths between {from} and {to} disagree by {translation:.3e} m / {rotation:.3e} rad")]
    AmbiguousPath {
        from: FrameId,
        to: FrameId,
        translation: f64,
        rotation: f64,
    },
    #[error("edge {parent} -> {child} already present")]
    DuplicateEdge { parent: FrameId, child: FrameId },
    #[error("self edge on frame {0}")]
    SelfEdge(FrameId),
    #[error("unknown frame name {0:?}")]
    UnknownFrame(String),
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
}

/// An element of SE(3): unit quaternion rotation plus translation in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn translation_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::from_translation(Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(axis, angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x_axis(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y_axis(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z_axis(), angle)
    }

    /// Builds a transform from the columns of a rotation matrix. The matrix is
    /// re-orthonormalized through the quaternion conversion.
    pub fn from_matrix_parts(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Builds a frame from its x and z axes (y completes a right-handed frame).
    /// Both axes must be unit length and orthogonal.
    pub fn from_axes_xz(x_axis: &Vector3<f64>, z_axis: &Vector3<f64>, origin: Vector3<f64>) -> Self {
        let y_axis = z_axis.cross(x_axis);
        let m = Matrix3::from_columns(&[*x_axis, y_axis, *z_axis]);
        Self::from_matrix_parts(&m, origin)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Quaternion with non-negative scalar part, so equal rotations compare
    /// equal.
    pub fn canonical_rotation(&self) -> UnitQuaternion<f64> {
        if self.rotation.w < 0.0 {
            Unit::new_unchecked(-self.rotation.into_inner())
        } else {
            self.rotation
        }
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Unit axis of this frame expressed in the parent frame (0 = x, 1 = y, 2 = z).
    pub fn axis(&self, index: usize) -> Vector3<f64> {
        let mut e = Vector3::zeros();
        e[index] = 1.0;
        self.rotation * e
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol_translation: f64, tol_rotation: f64) -> bool {
        let e = pose_error(self, other);
        e.translation_error <= tol_translation && e.rotation_error <= tol_rotation
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &'a RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        PoseJson {
            q: [q.w, q.i, q.j, q.k],
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = PoseJson::deserialize(deserializer)?;
        let q = Quaternion::new(raw.q[0], raw.q[1], raw.q[2], raw.q[3]);
        if !(q.norm() > 0.0) {
            return Err(serde::de::Error::custom(GeometryError::ZeroQuaternion));
        }
        // Already-unit quaternions are kept bit-for-bit so that a pose survives a
        // JSON round trip exactly.
        let rotation = if (q.norm_squared() - 1.0).abs() < 1e-14 {
            Unit::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(RigidTransform {
            rotation,
            translation: Vector3::new(raw.t[0], raw.t[1], raw.t[2]),
        })
    }
}

/// Named coordinate frames of the navigation setup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameId {
    /// Virtual world of the head-mounted display.
    W,
    /// Optical tracker.
    N,
    /// HMD local frame.
    H,
    /// Optical marker rigidly attached to the HMD.
    #[serde(rename = "O_holo")]
    OHolo,
    /// Free reference marker.
    #[serde(rename = "O_ref")]
    ORef,
    /// Rendered copy of the reference marker.
    #[serde(rename = "VO_ref")]
    VORef,
    /// Rendered copy of the HMD marker.
    #[serde(rename = "VO_holo")]
    VOHolo,
    /// Robot base.
    R,
    /// Robot flange.
    E,
    /// Instrument (coil or drill/injector).
    I,
    /// Patient body marker.
    P,
    /// Medical image.
    M,
    /// Hand-held clicker.
    C,
}

impl FrameId {
    pub const ALL: [FrameId; 13] = [
        FrameId::W,
        FrameId::N,
        FrameId::H,
        FrameId::OHolo,
        FrameId::ORef,
        FrameId::VORef,
        FrameId::VOHolo,
        FrameId::R,
        FrameId::E,
        FrameId::I,
        FrameId::P,
        FrameId::M,
        FrameId::C,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FrameId::W => "W",
            FrameId::N => "N",
            FrameId::H => "H",
            FrameId::OHolo => "O_holo",
            FrameId::ORef => "O_ref",
            FrameId::VORef => "VO_ref",
            FrameId::VOHolo => "VO_holo",
            FrameId::R => "R",
            FrameId::E => "E",
            FrameId::I => "I",
            FrameId::P => "P",
            FrameId::M => "M",
            FrameId::C => "C",
        }
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrameId {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FrameId::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| GeometryError::UnknownFrame(s.to_string()))
    }
}

// Lexicographic on names; used for deterministic path tie-breaking.
impl Ord for FrameId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name().cmp(other.name())
    }
}

impl PartialOrd for FrameId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEdge {
    pub parent: FrameId,
    pub child: FrameId,
    /// `parent_T_child`.
    pub transform: RigidTransform,
    /// Carried for streaming use; ignored by `resolve`.
    pub timestamp: f64,
}

/// Directed graph of frames. Each edge stores `parent_T_child`; queries may
/// walk edges in either direction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameGraph {
    edges: BTreeMap<(FrameId, FrameId), FrameEdge>,
}

impl FrameGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_edge(
        &mut self,
        parent: FrameId,
        child: FrameId,
        transform: RigidTransform,
        timestamp: f64,
    ) -> Result<(), GeometryError> {
        if parent == child {
            return Err(GeometryError::SelfEdge(parent));
        }
        if self.edges.contains_key(&(parent, child)) {
            return Err(GeometryError::DuplicateEdge { parent, child });
        }
        self.edges.insert(
            (parent, child),
            FrameEdge {
                parent,
                child,
                transform,
                timestamp,
            },
        );
        Ok(())
    }

    /// Inserts or replaces the edge for the ordered pair.
    pub fn set_edge(
        &mut self,
        parent: FrameId,
        child: FrameId,
        transform: RigidTransform,
        timestamp: f64,
    ) -> Result<(), GeometryError> {
        self.edges.remove(&(parent, child));
        self.add_edge(parent, child, transform, timestamp)
    }

    pub fn remove_edge(&mut self, parent: FrameId, child: FrameId) -> Option<FrameEdge> {
        self.edges.remove(&(parent, child))
    }

    pub fn edge(&self, parent: FrameId, child: FrameId) -> Option<&FrameEdge> {
        self.edges.get(&(parent, child))
    }

    pub fn edges(&self) -> impl Iterator<Item = &FrameEdge> {
        self.edges.values()
    }

    pub fn frames(&self) -> BTreeSet<FrameId> {
        self.edges
            .keys()
            .flat_map(|(a, b)| [*a, *b])
            .collect()
    }

    pub fn contains(&self, frame: FrameId) -> bool {
        self.edges.keys().any(|(a, b)| *a == frame || *b == frame)
    }

    /// Neighbors of `frame` sorted by name, each with `frame_T_neighbor`.
    fn neighbors(&self, frame: FrameId) -> Vec<(FrameId, RigidTransform)> {
        let mut out: Vec<(FrameId, RigidTransform)> = Vec::new();
        for e in self.edges.values() {
            if e.parent == frame {
                out.push((e.child, e.transform));
            } else if e.child == frame {
                out.push((e.parent, e.transform.inverse()));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// `from_T_to`, composed along the shortest path (ties broken by frame
    /// name). Errors when no path exists or when alternative paths through a
    /// cycle disagree beyond [`PATH_CONSISTENCY_TOL`].
    pub fn resolve(&self, from: FrameId, to: FrameId) -> Result<RigidTransform, GeometryError> {
        if from == to {
            return Ok(RigidTransform::identity());
        }
        let mut prev: BTreeMap<FrameId, (FrameId, RigidTransform)> = BTreeMap::new();
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(f) = queue.pop_front() {
            if f == to {
                break;
            }
            for (n, t) in self.neighbors(f) {
                if seen.insert(n) {
                    prev.insert(n, (f, t));
                    queue.push_back(n);
                }
            }
        }
        if !seen.contains(&to) {
            return Err(GeometryError::DisconnectedFrames { from, to });
        }
        let mut chain = Vec::new();
        let mut cur = to;
        while cur != from {
            let (p, t) = prev[&cur];
            chain.push(t);
            cur = p;
        }
        let shortest = chain
            .iter()
            .rev()
            .fold(RigidTransform::identity(), |acc, t| acc.compose(t));

        self.check_alternative_paths(from, to, &shortest)?;
        Ok(shortest)
    }

    fn check_alternative_paths(
        &self,
        from: FrameId,
        to: FrameId,
        reference: &RigidTransform,
    ) -> Result<(), GeometryError> {
        let mut visited = BTreeSet::from([from]);
        let mut count = 0usize;
        let mut worst: Option<PoseError> = None;
        self.walk_paths(
            from,
            to,
            RigidTransform::identity(),
            &mut visited,
            &mut count,
            &mut |t| {
                let e = pose_error(reference, t);
                if e.translation_error > PATH_CONSISTENCY_TOL || e.rotation_error > PATH_CONSISTENCY_TOL {
                    worst.get_or_insert(e);
                }
            },
        );
        match worst {
            Some(e) => Err(GeometryError::AmbiguousPath {
                from,
                to,
                translation: e.translation_error,
                rotation: e.rotation_error,
            }),
            None => Ok(()),
        }
    }

    fn walk_paths(
        &self,
        at: FrameId,
        to: FrameId,
        acc: RigidTransform,
        visited: &mut BTreeSet<FrameId>,
        count: &mut usize,
        visit: &mut dyn FnMut(&RigidTransform),
    ) {
        if *count >= MAX_ENUMERATED_PATHS {
            return;
        }
        if at == to {
            *count += 1;
            visit(&acc);
            return;
        }
        for (n, t) in self.neighbors(at) {
            if visited.insert(n) {
                self.walk_paths(n, to, acc.compose(&t), visited, count, visit);
                visited.remove(&n);
            }
        }
    }
}

/// Euclidean translation error (m) and angle-axis rotation error (rad).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub translation_error: f64,
    pub rotation_error: f64,
}

/// Rotation angle of `q` in `[0, π]`.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    2.0 * q.imag().norm().atan2(q.w.abs())
}

pub fn pose_error(planned: &RigidTransform, actual: &RigidTransform) -> PoseError {
    let relative = planned.rotation.inverse() * actual.rotation;
    PoseError {
        translation_error: (planned.translation - actual.translation).norm(),
        rotation_error: rotation_angle(&relative),
    }
}

/// Per-axis breakdown of a pose difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerAxisError {
    /// `t_actual - t_planned`, meters.
    pub translation: Vector3<f64>,
    /// Fixed-axis XYZ angles (roll about x, pitch about y, yaw about z) of
    /// `R_planned⁻¹ R_actual`, radians.
    pub rotation: Vector3<f64>,
    /// Pitch within 1e-6 of ±π/2; roll and yaw are then not unique and roll is
    /// reported as zero.
    pub gimbal_degenerate: bool,
}

pub fn per_axis_error(planned: &RigidTransform, actual: &RigidTransform) -> PerAxisError {
    let relative = (planned.rotation.inverse() * actual.rotation)
        .to_rotation_matrix()
        .into_inner();
    let (angles, gimbal_degenerate) = fixed_xyz_angles(&relative);
    PerAxisError {
        translation: actual.translation - planned.translation,
        rotation: angles,
        gimbal_degenerate,
    }
}

/// Decomposes `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn fixed_xyz_angles(r: &Matrix3<f64>) -> (Vector3<f64>, bool) {
    let sin_pitch = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    let degenerate = (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_TOL;
    if degenerate {
        // Only roll - yaw (or roll + yaw) is observable; pin roll to zero.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (Vector3::new(0.0, pitch, yaw), true)
    } else {
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        (Vector3::new(roll, pitch, yaw), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_close(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        let e = pose_error(a, b);
        assert!(
            e.translation_error <= tol && e.rotation_error <= tol,
            "{a:?} vs {b:?}: {e:?}"
        );
    }

    #[test]
    fn compose_identity() {
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&i), i);
    }

    #[test]
    fn compose_translation_then_rotation_maps_point() {
        let t = RigidTransform::translation_xyz(1.0, 0.0, 0.0).compose(&RigidTransform::rot_z(FRAC_PI_2));
        let p = t.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
        let t = RigidTransform::translation_xyz(1.0, 2.0, 3.0).inverse();
        assert_eq!(*t.translation(), Vector3::new(-1.0, -2.0, -3.0));
        assert_close(&RigidTransform::rot_z(FRAC_PI_2).inverse(), &RigidTransform::rot_z(-FRAC_PI_2), 1e-15);
    }

    #[test]
    fn canonical_rotation_removes_double_cover() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.7);
        let neg = RigidTransform::new(Unit::new_unchecked(-q.into_inner()), Vector3::zeros());
        assert_eq!(
            neg.canonical_rotation().coords,
            RigidTransform::from_rotation(q).canonical_rotation().coords
        );
    }

    #[test]
    fn json_format() {
        let t = RigidTransform::translation_xyz(0.5, -1.0, 2.0);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"q":[1.0,0.0,0.0,0.0],"t":[0.5,-1.0,2.0]}"#);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RigidTransform>(r#"{"q":[0,0,0,0],"t":[0,0,0]}"#).is_err());
    }

    #[test]
    fn unnormalized_json_quaternion_is_normalized() {
        let t: RigidTransform = serde_json::from_str(r#"{"q":[2,0,0,0],"t":[0,0,0]}"#).unwrap();
        assert!((t.rotation().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn resolve_self_is_identity() {
        let g = FrameGraph::new();
        assert_eq!(g.resolve(FrameId::N, FrameId::N).unwrap(), RigidTransform::identity());
    }

    #[test]
    fn resolve_two_edge_chain() {
        let t1 = RigidTransform::translation_xyz(1.0, 0.0, 0.0).compose(&RigidTransform::rot_x(0.3));
        let t2 = RigidTransform::translation_xyz(0.0, 2.0, 0.0).compose(&RigidTransform::rot_y(-0.4));
        let mut g = FrameGraph::new();
        g.add_edge(FrameId::N, FrameId::P, t1, 0.0).unwrap();
        g.add_edge(FrameId::P, FrameId::M, t2, 0.0).unwrap();
        assert_close(&g.resolve(FrameId::N, FrameId::M).unwrap(), &t1.compose(&t2), 1e-15);
        assert_close(&g.resolve(FrameId::M, FrameId::N).unwrap(), &t1.compose(&t2).inverse(), 1e-14);
    }

    #[test]
    fn resolve_against_edge_direction() {
        // A -> B and C -> B: A_T_C = A_T_B * (C_T_B)^-1
        let t_ab = RigidTransform::translation_xyz(0.1, 0.2, 0.3).compose(&RigidTransform::rot_z(0.5));
        let t_cb = RigidTransform::translation_xyz(-0.4, 0.0, 1.0).compose(&RigidTransform::rot_x(1.1));
        let mut g = FrameGraph::new();
        g.add_edge(FrameId::N, FrameId::OHolo, t_ab, 0.0).unwrap();
        g.add_edge(FrameId::H, FrameId::OHolo, t_cb, 0.0).unwrap();
        // Brute-force oracle: map a point through each edge explicitly.
        let p = Vector3::new(0.3, -0.7, 0.2);
        let via_b = t_ab.transform_point(&t_cb.inverse().transform_point(&p));
        let resolved = g.resolve(FrameId::N, FrameId::H).unwrap();
        assert!((resolved.transform_point(&p) - via_b).norm() < 1e-14);
    }

    #[test]
    fn disconnected_frames() {
        let mut g = FrameGraph::new();
        g.add_edge(FrameId::N, FrameId::P, RigidTransform::identity(), 0.0).unwrap();
        g.add_edge(FrameId::R, FrameId::E, RigidTransform::identity(), 0.0).unwrap();
        assert!(matches!(
            g.resolve(FrameId::N, FrameId::E),
            Err(GeometryError::DisconnectedFrames { .. })
        ));
    }

    #[test]
    fn duplicate_edge_rejected_and_set_edge_replaces() {
        let mut g = FrameGraph::new();
        g.add_edge(FrameId::N, FrameId::P, RigidTransform::identity(), 0.0).unwrap();
        assert!(matches!(
            g.add_edge(FrameId::N, FrameId::P, RigidTransform::identity(), 1.0),
            Err(GeometryError::DuplicateEdge { .. })
        ));
        let t = RigidTransform::translation_xyz(1.0, 0.0, 0.0);
        g.set_edge(FrameId::N, FrameId::P, t, 2.0).unwrap();
        assert_eq!(g.resolve(FrameId::N, FrameId::P).unwrap(), t);
    }

    #[test]
    fn consistent_cycle_resolves_and_inconsistent_cycle_is_ambiguous() {
        let a = RigidTransform::translation_xyz(1.0, 0.0, 0.0);
        let b = RigidTransform::rot_z(0.2);
        let mut g = FrameGraph::new();
        g.add_edge(FrameId::N, FrameId::P, a, 0.0).unwrap();
        g.add_edge(FrameId::P, FrameId::M, b, 0.0).unwrap();
        g.add_edge(FrameId::N, FrameId::M, a.compose(&b), 0.0).unwrap();
        assert!(g.resolve(FrameId::N, FrameId::M).is_ok());

        g.set_edge(FrameId::N, FrameId::M, a.compose(&b).compose(&RigidTransform::translation_xyz(0.0, 0.0, 1e-3)), 0.0)
            .unwrap();
        assert!(matches!(
            g.resolve(FrameId::N, FrameId::M),
            Err(GeometryError::AmbiguousPath { .. })
        ));
    }

    #[test]
    fn pose_error_examples() {
        let t = RigidTransform::translation_xyz(0.1, 0.2, 0.3).compose(&RigidTransform::rot_y(0.4));
        assert_eq!(pose_error(&t, &t), PoseError::default());
        let e = pose_error(
            &RigidTransform::identity(),
            &RigidTransform::translation_xyz(0.003, 0.004, 0.0),
        );
        assert!((e.translation_error - 0.005).abs() < 1e-15);
        let e = pose_error(&RigidTransform::identity(), &RigidTransform::rot_z(FRAC_PI_2));
        assert!((e.rotation_error - FRAC_PI_2).abs() < 1e-15);
        let e = pose_error(&RigidTransform::identity(), &RigidTransform::rot_x(PI));
        assert!((e.rotation_error - PI).abs() < 1e-12);
    }

    #[test]
    fn per_axis_examples() {
        let t = RigidTransform::rot_x(0.2);
        let e = per_axis_error(&t, &t);
        assert_eq!(e.translation, Vector3::zeros());
        assert_eq!(e.rotation, Vector3::zeros());

        let e = per_axis_error(
            &RigidTransform::identity(),
            &RigidTransform::translation_xyz(0.001, -0.002, 0.003),
        );
        assert_eq!(e.translation, Vector3::new(0.001, -0.002, 0.003));

        let ten = 10f64.to_radians();
        let e = per_axis_error(&RigidTransform::identity(), &RigidTransform::rot_x(ten));
        assert!((e.rotation - Vector3::new(ten, 0.0, 0.0)).norm() < 1e-14);
        assert!(!e.gimbal_degenerate);
    }

    #[test]
    fn per_axis_reconstructs_rotation() {
        // Oracle: rebuild the matrix from the reported angles.
        let actual = RigidTransform::rot_z(0.3)
            .compose(&RigidTransform::rot_y(-0.7))
            .compose(&RigidTransform::rot_x(1.2));
        let e = per_axis_error(&RigidTransform::identity(), &actual);
        let rebuilt = Rotation3::from_axis_angle(&Vector3::z_axis(), e.rotation.z)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), e.rotation.y)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), e.rotation.x);
        assert!((rebuilt.matrix() - actual.rotation_matrix()).norm() < 1e-14);
        assert!((e.rotation - Vector3::new(1.2, -0.7, 0.3)).norm() < 1e-13);
    }

    #[test]
    fn gimbal_flag() {
        let actual = RigidTransform::rot_z(0.4).compose(&RigidTransform::rot_y(FRAC_PI_2));
        let e = per_axis_error(&RigidTransform::identity(), &actual);
        assert!(e.gimbal_degenerate);
        let rebuilt = Rotation3::from_axis_angle(&Vector3::z_axis(), e.rotation.z)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), e.rotation.y)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), e.rotation.x);
        assert!((rebuilt.matrix() - actual.rotation_matrix()).norm() < 1e-9);
    }

    #[test]
    fn frame_names_round_trip() {
        for f in FrameId::ALL {
            assert_eq!(f.name().parse::<FrameId>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert!("X".parse::<FrameId>().is_err());
    }
}
