//! Serial 7-DOF manipulator: forward/inverse kinematics, joint limits and
//! link collision geometry.

use std::path::Path;

use nalgebra::{Matrix6, SMatrix, SVector, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{primitive_distance, CollisionPrimitive};
use crate::geometry::{pose_error, RigidTransform};

pub const DOF: usize = 7;
pub const IK_DAMPING: f64 = 0.01;
pub const IK_MAX_ITERS: usize = 200;
pub const IK_TOL: f64 = 1e-6;
/// Largest per-joint change in a single IK update (radians).
const IK_MAX_STEP: f64 = 0.5;

const DEFAULT_MODEL: &str = include_str!("../data/default_arm.json");

#[derive(Debug, Error)]
pub enum ArmError {
    #[error("joint {joint} at {value} rad is outside [{lo}, {hi}]")]
    JointLimitViolation { joint: usize, value: f64, lo: f64, hi: f64 },
    #[error("IK did not converge (best residual {translation:.3e} m, {rotation:.3e} rad)")]
    IkNoConvergence { translation: f64, rotation: f64 },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("arm model parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub SVector<f64, DOF>);

impl JointConfig {
    pub fn zeros() -> Self {
        JointConfig(SVector::zeros())
    }

    pub fn from_slice(q: &[f64]) -> Self {
        JointConfig(SVector::from_column_slice(q))
    }

    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        (self.0 - other.0).amax()
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        (self.0 - other.0).norm()
    }

    pub fn lerp(&self, other: &JointConfig, s: f64) -> JointConfig {
        JointConfig(self.0 + (other.0 - self.0) * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkShape {
    pub link: usize,
    pub primitive: CollisionPrimitive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    #[serde(default)]
    pub name: String,
    /// Fixed transform from the previous link frame to joint i, applied
    /// before the joint rotation.
    pub link_offsets: Vec<RigidTransform>,
    pub joint_axes: Vec<Vector3<f64>>,
    pub joint_limits: Vec<[f64; 2]>,
    /// Last link frame to flange.
    pub flange_offset: RigidTransform,
    pub link_shapes: Vec<LinkShape>,
    /// Link pairs with index gap up to this value are not checked against
    /// each other (they share a joint centre).
    #[serde(default = "default_skip")]
    pub self_collision_skip: usize,
    #[serde(rename = "flange_T_instrument")]
    pub flange_t_instrument: RigidTransform,
}

fn default_skip() -> usize {
    1
}

impl Default for ArmModel {
    fn default() -> Self {
        Self::from_json(DEFAULT_MODEL).expect("embedded arm model is valid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FkResult {
    pub flange: RigidTransform,
    /// Pose of each link frame (after its joint rotation) in the base frame.
    pub links: Vec<RigidTransform>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Body {
    Link(usize),
    Obstacle { index: usize, label: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPair {
    pub a: Body,
    pub b: Body,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub in_collision: bool,
    /// Closest pair over all checked pairs.
    pub closest: Option<CollisionPair>,
}

impl ArmModel {
    pub fn from_json(text: &str) -> Result<Self, ArmError> {
        let m: ArmModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ArmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        let bad = |m: &str| Err(ArmError::InvalidModel(m.to_string()));
        if self.link_offsets.len() != DOF || self.joint_axes.len() != DOF || self.joint_limits.len() != DOF {
            return bad("expected 7 offsets, axes and limits");
        }
        if self.joint_axes.iter().any(|a| (a.norm() - 1.0).abs() > 1e-9) {
            return bad("joint axes must be unit vectors");
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi)) {
            return bad("joint limits must be non-empty intervals");
        }
        if self.link_shapes.iter().any(|s| s.link >= DOF || !s.primitive.is_valid()) {
            return bad("link shapes need a valid link index and positive size");
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        self.check_limits(q).is_ok()
    }

    pub fn check_limits(&self, q: &JointConfig) -> Result<(), ArmError> {
        for (joint, [lo, hi]) in self.joint_limits.iter().enumerate() {
            let value = q.0[joint];
            if !(value >= *lo && value <= *hi) {
                return Err(ArmError::JointLimitViolation {
                    joint,
                    value,
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        let mut out = *q;
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            out.0[i] = out.0[i].clamp(*lo, *hi);
        }
        out
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<FkResult, ArmError> {
        self.check_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    /// FK without the joint-limit check.
    pub fn fk_unchecked(&self, q: &JointConfig) -> FkResult {
        let mut t = RigidTransform::identity();
        let mut links = Vec::with_capacity(DOF);
        for i in 0..DOF {
            let axis = Unit::new_unchecked(self.joint_axes[i]);
            t = t * self.link_offsets[i] * RigidTransform::from_axis_angle(&axis, q.0[i]);
            links.push(t);
        }
        FkResult {
            flange: t * self.flange_offset,
            links,
        }
    }

    pub fn flange_pose(&self, q: &JointConfig) -> RigidTransform {
        self.fk_unchecked(q).flange
    }

    pub fn instrument_pose(&self, q: &JointConfig) -> RigidTransform {
        self.flange_pose(q) * self.flange_t_instrument
    }

    /// Geometric Jacobian of the flange (rows: linear, angular) in the base
    /// frame.
    pub fn jacobian(&self, q: &JointConfig) -> SMatrix<f64, 6, DOF> {
        let fk = self.fk_unchecked(q);
        let p = fk.flange.translation();
        let mut j = SMatrix::<f64, 6, DOF>::zeros();
        for i in 0..DOF {
            let frame = &fk.links[i];
            let axis = frame.transform_vector(&self.joint_axes[i]);
            let lin = axis.cross(&(p - frame.translation()));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        }
        j
    }

    /// Damped least-squares IK with adaptive damping: a step is kept only if
    /// it lowers the residual, otherwise the damping grows. Joint limits are
    /// enforced by clamping after every step.
    pub fn inverse_kinematics(
        &self,
        target_flange: &RigidTransform,
        seed: &JointConfig,
        tol: f64,
        max_iters: usize,
    ) -> Result<JointConfig, ArmError> {
        let residual = |q: &JointConfig| {
            let current = self.flange_pose(q);
            let e_t = target_flange.translation() - current.translation();
            let e_r = (target_flange.rotation() * current.rotation().inverse()).scaled_axis();
            (Vector6::new(e_t.x, e_t.y, e_t.z, e_r.x, e_r.y, e_r.z), pose_error(&current, target_flange))
        };
        let mut q = self.clamp(seed);
        let (mut e, mut err) = residual(&q);
        let mut lambda = IK_DAMPING;
        for _ in 0..max_iters {
            if err.translation_error < tol && err.rotation_error < tol {
                return Ok(q);
            }
            let j = self.jacobian(&q);
            let jjt = j * j.transpose() + Matrix6::identity() * (lambda * lambda);
            let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else { break };
            let mut dq = j.transpose() * y;
            let m = dq.amax();
            if m > IK_MAX_STEP {
                dq *= IK_MAX_STEP / m;
            }
            let trial = self.clamp(&JointConfig(q.0 + dq));
            let (e_new, err_new) = residual(&trial);
            if e_new.norm_squared() < e.norm_squared() {
                q = trial;
                e = e_new;
                err = err_new;
                lambda = (lambda * 0.5).max(1e-6);
            } else {
                lambda *= 4.0;
                if lambda > 1e3 {
                    break;
                }
            }
        }
        if err.translation_error < tol && err.rotation_error < tol {
            return Ok(q);
        }
        Err(ArmError::IkNoConvergence {
            translation: err.translation_error,
            rotation: err.rotation_error,
        })
    }

    /// Link shapes placed in the base frame for configuration `q`.
    pub fn posed_shapes(&self, q: &JointConfig) -> Vec<(usize, CollisionPrimitive)> {
        let fk = self.fk_unchecked(q);
        self.link_shapes
            .iter()
            .map(|s| (s.link, s.primitive.transformed(&fk.links[s.link])))
            .collect()
    }

    /// Brute-force check over every (link, obstacle) pair and every
    /// non-adjacent link pair.
    pub fn arm_in_collision(
        &self,
        q: &JointConfig,
        obstacles: &[CollisionPrimitive],
        clearance: f64,
    ) -> CollisionReport {
        let shapes = self.posed_shapes(q);
        let mut closest: Option<CollisionPair> = None;
        let mut consider = |a: Body, b: Body, d: f64| {
            if closest.as_ref().is_none_or(|c| d < c.distance) {
                closest = Some(CollisionPair { a, b, distance: d });
            }
        };
        for (link, shape) in &shapes {
            for (index, obstacle) in obstacles.iter().enumerate() {
                let d = primitive_distance(shape, obstacle);
                consider(
                    Body::Link(*link),
                    Body::Obstacle {
                        index,
                        label: obstacle.label.clone(),
                    },
                    d,
                );
            }
        }
        for (i, (la, sa)) in shapes.iter().enumerate() {
            for (lb, sb) in &shapes[i + 1..] {
                if la.abs_diff(*lb) <= self.self_collision_skip {
                    continue;
                }
                consider(Body::Link(*la), Body::Link(*lb), primitive_distance(sa, sb));
            }
        }
        let in_collision = closest.as_ref().is_some_and(|c| c.distance <= clearance);
        CollisionReport { in_collision, closest }
    }
}
