//! Operator model: head and wrist tracking turned into upper-limb poses and
//! collision primitives.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::collision::{CollisionPrimitive, Shape};
use crate::geometry::RigidTransform;

pub const DEFAULT_AVATAR_MARGIN: f64 = 0.05;
pub const UPPER_ARM_RADIUS: f64 = 0.05;
pub const FOREARM_RADIUS: f64 = 0.04;
pub const HAND_RADIUS: f64 = 0.06;
/// Elbow hint tilt away from straight down, toward the body side.
pub const ELBOW_HINT_TILT: f64 = std::f64::consts::PI / 6.0;
pub const MAX_HAND_DISTANCE: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumanError {
    #[error("elbow hint is parallel to the shoulder-wrist axis")]
    DegenerateHint,
    #[error("{side} hand is {distance:.3} m from the head")]
    HandTooFar { side: &'static str, distance: f64 },
    #[error("body dimension {0} must be positive")]
    InvalidDimension(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyDimensions {
    pub shoulder_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub torso_height: f64,
    pub head_radius: f64,
}

impl Default for BodyDimensions {
    fn default() -> Self {
        Self {
            shoulder_width: 0.40,
            upper_arm: 0.30,
            forearm: 0.27,
            torso_height: 0.55,
            head_radius: 0.11,
        }
    }
}

impl BodyDimensions {
    pub fn validate(&self) -> Result<(), HumanError> {
        let fields = [
            ("shoulder_width", self.shoulder_width),
            ("upper_arm", self.upper_arm),
            ("forearm", self.forearm),
            ("torso_height", self.torso_height),
            ("head_radius", self.head_radius),
        ];
        for (name, v) in fields {
            if !(v > 0.0) {
                return Err(HumanError::InvalidDimension(name));
            }
        }
        Ok(())
    }

    pub fn torso_radius(&self) -> f64 {
        self.shoulder_width / 2.5
    }
}

/// Head pose uses +x forward, +y to the operator's left, +z up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvatarTracking {
    pub head_pose: RigidTransform,
    pub left_hand: Option<Vector3<f64>>,
    pub right_hand: Option<Vector3<f64>>,
}

impl AvatarTracking {
    pub fn new(
        head_pose: RigidTransform,
        left_hand: Option<Vector3<f64>>,
        right_hand: Option<Vector3<f64>>,
    ) -> Result<Self, HumanError> {
        let t = Self {
            head_pose,
            left_hand,
            right_hand,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), HumanError> {
        for (side, hand) in [("left", self.left_hand), ("right", self.right_hand)] {
            if let Some(h) = hand {
                let distance = (h - self.head_pose.translation()).norm();
                if distance > MAX_HAND_DISTANCE {
                    return Err(HumanError::HandTooFar { side, distance });
                }
            }
        }
        Ok(())
    }

    pub fn transformed(&self, g: &RigidTransform) -> AvatarTracking {
        AvatarTracking {
            head_pose: *g * self.head_pose,
            left_hand: self.left_hand.map(|h| g.transform_point(&h)),
            right_hand: self.right_hand.map(|h| g.transform_point(&h)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSolution {
    pub shoulder: Vector3<f64>,
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
    pub reachable: bool,
}

/// Two-bone analytic IK. The elbow lies in the plane of the shoulder-wrist
/// axis and the hint, on the hint side; out-of-range targets give a straight
/// (or fully folded) arm pointing at the target with `reachable = false`.
pub fn solve_arm_ik(
    shoulder: &Vector3<f64>,
    target_wrist: &Vector3<f64>,
    dims: &BodyDimensions,
    elbow_hint: &Vector3<f64>,
) -> Result<ArmSolution, HumanError> {
    let (l1, l2) = (dims.upper_arm, dims.forearm);
    let d = target_wrist - shoulder;
    let dist = d.norm();
    if dist < 1e-12 {
        return Err(HumanError::DegenerateHint);
    }
    let axis = d / dist;
    let perp = elbow_hint - axis * axis.dot(elbow_hint);
    if perp.norm() < 1e-9 * elbow_hint.norm().max(1.0) {
        return Err(HumanError::DegenerateHint);
    }
    let bend = perp.normalize();
    let (min_reach, max_reach) = ((l1 - l2).abs(), l1 + l2);
    let reachable = dist >= min_reach && dist <= max_reach;
    let dc = dist.clamp(min_reach, max_reach);
    let cos_a = ((l1 * l1 + dc * dc - l2 * l2) / (2.0 * l1 * dc)).clamp(-1.0, 1.0);
    let sin_a = (1.0 - cos_a * cos_a).sqrt();
    let elbow = shoulder + (axis * cos_a + bend * sin_a) * l1;
    let wrist = if reachable { *target_wrist } else { shoulder + axis * dc };
    Ok(ArmSolution {
        shoulder: *shoulder,
        elbow,
        wrist,
        reachable,
    })
}

/// Interior elbow angle of a solution (radians, π for a straight arm).
pub fn elbow_angle(s: &ArmSolution) -> f64 {
    let a = s.shoulder - s.elbow;
    let b = s.wrist - s.elbow;
    a.angle(&b)
}

/// Neck point and the horizontal left-pointing axis for a head pose.
pub fn body_frame(head_pose: &RigidTransform, dims: &BodyDimensions) -> (Vector3<f64>, Vector3<f64>) {
    let neck = head_pose.translation() - Vector3::z() * dims.head_radius;
    let y = head_pose.axis(1);
    let mut lateral = Vector3::new(y.x, y.y, 0.0);
    if lateral.norm() < 1e-6 {
        // Head rolled onto its side: fall back to the forward axis.
        let x = head_pose.axis(0);
        lateral = Vector3::z().cross(&Vector3::new(x.x, x.y, 0.0));
    }
    let lateral = lateral.try_normalize(1e-12).unwrap_or_else(Vector3::y);
    (neck, lateral)
}

pub fn shoulders(head_pose: &RigidTransform, dims: &BodyDimensions) -> (Vector3<f64>, Vector3<f64>) {
    let (neck, lateral) = body_frame(head_pose, dims);
    let half = dims.shoulder_width / 2.0;
    (neck + lateral * half, neck - lateral * half)
}

/// Default elbow hint for a side (`outward` is the unit vector from the neck
/// toward that shoulder).
pub fn default_elbow_hint(outward: &Vector3<f64>) -> Vector3<f64> {
    -Vector3::z() * ELBOW_HINT_TILT.cos() + outward * ELBOW_HINT_TILT.sin()
}

fn arm_primitives(
    out: &mut Vec<CollisionPrimitive>,
    side: &str,
    shoulder: &Vector3<f64>,
    outward: &Vector3<f64>,
    forward: &Vector3<f64>,
    wrist: &Vector3<f64>,
    dims: &BodyDimensions,
    margin: f64,
) {
    let sol = solve_arm_ik(shoulder, wrist, dims, &default_elbow_hint(outward))
        .or_else(|_| solve_arm_ik(shoulder, wrist, dims, forward))
        .or_else(|_| solve_arm_ik(shoulder, wrist, dims, outward));
    let Ok(sol) = sol else {
        // Wrist exactly at the shoulder: only the hand is meaningful.
        out.push(CollisionPrimitive::sphere(*wrist, HAND_RADIUS, format!("{side}_hand")).with_margin(margin));
        return;
    };
    out.push(
        CollisionPrimitive::capsule(sol.shoulder, sol.elbow, UPPER_ARM_RADIUS, format!("{side}_upper_arm"))
            .with_margin(margin),
    );
    out.push(
        CollisionPrimitive::capsule(sol.elbow, sol.wrist, FOREARM_RADIUS, format!("{side}_forearm")).with_margin(margin),
    );
    out.push(CollisionPrimitive::sphere(sol.wrist, HAND_RADIUS, format!("{side}_hand")).with_margin(margin));
}

/// Head sphere, torso capsule hanging along world −z from the neck, and per
/// tracked hand an upper-arm capsule, forearm capsule and hand sphere.
pub fn avatar_to_collision_objects(
    t: &AvatarTracking,
    dims: &BodyDimensions,
    margin: f64,
) -> Vec<CollisionPrimitive> {
    let mut out = Vec::with_capacity(8);
    out.push(CollisionPrimitive::sphere(*t.head_pose.translation(), dims.head_radius, "head").with_margin(margin));
    let (neck, lateral) = body_frame(&t.head_pose, dims);
    let r = dims.torso_radius().min(dims.torso_height / 2.0);
    out.push(
        CollisionPrimitive::capsule(
            neck - Vector3::z() * r,
            neck - Vector3::z() * (dims.torso_height - r),
            r,
            "main_body",
        )
        .with_margin(margin),
    );
    let forward = lateral.cross(&Vector3::z());
    let (left_shoulder, right_shoulder) = shoulders(&t.head_pose, dims);
    if let Some(w) = t.left_hand {
        arm_primitives(&mut out, "left", &left_shoulder, &lateral, &forward, &w, dims, margin);
    }
    if let Some(w) = t.right_hand {
        arm_primitives(&mut out, "right", &right_shoulder, &-lateral, &forward, &w, dims, margin);
    }
    out
}

/// Grows radii or half-extents by `extra`; pose, label and margin unchanged.
pub fn inflate(p: &CollisionPrimitive, extra: f64) -> CollisionPrimitive {
    let extra = extra.max(0.0);
    let shape = match &p.shape {
        Shape::Sphere { center, radius } => Shape::Sphere {
            center: *center,
            radius: radius + extra,
        },
        Shape::Capsule { p0, p1, radius } => Shape::Capsule {
            p0: *p0,
            p1: *p1,
            radius: radius + extra,
        },
        Shape::Box { pose, half_extents } => Shape::Box {
            pose: *pose,
            half_extents: half_extents.add_scalar(extra),
        },
    };
    CollisionPrimitive {
        shape,
        label: p.label.clone(),
        margin: p.margin,
    }
}
