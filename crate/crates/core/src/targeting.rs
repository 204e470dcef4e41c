//! Instrument placement planning: clicker ray picking on anatomy, joystick
//! fine-tuning along the surface, and instrument poses for the two workflows.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::mesh::TriangleMesh;

/// Joystick displacement per event at full deflection.
pub const DEFAULT_JOYSTICK_STEP: f64 = 1e-3;

/// Roll references closer than this to the axis they are projected against
/// are rejected.
pub const MIN_ROLL_ANGLE: f64 = std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("ray does not intersect the anatomy")]
    NoIntersection,
    #[error("roll reference is parallel to the tool axis")]
    DegenerateRoll,
    #[error("entry and injection points coincide")]
    DegenerateLine,
    #[error("standoff must be non-negative, got {0}")]
    NegativeStandoff(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickerState {
    /// Probe pose in the frame the anatomy is expressed in; the ray runs along
    /// the probe +z axis.
    pub pose: RigidTransform,
    pub joystick: Vector2<f64>,
    pub button_pressed: bool,
}

impl ClickerState {
    pub fn new(pose: RigidTransform, joystick: Vector2<f64>, button_pressed: bool) -> Self {
        Self {
            pose,
            joystick: joystick.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }),
            button_pressed,
        }
    }

    pub fn ray(&self) -> (Vector3<f64>, Vector3<f64>) {
        (*self.pose.translation(), self.pose.axis(2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnatomicalTarget {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub triangle: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPose {
    pub pose: RigidTransform,
    pub standoff: f64,
}

pub fn cast_ray(clicker: &ClickerState, anatomy: &TriangleMesh) -> Result<AnatomicalTarget, TargetError> {
    let (origin, dir) = clicker.ray();
    let hit = anatomy.ray_cast(&origin, &dir).ok_or(TargetError::NoIntersection)?;
    let mut normal = anatomy.triangle_normal(hit.triangle);
    if normal.dot(&dir) > 0.0 {
        normal = -normal;
    }
    Ok(AnatomicalTarget {
        position: hit.point,
        normal,
        triangle: hit.triangle,
    })
}

/// First and second tangent axes at a surface normal. The first axis is the
/// world x axis projected onto the tangent plane (world y when x is nearly
/// normal to the surface).
pub fn tangent_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let mut seed = Vector3::x();
    if n.dot(&seed).abs() > 0.9 {
        seed = Vector3::y();
    }
    let u = (seed - n * n.dot(&seed)).normalize();
    (u, n.cross(&u))
}

/// Moves the target by `step · delta` in the tangent plane and snaps it back
/// onto the mesh.
pub fn adjust_target(
    target: &AnatomicalTarget,
    delta: &Vector2<f64>,
    anatomy: &TriangleMesh,
    step: f64,
) -> AnatomicalTarget {
    if delta.x == 0.0 && delta.y == 0.0 {
        return *target;
    }
    let (u, v) = tangent_basis(&target.normal);
    let moved = target.position + (u * delta.x + v * delta.y) * step;
    let snap = anatomy.closest_point(&moved);
    let mut normal = anatomy.triangle_normal(snap.triangle);
    if normal.dot(&target.normal) < 0.0 {
        normal = -normal;
    }
    AnatomicalTarget {
        position: snap.point,
        normal,
        triangle: snap.triangle,
    }
}

fn projected_roll(roll_reference: &Vector3<f64>, axis: &Vector3<f64>) -> Result<Vector3<f64>, TargetError> {
    let r = roll_reference.try_normalize(1e-12).ok_or(TargetError::DegenerateRoll)?;
    let perp = r - axis * axis.dot(&r);
    if perp.norm() < MIN_ROLL_ANGLE.sin() {
        return Err(TargetError::DegenerateRoll);
    }
    Ok(perp.normalize())
}

/// Coil pose: tool −z along the inward normal, tool +x along the roll
/// reference projected onto the tangent plane, origin `standoff` above the
/// target along the normal.
pub fn tms_coil_pose(
    target: &AnatomicalTarget,
    standoff: f64,
    roll_reference: &Vector3<f64>,
) -> Result<InstrumentPose, TargetError> {
    if standoff < 0.0 || standoff.is_nan() {
        return Err(TargetError::NegativeStandoff(standoff));
    }
    let n = target.normal.normalize();
    let x = projected_roll(roll_reference, &n)?;
    let origin = target.position + n * standoff;
    Ok(InstrumentPose {
        pose: RigidTransform::from_axes_xz(&x, &(-n), origin),
        standoff,
    })
}

/// Drill pose: tool +z from the entry point toward the injection point, origin
/// at the entry.
pub fn femoroplasty_pose(
    entry: &Vector3<f64>,
    injection: &Vector3<f64>,
    roll_reference: &Vector3<f64>,
) -> Result<InstrumentPose, TargetError> {
    let line = injection - entry;
    if line.norm() <= 1e-6 {
        return Err(TargetError::DegenerateLine);
    }
    let z = line.normalize();
    let x = projected_roll(roll_reference, &z)?;
    Ok(InstrumentPose {
        pose: RigidTransform::from_axes_xz(&x, &z, *entry),
        standoff: 0.0,
    })
}
