//! Subject-image registration: least-squares paired-point fit and ICP
//! refinement against a surface mesh.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::mesh::TriangleMesh;

pub const DEFAULT_ICP_MAX_ITERS: usize = 100;
pub const DEFAULT_ICP_TOL: f64 = 1e-6;

/// Relative singular-value floor below which the source spread is treated as
/// collinear (or coincident).
const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("need at least 3 point pairs, got {0}")]
    TooFewPoints(usize),
    #[error("source has {source_len} points but target has {target_len}")]
    SizeMismatch { source_len: usize, target_len: usize },
    #[error("source points are collinear or coincident")]
    DegenerateGeometry,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vector3<f64>>", into = "Vec<Vector3<f64>>")]
pub struct PointCloud(Vec<Vector3<f64>>);

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, RegistrationError> {
        if points.is_empty() {
            return Err(RegistrationError::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(RegistrationError::NonFinite(i));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud(self.0.iter().map(|p| t.transform_point(p)).collect())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.0.iter().sum::<Vector3<f64>>() / self.0.len() as f64
    }
}

impl TryFrom<Vec<Vector3<f64>>> for PointCloud {
    type Error = RegistrationError;

    fn try_from(v: Vec<Vector3<f64>>) -> Result<Self, Self::Error> {
        PointCloud::new(v)
    }
}

impl From<PointCloud> for Vec<Vector3<f64>> {
    fn from(c: PointCloud) -> Self {
        c.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps source coordinates into target coordinates.
    pub transform: RigidTransform,
    /// Residual RMS distance, meters.
    pub fre_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMS after each accepted step, starting with the initial estimate. Only
    /// filled by [`icp`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rms_history: Vec<f64>,
}

/// Least-squares rigid fit minimizing `Σ ‖T·sᵢ − tᵢ‖²` (SVD of the
/// cross-covariance with a determinant correction so the result is never a
/// reflection).
pub fn paired_point_register(
    source: &PointCloud,
    target: &PointCloud,
) -> Result<RegistrationResult, RegistrationError> {
    fit_rigid(source.points(), target.points()).map(|(transform, fre_rms)| RegistrationResult {
        transform,
        fre_rms,
        iterations: 0,
        converged: true,
        rms_history: Vec::new(),
    })
}

fn fit_rigid(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<(RigidTransform, f64), RegistrationError> {
    if source.len() != target.len() {
        return Err(RegistrationError::SizeMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    let n = source.len();
    if n < 3 {
        return Err(RegistrationError::TooFewPoints(n));
    }
    let cs = source.iter().sum::<Vector3<f64>>() / n as f64;
    let ct = target.iter().sum::<Vector3<f64>>() / n as f64;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - cs;
        let dt = t - ct;
        scatter += ds * ds.transpose();
        cross += ds * dt.transpose();
    }
    let mut spread = scatter.singular_values().as_slice().to_vec();
    spread.sort_by(|a, b| b.total_cmp(a));
    if spread[0] <= 0.0 || (spread[1] < DEGENERATE_RATIO * spread[0] && spread[2] < DEGENERATE_RATIO * spread[0]) {
        return Err(RegistrationError::DegenerateGeometry);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let transform = RigidTransform::from_matrix_parts(&rotation, Vector3::zeros());
    let translation = ct - transform.transform_point(&cs);
    let transform = RigidTransform::new(*transform.rotation(), translation);
    Ok((transform, rms_residual(&transform, source, target)))
}

fn rms_residual(t: &RigidTransform, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    let sum: f64 = source
        .iter()
        .zip(target)
        .map(|(s, q)| (t.transform_point(s) - q).norm_squared())
        .sum();
    (sum / source.len() as f64).sqrt()
}

/// Closest surface point of `mesh` to `p` (BVH accelerated) with its triangle.
pub fn closest_point_on_mesh(p: &Vector3<f64>, mesh: &TriangleMesh) -> (Vector3<f64>, usize) {
    let hit = mesh.closest_point(p);
    (hit.point, hit.triangle)
}

fn correspond(points: &[Vector3<f64>], mesh: &TriangleMesh) -> (Vec<Vector3<f64>>, f64) {
    let mut sum = 0.0;
    let closest: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| {
            let c = mesh.closest_point(p);
            sum += c.distance * c.distance;
            c.point
        })
        .collect();
    (closest, (sum / points.len() as f64).sqrt())
}

const MAX_EXTRAPOLATION: f64 = 64.0;

fn apply(t: &RigidTransform, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| t.transform_point(p)).collect()
}

/// `delta` raised to the power `scale` as a screw-free motion about `pivot`:
/// the rotation angle and the pivot displacement both scale.
fn scaled_about(delta: &RigidTransform, pivot: &Vector3<f64>, scale: f64) -> RigidTransform {
    let rotation = delta.rotation().powf(scale);
    let shift = (delta.transform_point(pivot) - pivot) * scale;
    let translation = pivot + shift - rotation * pivot;
    RigidTransform::new(rotation, translation)
}

/// Point-to-surface ICP mapping `source` onto `target_mesh`, starting from
/// `initial`.
///
/// Each step fits the source to its current closest surface points, then
/// tries the same motion scaled by 2, 4, .. 64 and keeps the best. A step is
/// only accepted if it does not raise the RMS, so `rms_history` never
/// increases. Iteration stops once a step moves the source points by less
/// than `tol` RMS (`converged = true`) or after `max_iters` steps.
pub fn icp(
    source: &PointCloud,
    target_mesh: &TriangleMesh,
    initial: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<RegistrationResult, RegistrationError> {
    let mut transform = *initial;
    let (mut closest, mut rms) = correspond(&apply(&transform, source.points()), target_mesh);
    let centroid = source.points().iter().sum::<Vector3<f64>>() / source.len() as f64;
    let mut history = vec![rms];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let (step, _) = fit_rigid(source.points(), &closest)?;
        let (mut next_closest, mut next_rms) = correspond(&apply(&step, source.points()), target_mesh);
        let mut next = step;
        if next_rms <= rms {
            // Smooth surfaces make plain steps crawl: stretch the step while
            // it keeps paying off.
            let delta = step * transform.inverse();
            let pivot = transform.transform_point(&centroid);
            let mut scale = 2.0;
            while scale <= MAX_EXTRAPOLATION {
                let candidate = scaled_about(&delta, &pivot, scale) * transform;
                let (c, r) = correspond(&apply(&candidate, source.points()), target_mesh);
                if r >= next_rms {
                    break;
                }
                (next, next_closest, next_rms) = (candidate, c, r);
                scale *= 2.0;
            }
        }
        if next_rms > rms {
            // Rounding-level uptick: nothing left to gain.
            converged = true;
            break;
        }
        let motion = rms_residual(&next, source.points(), &apply(&transform, source.points()));
        transform = next;
        closest = next_closest;
        rms = next_rms;
        history.push(rms);
        if motion < tol {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult {
        transform,
        fre_rms: rms,
        iterations,
        converged,
        rms_history: history,
    })
}
