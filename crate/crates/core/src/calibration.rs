//! Virtual-to-real calibration of the HMD.
//!
//! Both the external tracker and the HMD's inside-out tracker observe a free
//! reference marker. Chaining those observations with the tracker's view of
//! the marker fixed on the HMD yields `O_holo_T_H`, the constant offset between
//! that marker and the HMD's local frame:
//!
//! ```text
//! O_holo_T_H = (N_T_O_holo)⁻¹ · N_T_O_ref · (H_T_O_ref)⁻¹
//! W_T_N      = W_T_H · (O_holo_T_H)⁻¹ · (N_T_O_holo)⁻¹
//! ```
//!
//! The evaluation chain closes the loop through a virtual reference marker
//! aligned by the operator onto the physical one and returns the residual
//! `O_holo_T_VO_holo`, which is the identity for a perfect calibration.

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pose_error, PoseError, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no calibration samples")]
    EmptyInput,
}

/// One simultaneous observation of the reference marker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    #[serde(rename = "n_T_oholo")]
    pub n_t_oholo: RigidTransform,
    #[serde(rename = "n_T_oref")]
    pub n_t_oref: RigidTransform,
    /// Inside-out (HMD) measurement of the reference marker.
    #[serde(rename = "h_T_oref")]
    pub h_t_oref: RigidTransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(rename = "oholo_T_h")]
    pub oholo_t_h: RigidTransform,
    pub n_samples: usize,
    /// Worst translation and worst rotation deviation of a single-sample
    /// estimate from the aggregate (taken independently).
    pub spread: PoseError,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSample {
    #[serde(rename = "n_T_oholo")]
    pub n_t_oholo: RigidTransform,
    #[serde(rename = "n_T_oref")]
    pub n_t_oref: RigidTransform,
    /// Nominal placement of the virtual reference marker relative to the
    /// physical one; identity when the operator aligns them exactly.
    #[serde(rename = "voref_T_oref")]
    pub voref_t_oref: RigidTransform,
    #[serde(rename = "w_T_voref")]
    pub w_t_voref: RigidTransform,
    #[serde(rename = "w_T_h")]
    pub w_t_h: RigidTransform,
    /// Where the HMD renders the virtual copy of its own marker; the inverse
    /// of the calibration under test.
    #[serde(rename = "h_T_voholo")]
    pub h_t_voholo: RigidTransform,
}

pub fn calibrate_single(s: &CalibrationSample) -> RigidTransform {
    s.n_t_oholo.inverse() * s.n_t_oref * s.h_t_oref.inverse()
}

/// Averages per-sample estimates: arithmetic mean translation and chordal L2
/// mean rotation.
pub fn calibrate_batch(samples: &[CalibrationSample]) -> Result<CalibrationResult, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let estimates: Vec<RigidTransform> = samples.iter().map(calibrate_single).collect();
    let translation =
        estimates.iter().map(|e| *e.translation()).sum::<Vector3<f64>>() / estimates.len() as f64;
    let rotations: Vec<UnitQuaternion<f64>> = estimates.iter().map(|e| *e.rotation()).collect();
    let rotation = chordal_mean(&rotations);
    let oholo_t_h = RigidTransform::new(rotation, translation);

    let mut spread = PoseError::default();
    for e in &estimates {
        let d = pose_error(&oholo_t_h, e);
        spread.translation_error = spread.translation_error.max(d.translation_error);
        spread.rotation_error = spread.rotation_error.max(d.rotation_error);
    }
    Ok(CalibrationResult {
        oholo_t_h,
        n_samples: samples.len(),
        spread,
    })
}

/// Chordal L2 mean: principal eigenvector of `Σ qᵢ qᵢᵀ`, with the sign chosen
/// to agree with the first input. A single input (or identical inputs) is
/// returned unchanged.
pub fn chordal_mean(rotations: &[UnitQuaternion<f64>]) -> UnitQuaternion<f64> {
    let first = rotations[0];
    if rotations.iter().all(|q| q.coords == first.coords || q.coords == -first.coords) {
        return first;
    }
    let mut acc = Matrix4::zeros();
    for q in rotations {
        let v = q.coords;
        acc += v * v.transpose();
    }
    let eig = acc.symmetric_eigen();
    let best = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(best).into_owned();
    if v.dot(&first.coords) < 0.0 {
        v = -v;
    }
    // nalgebra stores quaternion coords as (i, j, k, w).
    UnitQuaternion::new_normalize(Quaternion::new(v[3], v[0], v[1], v[2]))
}

pub fn world_to_tracker(
    w_t_h: &RigidTransform,
    oholo_t_h: &RigidTransform,
    n_t_oholo: &RigidTransform,
) -> RigidTransform {
    *w_t_h * oholo_t_h.inverse() * n_t_oholo.inverse()
}

/// The six-factor residual `O_holo_T_VO_holo`.
pub fn evaluation_transform(e: &EvaluationSample) -> RigidTransform {
    e.n_t_oholo.inverse() * e.n_t_oref * e.voref_t_oref.inverse() * e.w_t_voref.inverse() * e.w_t_h * e.h_t_voholo
}

pub fn evaluate_calibration(e: &EvaluationSample) -> PoseError {
    pose_error(&RigidTransform::identity(), &evaluation_transform(e))
}

/// Ground-truth poses needed to synthesize calibration observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRig {
    #[serde(rename = "n_T_oholo")]
    pub n_t_oholo: RigidTransform,
    #[serde(rename = "oholo_T_h")]
    pub oholo_t_h: RigidTransform,
    #[serde(rename = "n_T_oref")]
    pub n_t_oref: RigidTransform,
}

impl CalibrationRig {
    pub fn n_t_h(&self) -> RigidTransform {
        self.n_t_oholo * self.oholo_t_h
    }

    /// Noise-free sample consistent with this rig.
    pub fn exact_sample(&self) -> CalibrationSample {
        CalibrationSample {
            n_t_oholo: self.n_t_oholo,
            n_t_oref: self.n_t_oref,
            h_t_oref: self.n_t_h().inverse() * self.n_t_oref,
        }
    }

    /// Evaluation sample for a calibration estimate, given the HMD's world
    /// pose and the operator's alignment residual `oref_T_voref` (pose of the
    /// placed virtual marker relative to the physical one).
    pub fn evaluation_sample(
        &self,
        w_t_h: &RigidTransform,
        estimate: &RigidTransform,
        oref_t_voref: &RigidTransform,
    ) -> EvaluationSample {
        let w_t_n = *w_t_h * self.n_t_h().inverse();
        EvaluationSample {
            n_t_oholo: self.n_t_oholo,
            n_t_oref: self.n_t_oref,
            voref_t_oref: RigidTransform::identity(),
            w_t_voref: w_t_n * self.n_t_oref * *oref_t_voref,
            w_t_h: *w_t_h,
            h_t_voholo: estimate.inverse(),
        }
    }
}
