//! Monte Carlo virtual-to-real calibration experiment.

use nalgebra::{Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rams_core::calibration::{calibrate_batch, calibrate_single, evaluation_transform, CalibrationSample, EvaluationSample};
use rams_core::devices::{device_rng, DeviceError, SimWorld};
use rams_core::geometry::{FrameId, RigidTransform};
use rams_core::targeting::tangent_basis;

use crate::context::Context;
use crate::report::{ErrorRow, ReportError, Summary};
use crate::scenario::{CalibrationProtocol, ScenarioKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("scenario kind must be calibration_eval")]
    WrongKind,
    #[error("trial {trial}: {source}")]
    Device { trial: u32, source: DeviceError },
    #[error("all {0} trials were skipped")]
    AllSkipped(usize),
    #[error(transparent)]
    Calibration(#[from] rams_core::calibration::CalibrationError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub protocol: CalibrationProtocol,
    pub rows: Vec<ErrorRow>,
    /// Trials whose reference marker fell outside the HMD depth window.
    pub skipped: usize,
    pub summary: Summary,
    /// Calibration used in every evaluation under the batch protocol.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "oholo_T_h")]
    pub batch_estimate: Option<RigidTransform>,
}

fn random_axis(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return Unit::new_unchecked(v / n);
        }
    }
}

/// HMD pose and reference marker pose (both in R) for one trial: the HMD
/// jittered around its nominal pose, the marker inside the view cone at a
/// depth from the configured window, facing the HMD.
fn trial_geometry(ctx: &Context, rng: &mut ChaCha8Rng) -> (RigidTransform, RigidTransform) {
    let c = &ctx.scenario.calibration;
    let j = c.hmd_jitter;
    let offset = Vector3::new(rng.random_range(-j..=j), rng.random_range(-j..=j), rng.random_range(-j..=j));
    let tilt = RigidTransform::from_axis_angle(&random_axis(rng), rng.random_range(0.0..=c.hmd_tilt));
    let r_t_h = RigidTransform::from_translation(offset) * ctx.scenario.world.r_t_h * tilt;

    let cos_theta = rng.random_range(c.view_cone.cos()..=1.0);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
    let dir = Vector3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta);
    let depth = rng.random_range(c.depth_range[0]..=c.depth_range[1]);
    let (x, _) = tangent_basis(&(-dir));
    let facing = RigidTransform::from_axes_xz(&x, &(-dir), dir * depth);
    let roll = RigidTransform::rot_z(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    (r_t_h, r_t_h * facing * roll)
}

struct Trial {
    index: u32,
    world: SimWorld,
    sample: CalibrationSample,
}

fn measure(ctx: &Context, index: u32) -> Result<Option<Trial>, ExperimentError> {
    let seed = ctx.trial_seed(index);
    let mut world = ctx.sim_world(seed);
    let (r_t_h, r_t_oref) = trial_geometry(ctx, &mut device_rng(seed, "calibration.pose"));
    let dev = |source| ExperimentError::Device { trial: index, source };
    world.graph.set_edge(FrameId::R, FrameId::H, r_t_h, 0.0).map_err(|e| dev(e.into()))?;
    world.graph.set_edge(FrameId::R, FrameId::ORef, r_t_oref, 0.0).map_err(|e| dev(e.into()))?;
    let h_t_oref = match world.hmd_measure(FrameId::ORef) {
        Ok(m) => m,
        Err(DeviceError::OutOfRange { .. }) => return Ok(None),
        Err(e) => return Err(dev(e)),
    };
    let sample = CalibrationSample {
        n_t_oholo: world.tracker_measure(FrameId::OHolo).map_err(dev)?,
        n_t_oref: world.tracker_measure(FrameId::ORef).map_err(dev)?,
        h_t_oref,
    };
    Ok(Some(Trial { index, world, sample }))
}

/// The operator places the virtual reference marker where they see the
/// physical one; the tracker then re-measures both markers.
fn evaluate(ctx: &Context, t: &mut Trial, oholo_t_h: &RigidTransform) -> Result<ErrorRow, ExperimentError> {
    let dev = |source| ExperimentError::Device { trial: t.index, source };
    let w = &mut t.world;
    let w_t_h = w.graph.resolve(FrameId::W, FrameId::H).map_err(|e| dev(e.into()))?;
    let w_t_oref = w.graph.resolve(FrameId::W, FrameId::ORef).map_err(|e| dev(e.into()))?;
    let residual = ctx.noise.alignment.sample(w.stream("alignment"));
    let e = EvaluationSample {
        n_t_oholo: w.tracker_measure(FrameId::OHolo).map_err(dev)?,
        n_t_oref: w.tracker_measure(FrameId::ORef).map_err(dev)?,
        voref_t_oref: RigidTransform::identity(),
        w_t_voref: w_t_oref * residual,
        w_t_h,
        h_t_voholo: oholo_t_h.inverse(),
    };
    Ok(ErrorRow::from_poses(t.index, &RigidTransform::identity(), &evaluation_transform(&e)))
}

pub fn run_calibration_experiment(ctx: &Context) -> Result<CalibrationStats, ExperimentError> {
    if ctx.scenario.kind != ScenarioKind::CalibrationEval {
        return Err(ExperimentError::WrongKind);
    }
    let n = ctx.scenario.trials;
    let mut trials = Vec::with_capacity(n);
    for i in 0..n as u32 {
        if let Some(t) = measure(ctx, i)? {
            trials.push(t);
        }
    }
    let skipped = n - trials.len();
    if trials.is_empty() {
        return Err(ExperimentError::AllSkipped(n));
    }
    let protocol = ctx.scenario.calibration.protocol;
    let batch_estimate = match protocol {
        CalibrationProtocol::PerTrial => None,
        CalibrationProtocol::Batch => {
            let samples: Vec<_> = trials.iter().map(|t| t.sample).collect();
            Some(calibrate_batch(&samples)?.oholo_t_h)
        }
    };
    let mut rows = Vec::with_capacity(trials.len());
    for t in &mut trials {
        let estimate = batch_estimate.unwrap_or_else(|| calibrate_single(&t.sample));
        rows.push(evaluate(ctx, t, &estimate)?);
    }
    let mut summary = Summary::of(&rows)?;
    summary.skipped = skipped;
    Ok(CalibrationStats {
        protocol,
        rows,
        skipped,
        summary,
        batch_estimate,
    })
}
