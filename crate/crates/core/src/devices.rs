//! Simulated tracker, HMD inside-out tracker, clicker and robot, with
//! configurable noise and deterministic per-device random streams.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmModel, JointConfig, DOF};
use crate::geometry::{FrameGraph, FrameId, GeometryError, RigidTransform};
use crate::planning::{PlanningScene, RobotHandle};
use crate::targeting::ClickerState;

/// Inside-out tracking works only within this depth window (meters).
pub const HMD_MIN_DEPTH: f64 = 0.25;
pub const HMD_MAX_DEPTH: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("marker {0} is not visible")]
    MarkerNotVisible(FrameId),
    #[error("marker at {depth:.3} m is outside the HMD tracking range")]
    OutOfRange { depth: f64 },
    #[error("clicker script timestamps must be non-decreasing")]
    NonMonotoneScript,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis standard deviation of translation noise, meters.
    pub sigma_translation: f64,
    /// Standard deviation of the rotation angle about a random axis, radians.
    pub sigma_rotation: f64,
    #[serde(default)]
    pub time_offset_sigma: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(sigma_translation: f64, sigma_rotation: f64) -> Self {
        Self {
            sigma_translation,
            sigma_rotation,
            time_offset_sigma: 0.0,
        }
    }

    /// Approximation of an optical tracker: 0.25 mm, 0.05°.
    pub fn polaris() -> Self {
        Self::new(0.25e-3, 0.05f64.to_radians())
    }

    /// Approximation of inside-out marker tracking on the HMD: 0.5 mm, 0.2°.
    pub fn sttar() -> Self {
        Self::new(0.5e-3, 0.2f64.to_radians())
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "zero" | "none" => Some(Self::zero()),
            "polaris" => Some(Self::polaris()),
            "sttar" => Some(Self::sttar()),
            _ => None,
        }
    }

    /// Noise whose 3-D translation error has RMS `rms` (per-axis σ = rms/√3).
    pub fn from_rms_translation(rms: f64, sigma_rotation: f64) -> Self {
        Self::new(rms / 3f64.sqrt(), sigma_rotation)
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_translation == 0.0 && self.sigma_rotation == 0.0 && self.time_offset_sigma == 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_translation >= 0.0 && self.sigma_rotation >= 0.0 && self.time_offset_sigma >= 0.0
    }

    /// Random perturbation. The same number of draws is consumed whatever the
    /// sigmas, so streams stay aligned across noise levels.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidTransform {
        let t = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * self.sigma_translation;
        let axis = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let angle = rng.sample::<f64, _>(StandardNormal) * self.sigma_rotation;
        if angle == 0.0 {
            return RigidTransform::from_translation(t);
        }
        let axis = Unit::try_new(axis, 1e-12).unwrap_or(Vector3::z_axis());
        RigidTransform::new(nalgebra::UnitQuaternion::from_axis_angle(&axis, angle), t)
    }

    pub fn sample_time_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.sample::<f64, _>(StandardNormal) * self.time_offset_sigma
    }
}

/// 64-bit FNV-1a, used to turn device labels into stream ids.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream of the master seed for one device label.
pub fn device_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

/// SplitMix64 mix of a master seed and an index (per-trial seeds).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Constant-velocity motion of a frame relative to the tracker, used when a
/// device reports a measurement with a time offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickerEvent {
    pub time: f64,
    #[serde(default)]
    pub joystick: [f64; 2],
    #[serde(default)]
    pub button: bool,
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    pub graph: FrameGraph,
    pub tracker: NoiseModel,
    pub hmd: NoiseModel,
    /// Per-joint noise for [`SimWorld::robot_step`] (`sigma_rotation`, rad).
    pub robot: NoiseModel,
    pub seed: u64,
    pub invisible: BTreeSet<FrameId>,
    pub motion: BTreeMap<FrameId, Motion>,
    rngs: BTreeMap<String, ChaCha8Rng>,
}

impl SimWorld {
    pub fn new(graph: FrameGraph, seed: u64) -> Self {
        Self {
            graph,
            tracker: NoiseModel::zero(),
            hmd: NoiseModel::zero(),
            robot: NoiseModel::zero(),
            seed,
            invisible: BTreeSet::new(),
            motion: BTreeMap::new(),
            rngs: BTreeMap::new(),
        }
    }

    pub fn stream(&mut self, label: &str) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.rngs
            .entry(label.to_string())
            .or_insert_with(|| device_rng(seed, label))
    }

    fn moved(&self, marker: FrameId, truth: RigidTransform, dt: f64) -> RigidTransform {
        match self.motion.get(&marker) {
            Some(m) if dt != 0.0 => {
                let angle = m.angular.norm() * dt;
                let rot = Unit::try_new(m.angular, 1e-15)
                    .map(|axis| RigidTransform::from_axis_angle(&axis, angle))
                    .unwrap_or_default();
                let t = truth.translation() + m.linear * dt;
                RigidTransform::new(*rot.rotation() * truth.rotation(), t)
            }
            _ => truth,
        }
    }

    fn measure(&mut self, from: FrameId, marker: FrameId, label: &str, noise: NoiseModel) -> Result<(RigidTransform, RigidTransform), DeviceError> {
        if self.invisible.contains(&marker) {
            return Err(DeviceError::MarkerNotVisible(marker));
        }
        let truth = self.graph.resolve(from, marker)?;
        let rng = self.stream(label);
        let dt = noise.sample_time_offset(rng);
        let perturbation = noise.sample(rng);
        let observed = self.moved(marker, truth, dt);
        Ok((truth, observed * perturbation))
    }

    /// Tracker-frame pose of `marker` with tracker noise.
    pub fn tracker_measure(&mut self, marker: FrameId) -> Result<RigidTransform, DeviceError> {
        let noise = self.tracker;
        self.measure(FrameId::N, marker, "tracker", noise).map(|(_, m)| m)
    }

    /// HMD-frame pose of `marker` with HMD noise; fails outside the depth
    /// window (Euclidean range from the HMD origin).
    pub fn hmd_measure(&mut self, marker: FrameId) -> Result<RigidTransform, DeviceError> {
        if self.invisible.contains(&marker) {
            return Err(DeviceError::MarkerNotVisible(marker));
        }
        let depth = self.graph.resolve(FrameId::H, marker)?.translation().norm();
        if !(HMD_MIN_DEPTH..=HMD_MAX_DEPTH).contains(&depth) {
            return Err(DeviceError::OutOfRange { depth });
        }
        let noise = self.hmd;
        self.measure(FrameId::H, marker, "hmd", noise).map(|(_, m)| m)
    }

    /// One clicker state per scripted event, each carrying a fresh tracker
    /// measurement of the clicker frame.
    pub fn clicker_emit(&mut self, script: &[ClickerEvent]) -> Result<Vec<ClickerState>, DeviceError> {
        if script.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(DeviceError::NonMonotoneScript);
        }
        script
            .iter()
            .map(|e| {
                let pose = self.tracker_measure(FrameId::C)?;
                Ok(ClickerState::new(pose, Vector2::new(e.joystick[0], e.joystick[1]), e.button))
            })
            .collect()
    }

    pub fn robot_step(&mut self, q: &JointConfig) -> JointConfig {
        let sigma = self.robot.sigma_rotation;
        joint_noise(q, sigma, self.stream("robot"))
    }
}

fn joint_noise<R: Rng + ?Sized>(q: &JointConfig, sigma: f64, rng: &mut R) -> JointConfig {
    let mut out = *q;
    for i in 0..DOF {
        out.0[i] += rng.sample::<f64, _>(StandardNormal) * sigma;
    }
    out
}

/// Simulated robot for trajectory execution. Joint noise is applied to every
/// commanded waypoint; the execution noise perturbs the final flange pose.
#[derive(Clone, Debug)]
pub struct SimRobot {
    pub arm: ArmModel,
    pub joint_sigma: f64,
    pub execution: NoiseModel,
    /// Frame, relative to the flange, in which the execution noise acts
    /// (typically the instrument).
    pub noise_frame: RigidTransform,
    /// Scene re-checked at every step; a violation aborts execution.
    pub monitor: Option<PlanningScene>,
    pub achieved: Vec<JointConfig>,
    joint_rng: ChaCha8Rng,
    exec_rng: ChaCha8Rng,
}

impl SimRobot {
    pub fn new(arm: ArmModel, joint_sigma: f64, execution: NoiseModel, seed: u64) -> Self {
        Self {
            arm,
            joint_sigma,
            execution,
            noise_frame: RigidTransform::identity(),
            monitor: None,
            achieved: Vec::new(),
            joint_rng: device_rng(seed, "robot.joint"),
            exec_rng: device_rng(seed, "robot.exec"),
        }
    }
}

impl RobotHandle for SimRobot {
    fn step(&mut self, q: &JointConfig) -> Result<JointConfig, String> {
        let achieved = if self.joint_sigma > 0.0 {
            joint_noise(q, self.joint_sigma, &mut self.joint_rng)
        } else {
            *q
        };
        if let Some(scene) = &self.monitor {
            if !scene.config_valid(&achieved) {
                return Err("collision against refreshed scene".into());
            }
        }
        self.achieved.push(achieved);
        Ok(achieved)
    }

    fn finish(&mut self, last: &JointConfig) -> RigidTransform {
        let delta = self.execution.sample(&mut self.exec_rng);
        self.arm.flange_pose(last) * self.noise_frame * delta * self.noise_frame.inverse()
    }
}
