//! Scenario configuration: one JSON document fully determines a run.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use rams_core::devices::{ClickerEvent, NoiseModel};
use rams_core::geometry::{FrameId, RigidTransform};
use rams_core::human::{BodyDimensions, DEFAULT_AVATAR_MARGIN};
use rams_core::planning::{PlannerParams, DEFAULT_IK_SEEDS, DEFAULT_MAX_STEP, DEFAULT_NODE_BUDGET};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown noise preset {0:?}")]
    UnknownPreset(String),
    #[error("anatomy mesh: {0}")]
    Mesh(#[from] rams_core::mesh::MeshError),
    #[error("arm model: {0}")]
    Arm(#[from] rams_core::arm::ArmError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Tms,
    Femoroplasty,
    CalibrationEval,
}

/// A preset name, a per-axis model, or a model given by its 3-D translation
/// RMS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Preset(String),
    Rms {
        rms_translation: f64,
        #[serde(default)]
        sigma_rotation: f64,
        #[serde(default)]
        time_offset_sigma: f64,
    },
    Model(NoiseModel),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Model(NoiseModel::zero())
    }
}

impl NoiseSpec {
    pub fn resolve(&self) -> Result<NoiseModel, ScenarioError> {
        let m = match self {
            NoiseSpec::Preset(name) => NoiseModel::preset(name).ok_or_else(|| ScenarioError::UnknownPreset(name.clone()))?,
            NoiseSpec::Rms {
                rms_translation,
                sigma_rotation,
                time_offset_sigma,
            } => NoiseModel {
                time_offset_sigma: *time_offset_sigma,
                ..NoiseModel::from_rms_translation(*rms_translation, *sigma_rotation)
            },
            NoiseSpec::Model(m) => *m,
        };
        if !m.is_valid() {
            return Err(ScenarioError::Invalid(format!("negative noise sigma in {self:?}")));
        }
        Ok(m)
    }
}

/// Ground truth of the physical setup, expressed relative to the robot base
/// `R` (z up), plus device noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    #[serde(rename = "R_T_N")]
    pub r_t_n: RigidTransform,
    #[serde(rename = "R_T_P")]
    pub r_t_p: RigidTransform,
    #[serde(rename = "P_T_M")]
    pub p_t_m: RigidTransform,
    /// Operator head, which is also the HMD frame (+x forward, +z up).
    #[serde(rename = "R_T_H")]
    pub r_t_h: RigidTransform,
    #[serde(rename = "H_T_O_holo")]
    pub h_t_oholo: RigidTransform,
    #[serde(rename = "R_T_O_ref")]
    pub r_t_oref: RigidTransform,
    #[serde(rename = "W_T_R")]
    pub w_t_r: RigidTransform,
    #[serde(default)]
    pub left_hand: Option<[f64; 3]>,
    #[serde(default)]
    pub right_hand: Option<[f64; 3]>,
    #[serde(default)]
    pub body: BodyDimensions,
    #[serde(default = "default_margin")]
    pub avatar_margin: f64,
    #[serde(default)]
    pub tracker_noise: NoiseSpec,
    #[serde(default)]
    pub hmd_noise: NoiseSpec,
    /// Perturbation of the final flange pose.
    #[serde(default)]
    pub execution_noise: NoiseSpec,
    /// Per-joint Gaussian noise on every commanded waypoint, radians.
    #[serde(default)]
    pub robot_joint_sigma: f64,
    /// Extra error injected into the HMD-world to tracker estimate.
    #[serde(default)]
    pub calibration_error: NoiseSpec,
    /// Operator error when aligning a virtual marker with the physical one.
    #[serde(default)]
    pub alignment_noise: NoiseSpec,
    #[serde(default)]
    pub invisible: Vec<FrameId>,
    /// Loss rate of the simulated clicker datagram link (networked mode).
    #[serde(default)]
    pub datagram_drop_rate: f64,
    /// Copies of each clicker datagram sent in networked mode.
    #[serde(default = "default_redundancy")]
    pub clicker_redundancy: usize,
}

fn default_margin() -> f64 {
    DEFAULT_AVATAR_MARGIN
}

fn default_redundancy() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickerScript {
    pub events: Vec<ClickerEvent>,
    /// Distance from the aimed point at which the operator holds the probe.
    #[serde(default = "default_aim_distance")]
    pub distance: f64,
}

fn default_aim_distance() -> f64 {
    0.12
}

/// A target in the image frame. Without a clicker script the point is used
/// directly (snapped to the anatomy); with one, the operator aims the clicker
/// at the rendered point and the target is whatever the ray hits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub point: [f64; 3],
    /// Injection point for femoroplasty (image frame).
    #[serde(default)]
    pub injection: Option<[f64; 3]>,
    #[serde(default)]
    pub clicker: Option<ClickerScript>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomize {
    /// Draw the target of each trial from `targets` instead of cycling.
    #[serde(default)]
    pub target: bool,
    /// Perturb the robot start configuration per trial.
    #[serde(default)]
    pub start: bool,
    /// Half-width of the uniform per-joint start perturbation, radians.
    #[serde(default)]
    pub start_spread: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreviewPolicy {
    #[default]
    AcceptAlways,
    /// Execute only trajectories that passed validation.
    AcceptIfValid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    #[serde(default = "default_budget")]
    pub node_budget: usize,
    #[serde(default = "default_ik_seeds")]
    pub ik_seeds: usize,
}

fn default_clearance() -> f64 {
    0.01
}
fn default_max_step() -> f64 {
    DEFAULT_MAX_STEP
}
fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}
fn default_ik_seeds() -> usize {
    DEFAULT_IK_SEEDS
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            clearance: default_clearance(),
            max_step: default_max_step(),
            node_budget: default_budget(),
            ik_seeds: default_ik_seeds(),
        }
    }
}

impl PlannerConfig {
    pub fn params(&self, seed: u64) -> PlannerParams {
        PlannerParams {
            seed,
            max_step: self.max_step,
            node_budget: self.node_budget,
            ik_seeds: self.ik_seeds,
            ..PlannerParams::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Landmarks in the image frame, snapped to the anatomy. Empty means a
    /// built-in set for the phantom.
    #[serde(default)]
    pub fiducials: Vec<[f64; 3]>,
    /// Additional digitized surface points for ICP refinement (0 = off).
    #[serde(default)]
    pub icp_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Per-trial HMD position jitter (uniform half-width, m).
    #[serde(default = "default_hmd_jitter")]
    pub hmd_jitter: f64,
    /// Per-trial HMD orientation jitter (max angle, rad).
    #[serde(default = "default_hmd_tilt")]
    pub hmd_tilt: f64,
    /// Reference marker depth window in front of the HMD, m.
    #[serde(default = "default_depth")]
    pub depth_range: [f64; 2],
    /// Half-angle of the cone around the HMD view axis, rad.
    #[serde(default = "default_cone")]
    pub view_cone: f64,
    #[serde(default)]
    pub protocol: CalibrationProtocol,
}

/// How calibrations relate to evaluations in the experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationProtocol {
    /// Each trial calibrates from its own sample and evaluates that estimate.
    #[default]
    PerTrial,
    /// One batch calibration over all trials' samples, evaluated in every trial.
    Batch,
}

fn default_hmd_jitter() -> f64 {
    0.15
}
fn default_hmd_tilt() -> f64 {
    15f64.to_radians()
}
fn default_depth() -> [f64; 2] {
    [0.3, 0.7]
}
fn default_cone() -> f64 {
    25f64.to_radians()
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            hmd_jitter: default_hmd_jitter(),
            hmd_tilt: default_hmd_tilt(),
            depth_range: default_depth(),
            view_cone: default_cone(),
            protocol: CalibrationProtocol::PerTrial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub world: WorldConfig,
    /// `builtin:head`, `builtin:femur`, or an STL/OBJ path (relative paths
    /// resolve against the scenario file).
    pub anatomy_mesh: String,
    /// Factor applied to mesh coordinates on load (0.001 for millimeter files).
    #[serde(default = "one")]
    pub mesh_scale: f64,
    /// Flange to tool; defaults to the arm model's value.
    #[serde(default, rename = "flange_T_instrument")]
    pub instrument_transform: Option<RigidTransform>,
    /// Arm model JSON; the built-in arm when absent.
    #[serde(default)]
    pub arm_model: Option<String>,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub randomize: Randomize,
    #[serde(default)]
    pub preview: PreviewPolicy,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub registration: RegistrationConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub start_config: Option<[f64; 7]>,
    /// Coil to scalp distance (TMS), m.
    #[serde(default = "default_standoff")]
    pub standoff: f64,
    /// Direction in the image frame the tool x axis is rolled toward.
    #[serde(default = "default_roll")]
    pub roll_reference: [f64; 3],
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn default_standoff() -> f64 {
    0.005
}
fn default_roll() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

pub const DEFAULT_START: [f64; 7] = [0.0, 0.35, 0.0, -1.35, 0.0, 0.9, 0.0];

fn pose(t: [f64; 3], r: RigidTransform) -> RigidTransform {
    RigidTransform::translation_xyz(t[0], t[1], t[2]) * r
}

impl WorldConfig {
    /// Patient lying with the head near the robot, operator standing at the
    /// side of the table.
    pub fn tms_default() -> Self {
        let r_t_m = pose([0.56, 0.0, 0.24], RigidTransform::identity());
        let p_t_m = pose([0.02, 0.0, -0.13], RigidTransform::rot_y(0.2) * RigidTransform::rot_z(-0.3));
        Self {
            r_t_n: pose([1.6, 0.9, 1.3], RigidTransform::rot_z(-2.5) * RigidTransform::rot_y(1.1)),
            r_t_p: r_t_m * p_t_m.inverse(),
            p_t_m,
            r_t_h: pose([0.55, -0.75, 0.95], RigidTransform::rot_z(FRAC_PI_2) * RigidTransform::rot_y(0.5)),
            h_t_oholo: pose([0.06, 0.0, 0.08], RigidTransform::rot_y(-0.4)),
            r_t_oref: pose([0.6, -0.45, 0.6], RigidTransform::rot_x(0.3) * RigidTransform::rot_z(0.4)),
            w_t_r: pose([-1.2, 0.4, -0.9], RigidTransform::rot_z(0.8)),
            left_hand: Some([0.35, -0.42, 0.50]),
            right_hand: Some([0.75, -0.42, 0.50]),
            body: BodyDimensions::default(),
            avatar_margin: DEFAULT_AVATAR_MARGIN,
            tracker_noise: NoiseSpec::default(),
            hmd_noise: NoiseSpec::default(),
            execution_noise: NoiseSpec::default(),
            robot_joint_sigma: 0.0,
            calibration_error: NoiseSpec::default(),
            alignment_noise: NoiseSpec::default(),
            invisible: Vec::new(),
            datagram_drop_rate: 0.0,
            clicker_redundancy: default_redundancy(),
        }
    }

    /// Femur lying along the robot x axis with its lateral side facing up.
    pub fn femoroplasty_default() -> Self {
        let r_t_m = pose([0.45, 0.0, 0.25], RigidTransform::rot_x(FRAC_PI_2));
        let p_t_m = pose([-0.03, 0.05, 0.0], RigidTransform::rot_x(-0.5));
        Self {
            r_t_p: r_t_m * p_t_m.inverse(),
            p_t_m,
            left_hand: Some([0.50, -0.40, 0.42]),
            right_hand: Some([0.80, -0.40, 0.42]),
            r_t_h: pose([0.62, -0.75, 0.90], RigidTransform::rot_z(FRAC_PI_2) * RigidTransform::rot_y(0.5)),
            r_t_oref: pose([0.65, -0.45, 0.55], RigidTransform::rot_x(0.3) * RigidTransform::rot_z(0.4)),
            ..Self::tms_default()
        }
    }

    /// Noise level used for the placement experiments.
    pub fn with_placement_noise(mut self) -> Self {
        self.tracker_noise = NoiseSpec::Preset("polaris".into());
        self.hmd_noise = NoiseSpec::Preset("sttar".into());
        self.execution_noise = NoiseSpec::Rms {
            rms_translation: 1.5e-3,
            sigma_rotation: 0.4f64.to_radians(),
            time_offset_sigma: 0.0,
        };
        self
    }

    /// Perception noise used for the calibration experiment.
    pub fn with_perception_noise(mut self) -> Self {
        self.tracker_noise = NoiseSpec::Preset("polaris".into());
        self.hmd_noise = NoiseSpec::Preset("sttar".into());
        self.alignment_noise = NoiseSpec::Model(NoiseModel::new(1.5e-3, 0.5f64.to_radians()));
        self
    }
}

fn target(point: [f64; 3]) -> TargetSpec {
    TargetSpec {
        point,
        injection: None,
        clicker: None,
    }
}

/// Scalp points of the head phantom (directions scaled onto its semi-axes
/// approximately; snapped to the surface at run time).
const TMS_TARGETS: [[f64; 3]; 6] = [
    [0.0, 0.0, 0.11],
    [0.035, 0.02, 0.10],
    [-0.03, 0.025, 0.10],
    [0.04, -0.02, 0.098],
    [-0.01, -0.035, 0.10],
    [-0.045, 0.0, 0.097],
];

impl Scenario {
    pub fn tms() -> Self {
        Self {
            kind: ScenarioKind::Tms,
            world: WorldConfig::tms_default(),
            anatomy_mesh: "builtin:head".into(),
            mesh_scale: 1.0,
            instrument_transform: None,
            arm_model: None,
            targets: TMS_TARGETS.iter().map(|p| target(*p)).collect(),
            trials: 10,
            seed: 1,
            randomize: Randomize::default(),
            preview: PreviewPolicy::AcceptIfValid,
            planner: PlannerConfig::default(),
            registration: RegistrationConfig::default(),
            calibration: CalibrationConfig::default(),
            start_config: Some(DEFAULT_START),
            standoff: default_standoff(),
            roll_reference: default_roll(),
            base_dir: None,
        }
    }

    pub fn femoroplasty() -> Self {
        let entries = [[0.045, 0.032, 0.0], [0.04, 0.031, 0.006], [0.05, 0.03, -0.006]];
        Self {
            kind: ScenarioKind::Femoroplasty,
            world: WorldConfig::femoroplasty_default(),
            anatomy_mesh: "builtin:femur".into(),
            targets: entries
                .iter()
                .map(|p| TargetSpec {
                    point: *p,
                    injection: Some([0.02, 0.0, 0.0]),
                    clicker: None,
                })
                .collect(),
            standoff: 0.0,
            seed: 2,
            ..Self::tms()
        }
    }

    pub fn calibration_eval() -> Self {
        Self {
            kind: ScenarioKind::CalibrationEval,
            world: WorldConfig::tms_default().with_perception_noise(),
            targets: Vec::new(),
            trials: 50,
            ..Self::tms()
        }
    }

    /// Aims every target through a single clicker press instead of using the
    /// point directly.
    pub fn with_clicker_targets(mut self) -> Self {
        for t in &mut self.targets {
            t.clicker = Some(ClickerScript {
                events: vec![ClickerEvent {
                    time: 0.0,
                    joystick: [0.0, 0.0],
                    button: true,
                }],
                distance: default_aim_distance(),
            });
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s: Scenario = serde_json::from_str(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        let path = PathBuf::from(p);
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        for spec in [
            &self.world.tracker_noise,
            &self.world.hmd_noise,
            &self.world.execution_noise,
            &self.world.calibration_error,
            &self.world.alignment_noise,
        ] {
            spec.resolve()?;
        }
        if !(self.world.robot_joint_sigma >= 0.0) || !(0.0..=1.0).contains(&self.world.datagram_drop_rate) {
            return bad("robot_joint_sigma must be >= 0 and datagram_drop_rate in [0, 1]".into());
        }
        if !(self.mesh_scale > 0.0) {
            return bad("mesh_scale must be positive".into());
        }
        if !self.anatomy_mesh.starts_with("builtin:") && !self.resolve_path(&self.anatomy_mesh).exists() {
            return bad(format!("anatomy mesh {:?} does not exist", self.anatomy_mesh));
        }
        if let Some(arm) = &self.arm_model {
            if !self.resolve_path(arm).exists() {
                return bad(format!("arm model {arm:?} does not exist"));
            }
        }
        match self.kind {
            ScenarioKind::CalibrationEval => {
                let [lo, hi] = self.calibration.depth_range;
                if !(lo > 0.0 && lo <= hi) {
                    return bad("calibration.depth_range must satisfy 0 < lo <= hi".into());
                }
            }
            kind => {
                if self.targets.is_empty() {
                    return bad("workflow scenarios need at least one target".into());
                }
                if kind == ScenarioKind::Femoroplasty && self.targets.iter().any(|t| t.injection.is_none()) {
                    return bad("femoroplasty targets need an injection point".into());
                }
                if self.planner.clearance < 0.0 || self.planner.max_step <= 0.0 {
                    return bad("planner clearance must be >= 0 and max_step > 0".into());
                }
            }
        }
        Ok(())
    }
}
