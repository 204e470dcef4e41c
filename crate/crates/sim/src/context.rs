use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rams_core::arm::{ArmModel, JointConfig};
use rams_core::devices::{derive_seed, device_rng, NoiseModel, SimWorld};
use rams_core::geometry::{FrameGraph, FrameId, RigidTransform};
use rams_core::human::AvatarTracking;
use rams_core::mesh::io::load_mesh;
use rams_core::mesh::{shapes, TriangleMesh};
use rams_core::planning::PlanningScene;

use crate::scenario::{Scenario, ScenarioError, TargetSpec, DEFAULT_START};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    pub tracker: NoiseModel,
    pub hmd: NoiseModel,
    pub execution: NoiseModel,
    pub calibration_error: NoiseModel,
    pub alignment: NoiseModel,
}

/// Everything derived from a scenario once per run and shared by both sides
/// of the workflow.
#[derive(Clone, Debug)]
pub struct Context {
    pub scenario: Scenario,
    pub anatomy: TriangleMesh,
    pub arm: ArmModel,
    pub flange_t_instrument: RigidTransform,
    pub noise: Noise,
    /// Registration landmarks in the image frame, on the surface.
    pub fiducials: Vec<Vector3<f64>>,
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

impl Context {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let anatomy = match scenario.anatomy_mesh.as_str() {
            "builtin:head" => shapes::head_phantom(),
            "builtin:femur" => shapes::femur_phantom(),
            other if other.starts_with("builtin:") => {
                return Err(ScenarioError::Invalid(format!("unknown builtin mesh {other:?}")))
            }
            path => load_mesh(&scenario.resolve_path(path), scenario.mesh_scale)?,
        };
        let arm = match &scenario.arm_model {
            Some(p) => ArmModel::load(&scenario.resolve_path(p))?,
            None => ArmModel::default(),
        };
        let flange_t_instrument = scenario.instrument_transform.unwrap_or(arm.flange_t_instrument);
        let w = &scenario.world;
        let noise = Noise {
            tracker: w.tracker_noise.resolve()?,
            hmd: w.hmd_noise.resolve()?,
            execution: w.execution_noise.resolve()?,
            calibration_error: w.calibration_error.resolve()?,
            alignment: w.alignment_noise.resolve()?,
        };
        let fiducials = if scenario.registration.fiducials.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            anatomy.sample_surface(8, &mut rng).into_iter().map(|(p, _)| p).collect()
        } else {
            scenario
                .registration
                .fiducials
                .iter()
                .map(|p| anatomy.closest_point(&v3(p)).point)
                .collect()
        };
        Ok(Self {
            scenario,
            anatomy,
            arm,
            flange_t_instrument,
            noise,
            fiducials,
        })
    }

    pub fn trial_seed(&self, trial: u32) -> u64 {
        derive_seed(self.scenario.seed, trial as u64)
    }

    pub fn ground_truth_graph(&self) -> FrameGraph {
        let w = &self.scenario.world;
        let mut g = FrameGraph::new();
        let edges = [
            (FrameId::R, FrameId::N, w.r_t_n),
            (FrameId::R, FrameId::P, w.r_t_p),
            (FrameId::P, FrameId::M, w.p_t_m),
            (FrameId::R, FrameId::H, w.r_t_h),
            (FrameId::H, FrameId::OHolo, w.h_t_oholo),
            (FrameId::R, FrameId::ORef, w.r_t_oref),
            (FrameId::W, FrameId::R, w.w_t_r),
        ];
        for (parent, child, t) in edges {
            g.add_edge(parent, child, t, 0.0).expect("ground-truth frames form a tree");
        }
        g
    }

    /// Fresh device simulation for one trial.
    pub fn sim_world(&self, seed: u64) -> SimWorld {
        let mut w = SimWorld::new(self.ground_truth_graph(), seed);
        w.tracker = self.noise.tracker;
        w.hmd = self.noise.hmd;
        w.robot = NoiseModel::new(0.0, self.scenario.world.robot_joint_sigma);
        w.invisible = self.scenario.world.invisible.iter().copied().collect();
        w
    }

    pub fn target_index(&self, trial: u32) -> usize {
        let n = self.scenario.targets.len().max(1);
        if self.scenario.randomize.target {
            device_rng(self.trial_seed(trial), "scenario.target").random_range(0..n)
        } else {
            trial as usize % n
        }
    }

    pub fn target(&self, trial: u32) -> &TargetSpec {
        &self.scenario.targets[self.target_index(trial)]
    }

    pub fn home(&self) -> JointConfig {
        JointConfig::from_slice(&self.scenario.start_config.unwrap_or(DEFAULT_START))
    }

    /// Robot start for a trial; randomized starts that are invalid in `scene`
    /// are redrawn a few times before falling back to home.
    pub fn start_config(&self, trial: u32, scene: &PlanningScene) -> JointConfig {
        let home = self.home();
        let r = &self.scenario.randomize;
        if !r.start || r.start_spread <= 0.0 {
            return home;
        }
        let mut rng = device_rng(self.trial_seed(trial), "scenario.start");
        for _ in 0..20 {
            let mut q = home;
            for i in 0..q.0.len() {
                q.0[i] += rng.random_range(-r.start_spread..=r.start_spread);
            }
            let q = self.arm.clamp(&q);
            if scene.config_valid(&q) {
                return q;
            }
        }
        home
    }

    /// Operator tracking as the HMD reports it: head from inside-out
    /// tracking, hands from hand tracking, all in the HMD world frame.
    pub fn avatar_in_world(&self, graph: &FrameGraph) -> AvatarTracking {
        let w = &self.scenario.world;
        let w_t_r = w.w_t_r;
        let w_t_h = graph.resolve(FrameId::W, FrameId::H).expect("HMD frame is in the graph");
        AvatarTracking {
            head_pose: w_t_h,
            left_hand: w.left_hand.map(|h| w_t_r.transform_point(&v3(&h))),
            right_hand: w.right_hand.map(|h| w_t_r.transform_point(&v3(&h))),
        }
    }
}

pub(crate) fn vec3(p: &[f64; 3]) -> Vector3<f64> {
    v3(p)
}
