//! Joint-space trajectory planning around collision obstacles: bidirectional
//! RRT with shortcut smoothing, re-validation, waypoint editing and
//! execution on a robot handle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmModel, CollisionPair, JointConfig};
use crate::collision::CollisionPrimitive;
use crate::geometry::RigidTransform;

pub const DEFAULT_MAX_STEP: f64 = 0.05;
pub const DEFAULT_NODE_BUDGET: usize = 50_000;
pub const DEFAULT_IK_SEEDS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("start configuration is in collision or outside limits")]
    StartInCollision(Option<CollisionPair>),
    #[error("goal pose unreachable by IK from any seed")]
    GoalUnreachable,
    #[error("every IK solution for the goal is in collision")]
    GoalInCollision,
    #[error("planner exhausted its node budget ({nodes} nodes)")]
    PlanningTimeout { nodes: usize },
    #[error("edited waypoint pose is unreachable")]
    EditUnreachable,
    #[error("edit index {index} is invalid for a trajectory with {knots} key waypoints")]
    InvalidEdit { index: usize, knots: usize },
    #[error("clearance must be non-negative")]
    InvalidScene,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutionError {
    #[error("trajectory has not been validated")]
    NotValidated,
    #[error("execution aborted at waypoint {index}: {reason}")]
    ExecutionAborted { index: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningScene {
    pub arm: ArmModel,
    pub obstacles: Vec<CollisionPrimitive>,
    pub clearance: f64,
}

impl PlanningScene {
    pub fn new(arm: ArmModel, obstacles: Vec<CollisionPrimitive>, clearance: f64) -> Self {
        Self {
            arm,
            obstacles,
            clearance,
        }
    }

    pub fn config_valid(&self, q: &JointConfig) -> bool {
        self.arm.within_limits(q) && !self.arm.arm_in_collision(q, &self.obstacles, self.clearance).in_collision
    }

    fn steps_between(a: &JointConfig, b: &JointConfig, max_step: f64) -> usize {
        let d = a.max_abs_diff(b);
        // A hair of slack keeps exact multiples of max_step from splitting.
        ((d / max_step) - 1e-9).ceil().max(0.0) as usize
    }

    /// Interior and end points of the densified segment `a → b` (excluding
    /// `a`).
    fn segment_points(a: &JointConfig, b: &JointConfig, max_step: f64) -> Vec<JointConfig> {
        let n = Self::steps_between(a, b, max_step).max(1);
        (1..=n)
            .map(|k| if k == n { *b } else { a.lerp(b, k as f64 / n as f64) })
            .collect()
    }

    fn segment_valid(&self, a: &JointConfig, b: &JointConfig, max_step: f64) -> bool {
        Self::segment_points(a, b, max_step).iter().all(|q| self.config_valid(q))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub seed: u64,
    pub max_step: f64,
    pub node_budget: usize,
    pub ik_seeds: usize,
    /// Goal IK tolerance (m and rad).
    pub goal_tol: f64,
    pub ik_max_iters: usize,
    /// RRT extension step (joint-space Euclidean, radians).
    pub extend_step: f64,
    pub shortcut_iters: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            seed: 0,
            max_step: DEFAULT_MAX_STEP,
            node_budget: DEFAULT_NODE_BUDGET,
            ik_seeds: DEFAULT_IK_SEEDS,
            goal_tol: 1e-9,
            ik_max_iters: 400,
            extend_step: 0.3,
            shortcut_iters: 150,
        }
    }
}

impl PlannerParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    /// Densified waypoints.
    pub waypoints: Vec<JointConfig>,
    /// Indices into `waypoints` of the key waypoints (start, intermediate
    /// tree nodes kept by smoothing, goal).
    pub knots: Vec<usize>,
    pub validated: bool,
    pub seed: u64,
    pub max_step: f64,
}

impl JointTrajectory {
    /// Densifies straight joint-space segments between key configurations
    /// and validates the result against `scene`.
    pub fn from_knots(scene: &PlanningScene, keys: &[JointConfig], seed: u64, max_step: f64) -> JointTrajectory {
        let mut t = densify(keys, seed, max_step);
        t.validated = validate(scene, &t).valid;
        t
    }

    pub fn start(&self) -> &JointConfig {
        &self.waypoints[0]
    }

    pub fn goal(&self) -> &JointConfig {
        self.waypoints.last().expect("non-empty trajectory")
    }

    pub fn knot_configs(&self) -> Vec<JointConfig> {
        self.knots.iter().map(|&k| self.waypoints[k]).collect()
    }

    /// Sum of joint-space L2 steps.
    pub fn length(&self) -> f64 {
        path_length(&self.waypoints)
    }

    pub fn max_joint_step(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].max_abs_diff(&w[1]))
            .fold(0.0, f64::max)
    }
}

pub fn path_length(path: &[JointConfig]) -> f64 {
    path.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

fn densify(keys: &[JointConfig], seed: u64, max_step: f64) -> JointTrajectory {
    let mut waypoints = vec![keys[0]];
    let mut knots = vec![0];
    if keys.len() == 1 {
        waypoints.push(keys[0]);
        knots.push(1);
    }
    for w in keys.windows(2) {
        if w[0] == w[1] {
            waypoints.push(w[1]);
        } else {
            waypoints.extend(PlanningScene::segment_points(&w[0], &w[1], max_step));
        }
        knots.push(waypoints.len() - 1);
    }
    JointTrajectory {
        waypoints,
        knots,
        validated: false,
        seed,
        max_step,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: bool,
    pub first_offending: Option<usize>,
}

/// Re-checks limits, collisions and the per-joint step bound at every
/// waypoint against `scene`.
pub fn validate(scene: &PlanningScene, traj: &JointTrajectory) -> Validation {
    for (i, q) in traj.waypoints.iter().enumerate() {
        let step_ok = i == 0 || traj.waypoints[i - 1].max_abs_diff(q) <= traj.max_step + 1e-12;
        if !step_ok || !scene.config_valid(q) {
            return Validation {
                valid: false,
                first_offending: Some(i),
            };
        }
    }
    Validation {
        valid: !traj.waypoints.is_empty(),
        first_offending: None,
    }
}

fn sample_config(arm: &ArmModel, rng: &mut ChaCha8Rng) -> JointConfig {
    let mut q = JointConfig::zeros();
    for (i, [lo, hi]) in arm.joint_limits.iter().enumerate() {
        q.0[i] = rng.random_range(*lo..=*hi);
    }
    q
}

struct Tree {
    nodes: Vec<JointConfig>,
    parent: Vec<usize>,
}

const ROOT: usize = usize::MAX;

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(roots: &[JointConfig]) -> Self {
        Tree {
            nodes: roots.to_vec(),
            parent: vec![ROOT; roots.len()],
        }
    }

    fn nearest(&self, q: &JointConfig) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.0 - q.0).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn extend(&mut self, scene: &PlanningScene, target: &JointConfig, step: f64, max_step: f64) -> Extend {
        let near = self.nearest(target);
        let from = self.nodes[near];
        let d = from.distance(target);
        let (new, reached) = if d <= step { (*target, true) } else { (from.lerp(target, step / d), false) };
        if !scene.segment_valid(&from, &new, max_step) {
            return Extend::Trapped;
        }
        self.nodes.push(new);
        self.parent.push(near);
        let id = self.nodes.len() - 1;
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn path_to_root(&self, mut i: usize) -> Vec<JointConfig> {
        let mut out = vec![self.nodes[i]];
        while self.parent[i] != ROOT {
            i = self.parent[i];
            out.push(self.nodes[i]);
        }
        out
    }
}

/// RRT-Connect from `start` to any of `goals`; returns key configurations
/// from start to the reached goal.
fn rrt_connect(
    scene: &PlanningScene,
    start: &JointConfig,
    goals: &[JointConfig],
    params: &PlannerParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<JointConfig>, PlanningError> {
    let mut a = Tree::new(std::slice::from_ref(start));
    let mut b = Tree::new(goals);
    let mut a_is_start = true;
    while a.nodes.len() + b.nodes.len() < params.node_budget {
        let sample = sample_config(&scene.arm, rng);
        let new = match a.extend(scene, &sample, params.extend_step, params.max_step) {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(ai) = new {
            let target = a.nodes[ai];
            loop {
                match b.extend(scene, &target, params.extend_step, params.max_step) {
                    Extend::Advanced(_) => {
                        if a.nodes.len() + b.nodes.len() >= params.node_budget {
                            break;
                        }
                    }
                    Extend::Trapped => break,
                    Extend::Reached(bi) => {
                        let mut from_a = a.path_to_root(ai);
                        from_a.reverse();
                        let from_b = b.path_to_root(bi);
                        from_a.extend(from_b.into_iter().skip(1));
                        if !a_is_start {
                            from_a.reverse();
                        }
                        return Ok(from_a);
                    }
                }
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(PlanningError::PlanningTimeout {
        nodes: a.nodes.len() + b.nodes.len(),
    })
}

fn shortcut(scene: &PlanningScene, path: &mut Vec<JointConfig>, params: &PlannerParams, rng: &mut ChaCha8Rng) {
    for _ in 0..params.shortcut_iters {
        if path.len() <= 2 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if scene.segment_valid(&path[i], &path[j], params.max_step) {
            path.drain(i + 1..j);
        }
    }
}

/// Key configurations joining `a` to `b`: the straight segment when it is
/// free, otherwise a smoothed RRT-Connect path.
fn connect_configs(
    scene: &PlanningScene,
    a: &JointConfig,
    goals: &[JointConfig],
    params: &PlannerParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<JointConfig>, PlanningError> {
    for g in goals {
        if a == g || scene.segment_valid(a, g, params.max_step) {
            return Ok(vec![*a, *g]);
        }
    }
    let mut path = rrt_connect(scene, a, goals, params, rng)?;
    shortcut(scene, &mut path, params, rng);
    Ok(path)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// IK solutions for `goal` from the start config and `ik_seeds` random seeds,
/// deduplicated and ordered by joint distance from `start`.
fn goal_candidates(
    scene: &PlanningScene,
    start: &JointConfig,
    goal: &RigidTransform,
    params: &PlannerParams,
) -> Result<Vec<JointConfig>, PlanningError> {
    let arm = &scene.arm;
    let mut rng = stream_rng(params.seed, 1);
    let mut seeds = vec![*start];
    seeds.extend((0..params.ik_seeds).map(|_| sample_config(arm, &mut rng)));
    let mut solved = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        if let Ok(q) = arm.inverse_kinematics(goal, s, params.goal_tol, params.ik_max_iters) {
            if !solved.iter().any(|(_, o): &(usize, JointConfig)| o.max_abs_diff(&q) < 1e-6) {
                solved.push((i, q));
            }
        }
        // The start-seeded solution usually suffices; keep the rest lazy.
        if i == 0 && solved.len() == 1 && scene.config_valid(&solved[0].1) && scene.segment_valid(start, &solved[0].1, params.max_step) {
            return Ok(vec![solved[0].1]);
        }
    }
    if solved.is_empty() {
        return Err(PlanningError::GoalUnreachable);
    }
    let mut valid: Vec<JointConfig> = solved.into_iter().map(|(_, q)| q).filter(|q| scene.config_valid(q)).collect();
    if valid.is_empty() {
        return Err(PlanningError::GoalInCollision);
    }
    valid.sort_by(|x, y| start.distance(x).total_cmp(&start.distance(y)));
    Ok(valid)
}

pub fn plan(
    scene: &PlanningScene,
    start: &JointConfig,
    goal_flange: &RigidTransform,
    params: &PlannerParams,
) -> Result<JointTrajectory, PlanningError> {
    if !(scene.clearance >= 0.0) {
        return Err(PlanningError::InvalidScene);
    }
    if !scene.arm.within_limits(start) {
        return Err(PlanningError::StartInCollision(None));
    }
    let report = scene.arm.arm_in_collision(start, &scene.obstacles, scene.clearance);
    if report.in_collision {
        return Err(PlanningError::StartInCollision(report.closest));
    }
    let goals = goal_candidates(scene, start, goal_flange, params)?;
    let mut rng = stream_rng(params.seed, 2);
    let keys = connect_configs(scene, start, &goals, params, &mut rng)?;
    Ok(JointTrajectory::from_knots(scene, &keys, params.seed, params.max_step))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointEdit {
    /// Index into the trajectory's key waypoints; 0 (the start) is fixed.
    pub index: usize,
    pub new_flange_pose: RigidTransform,
}

/// Moves key waypoint `edit.index` to the IK solution of the new flange pose
/// (seeded from the old configuration) and replans only the two adjacent
/// segments.
pub fn edit_and_replan(
    scene: &PlanningScene,
    traj: &JointTrajectory,
    edit: &WaypointEdit,
    params: &PlannerParams,
) -> Result<JointTrajectory, PlanningError> {
    let k = edit.index;
    let knots = &traj.knots;
    if k == 0 || k >= knots.len() {
        return Err(PlanningError::InvalidEdit {
            index: k,
            knots: knots.len(),
        });
    }
    let old = traj.waypoints[knots[k]];
    let new = scene
        .arm
        .inverse_kinematics(&edit.new_flange_pose, &old, params.goal_tol, params.ik_max_iters)
        .map_err(|_| PlanningError::EditUnreachable)?;
    if !scene.config_valid(&new) {
        return Err(PlanningError::GoalInCollision);
    }
    let mut rng = stream_rng(params.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), 3);
    let prev = traj.waypoints[knots[k - 1]];
    let left = connect_configs(scene, &prev, &[new], params, &mut rng)?;
    let right = match knots.get(k + 1) {
        Some(&next) => connect_configs(scene, &new, &[traj.waypoints[next]], params, &mut rng)?,
        None => vec![new],
    };

    let mut waypoints: Vec<JointConfig> = traj.waypoints[..=knots[k - 1]].to_vec();
    let mut new_knots: Vec<usize> = knots[..k].to_vec();
    for keys in [&left, &right] {
        for w in keys.windows(2) {
            if w[0] == w[1] {
                waypoints.push(w[1]);
            } else {
                waypoints.extend(PlanningScene::segment_points(&w[0], &w[1], traj.max_step));
            }
            new_knots.push(waypoints.len() - 1);
        }
    }
    if let Some(&next) = knots.get(k + 1) {
        let shift = waypoints.len() as isize - 1 - next as isize;
        waypoints.extend_from_slice(&traj.waypoints[next + 1..]);
        new_knots.extend(knots[k + 2..].iter().map(|&i| (i as isize + shift) as usize));
    }
    let mut out = JointTrajectory {
        waypoints,
        knots: new_knots,
        validated: false,
        seed: traj.seed,
        max_step: traj.max_step,
    };
    out.validated = validate(scene, &out).valid;
    Ok(out)
}

/// Robot endpoint driven by [`execute`].
pub trait RobotHandle {
    /// Commands a waypoint; an error aborts execution.
    fn step(&mut self, q: &JointConfig) -> Result<JointConfig, String>;
    /// Achieved flange pose after the final waypoint.
    fn finish(&mut self, last: &JointConfig) -> RigidTransform;
}

pub fn execute(traj: &JointTrajectory, robot: &mut dyn RobotHandle) -> Result<RigidTransform, ExecutionError> {
    if !traj.validated {
        return Err(ExecutionError::NotValidated);
    }
    let mut last = traj.waypoints[0];
    for (index, q) in traj.waypoints.iter().enumerate() {
        last = robot
            .step(q)
            .map_err(|reason| ExecutionError::ExecutionAborted { index, reason })?;
    }
    Ok(robot.finish(&last))
}

/// True when the trajectory is a single straight joint-space segment.
pub fn is_straight(traj: &JointTrajectory) -> bool {
    traj.knots.len() == 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_error;
    use nalgebra::Vector3;

    fn scene(obstacles: Vec<CollisionPrimitive>) -> PlanningScene {
        PlanningScene::new(ArmModel::default(), obstacles, 0.0)
    }

    fn q(v: [f64; 7]) -> JointConfig {
        JointConfig::from_slice(&v)
    }

    fn start() -> JointConfig {
        q([0.0, 0.9, 0.0, -0.9, 0.0, 0.6, 0.0])
    }

    fn goal_config() -> JointConfig {
        q([1.6, 0.9, 0.2, -0.9, 0.1, 0.6, 0.3])
    }

    #[test]
    fn trivial_plan() {
        let s = scene(vec![]);
        let goal = s.arm.flange_pose(&start());
        let t = plan(&s, &start(), &goal, &PlannerParams::default()).unwrap();
        assert_eq!(t.waypoints.len(), 2);
        assert!(t.validated);
    }

    #[test]
    fn free_space_is_straight() {
        let s = scene(vec![]);
        let goal = s.arm.flange_pose(&goal_config());
        let t = plan(&s, &start(), &goal, &PlannerParams::default()).unwrap();
        assert!(is_straight(&t));
        assert!(t.validated && validate(&s, &t).valid);
        assert!(t.max_joint_step() <= DEFAULT_MAX_STEP + 1e-12);
        let e = pose_error(&s.arm.flange_pose(t.goal()), &goal);
        assert!(e.translation_error < 1e-9 && e.rotation_error < 1e-9);
    }

    fn blocking_obstacle(s: &PlanningScene) -> CollisionPrimitive {
        let mid = start().lerp(&goal_config(), 0.5);
        let p = *s.arm.fk_unchecked(&mid).links[5].translation();
        CollisionPrimitive::sphere(p, 0.08, "blocker")
    }

    #[test]
    fn blocked_straight_line_detours() {
        let free = scene(vec![]);
        let ball = blocking_obstacle(&free);
        let s = scene(vec![ball.clone()]);
        assert!(s.config_valid(&start()) && s.config_valid(&goal_config()));
        let goal = s.arm.flange_pose(&goal_config());
        let t = plan(&s, &start(), &goal, &PlannerParams::with_seed(3)).unwrap();
        assert!(t.validated);
        for w in &t.waypoints {
            assert!(s.arm.arm_in_collision(w, &s.obstacles, 0.0).closest.unwrap().distance > 0.0);
        }
        let again = plan(&s, &start(), &goal, &PlannerParams::with_seed(3)).unwrap();
        assert_eq!(t, again);
        // The straight trajectory is rejected by the new scene.
        let straight = JointTrajectory::from_knots(&free, &[start(), goal_config()], 0, DEFAULT_MAX_STEP);
        let v = validate(&s, &straight);
        assert!(!v.valid && v.first_offending.unwrap() > 0);
        assert_ne!(t.waypoints, straight.waypoints);
    }

    #[test]
    fn goal_inside_obstacle() {
        let free = scene(vec![]);
        let goal = free.arm.flange_pose(&goal_config());
        let s = scene(vec![CollisionPrimitive::sphere(*goal.translation(), 0.1, "wall")]);
        assert_eq!(
            plan(&s, &start(), &goal, &PlannerParams::default()),
            Err(PlanningError::GoalInCollision)
        );
        let far = RigidTransform::translation_xyz(3.0, 0.0, 0.5);
        assert_eq!(plan(&free, &start(), &far, &PlannerParams::default()), Err(PlanningError::GoalUnreachable));
    }

    #[test]
    fn start_in_collision() {
        let free = scene(vec![]);
        let p = *free.arm.flange_pose(&start()).translation();
        let s = scene(vec![CollisionPrimitive::sphere(p, 0.05, "x")]);
        let goal = free.arm.flange_pose(&goal_config());
        assert!(matches!(
            plan(&s, &start(), &goal, &PlannerParams::default()),
            Err(PlanningError::StartInCollision(_))
        ));
    }

    #[test]
    fn node_budget_is_enforced() {
        let free = scene(vec![]);
        let ball = blocking_obstacle(&free);
        let s = scene(vec![ball]);
        let params = PlannerParams {
            node_budget: 3,
            ..PlannerParams::with_seed(1)
        };
        let mut rng = stream_rng(1, 2);
        let r = connect_configs(&s, &start(), &[goal_config()], &params, &mut rng);
        assert!(matches!(r, Err(PlanningError::PlanningTimeout { .. })));
        let mut rng = stream_rng(1, 2);
        let ok = connect_configs(&s, &start(), &[goal_config()], &PlannerParams::with_seed(1), &mut rng).unwrap();
        assert!(ok.len() > 2);
        let shortcut_len = path_length(&ok);
        let straight_len = start().distance(&goal_config());
        assert!(shortcut_len >= straight_len);
    }

    #[test]
    fn edit_no_op_and_move() {
        let s = scene(vec![]);
        let mid = q([0.7, 0.5, 0.1, -1.1, 0.05, 0.85, 0.15]);
        let t = JointTrajectory::from_knots(&s, &[start(), mid, goal_config()], 9, DEFAULT_MAX_STEP);
        assert!(t.validated);
        let same = WaypointEdit {
            index: 1,
            new_flange_pose: s.arm.flange_pose(&mid),
        };
        let edited = edit_and_replan(&s, &t, &same, &PlannerParams::default()).unwrap();
        assert_eq!(edited, t);

        let moved_pose = RigidTransform::translation_xyz(0.05, 0.0, 0.0) * s.arm.flange_pose(&mid);
        let edit = WaypointEdit {
            index: 1,
            new_flange_pose: moved_pose,
        };
        let e = edit_and_replan(&s, &t, &edit, &PlannerParams::default()).unwrap();
        assert!(e.validated);
        let at_k = s.arm.flange_pose(&e.waypoints[e.knots[1]]);
        let err = pose_error(&at_k, &moved_pose);
        assert!(err.translation_error < 1e-6 && err.rotation_error < 1e-6);
        assert_eq!(e.start(), t.start());
        assert_eq!(e.goal(), t.goal());
        assert!(e.max_joint_step() <= DEFAULT_MAX_STEP + 1e-12);

        let bad = WaypointEdit {
            index: 0,
            new_flange_pose: moved_pose,
        };
        assert!(matches!(edit_and_replan(&s, &t, &bad, &PlannerParams::default()), Err(PlanningError::InvalidEdit { .. })));
    }

    #[test]
    fn edit_preserves_untouched_segments() {
        let s = scene(vec![]);
        let k1 = q([0.3, 0.45, 0.05, -1.15, 0.0, 0.8, 0.05]);
        let k2 = q([0.7, 0.5, 0.1, -1.1, 0.05, 0.85, 0.15]);
        let k3 = q([1.0, 0.55, 0.15, -1.05, 0.05, 0.9, 0.2]);
        let t = JointTrajectory::from_knots(&s, &[start(), k1, k2, k3, goal_config()], 2, DEFAULT_MAX_STEP);
        let edit = WaypointEdit {
            index: 2,
            new_flange_pose: RigidTransform::translation_xyz(0.0, 0.03, 0.0) * s.arm.flange_pose(&k2),
        };
        let e = edit_and_replan(&s, &t, &edit, &PlannerParams::default()).unwrap();
        assert_eq!(&e.waypoints[..=e.knots[1]], &t.waypoints[..=t.knots[1]]);
        let tail_new = &e.waypoints[e.knots[e.knots.len() - 2]..];
        let tail_old = &t.waypoints[t.knots[t.knots.len() - 2]..];
        assert_eq!(tail_new, tail_old);
    }

    #[test]
    fn edit_into_obstacle() {
        let free = scene(vec![]);
        let mid = q([0.7, 0.5, 0.1, -1.1, 0.05, 0.85, 0.15]);
        let t = JointTrajectory::from_knots(&free, &[start(), mid, goal_config()], 9, DEFAULT_MAX_STEP);
        let target = RigidTransform::translation_xyz(0.0, 0.0, -0.05) * free.arm.flange_pose(&mid);
        let s = scene(vec![CollisionPrimitive::sphere(*target.translation(), 0.05, "wall")]);
        let r = edit_and_replan(&s, &t, &WaypointEdit { index: 1, new_flange_pose: target }, &PlannerParams::default());
        assert!(matches!(r, Err(PlanningError::EditUnreachable) | Err(PlanningError::GoalInCollision)));
    }

    #[test]
    fn monotone_conservatism() {
        let s = scene(vec![CollisionPrimitive::sphere(Vector3::new(0.4, 0.4, 0.6), 0.1, "o")]);
        let goal = s.arm.flange_pose(&goal_config());
        let mut wide = s.clone();
        wide.clearance = 0.05;
        let t = plan(&wide, &start(), &goal, &PlannerParams::with_seed(4)).unwrap();
        assert!(validate(&wide, &t).valid);
        assert!(validate(&s, &t).valid);
    }

    struct Perfect(ArmModel);

    impl RobotHandle for Perfect {
        fn step(&mut self, q: &JointConfig) -> Result<JointConfig, String> {
            Ok(*q)
        }
        fn finish(&mut self, last: &JointConfig) -> RigidTransform {
            self.0.flange_pose(last)
        }
    }

    #[test]
    fn execute_requires_validation() {
        let s = scene(vec![]);
        let goal = s.arm.flange_pose(&goal_config());
        let mut t = plan(&s, &start(), &goal, &PlannerParams::default()).unwrap();
        let mut robot = Perfect(ArmModel::default());
        let achieved = execute(&t, &mut robot).unwrap();
        assert!(achieved.approx_eq(&goal, 1e-9, 1e-9));
        t.validated = false;
        assert_eq!(execute(&t, &mut robot), Err(ExecutionError::NotValidated));
    }

    #[test]
    fn trajectory_json_round_trip() {
        let s = scene(vec![]);
        let t = JointTrajectory::from_knots(&s, &[start(), goal_config()], 5, DEFAULT_MAX_STEP);
        let text = serde_json::to_string(&t).unwrap();
        let back: JointTrajectory = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }
}
