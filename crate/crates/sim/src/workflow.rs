//! The five-step placement workflow, split into the robot-side node (tracker,
//! registration, planning, robot) and the HMD-side driver (calibration,
//! avatar, clicker, preview). Both halves talk only through [`Message`]s, so
//! the same code runs in-process or over a transport.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rams_core::calibration::{calibrate_single, world_to_tracker, CalibrationSample};
use rams_core::collision::CollisionPrimitive;
use rams_core::devices::{device_rng, ClickerEvent, SimRobot, SimWorld};
use rams_core::geometry::{per_axis_error, pose_error, FrameId, PerAxisError, PoseError, RigidTransform};
use rams_core::human::avatar_to_collision_objects;
use rams_core::planning::{execute, plan, JointTrajectory, PlanningScene};
use rams_core::registration::{icp, paired_point_register, PointCloud, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL};
use rams_core::targeting::{
    adjust_target, cast_ray, femoroplasty_pose, tangent_basis, tms_coil_pose, AnatomicalTarget, ClickerState,
    DEFAULT_JOYSTICK_STEP,
};
use rams_net::{
    decode_clicker, encode_clicker, ClickerInput, ClickerPacket, DatagramTransport, LoopbackDatagram, LoopbackStream,
    Message, Role, SeqFilter, Session, StreamError, UdpDatagram,
};

use crate::context::{vec3, Context};
use crate::scenario::{PreviewPolicy, ScenarioKind};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trial {trial}, stage {stage}: {message}")]
pub struct WorkflowError {
    pub trial: u32,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u32,
    pub seed: u64,
    pub target: usize,
    /// Instrument pose in the image frame as confirmed in the preview.
    pub planned_pose: RigidTransform,
    /// Tracked instrument pose after execution, in the image frame.
    pub achieved_pose: RigidTransform,
    pub error: PoseError,
    pub per_axis: PerAxisError,
    /// Wall-clock seconds.
    pub planning_time: f64,
    pub waypoints: usize,
    pub knots: usize,
}

impl TrialReport {
    pub fn without_timing(&self) -> TrialReport {
        TrialReport {
            planning_time: 0.0,
            ..self.clone()
        }
    }
}

/// One entry of the HMD-side message log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dir", content = "data")]
pub enum LogEntry {
    Sent(Message),
    Received(Message),
    /// Clicker datagram as encoded (sent once per logical event).
    Clicker(Vec<u8>),
}

impl LogEntry {
    pub fn without_timing(&self) -> LogEntry {
        match self {
            LogEntry::Sent(m) => LogEntry::Sent(m.without_timing()),
            LogEntry::Received(m) => LogEntry::Received(m.without_timing()),
            other => other.clone(),
        }
    }
}

type StageResult<T> = Result<T, (&'static str, String)>;

trait Staged<T> {
    fn at(self, stage: &'static str) -> StageResult<T>;
}

impl<T, E: std::fmt::Display> Staged<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| (stage, e.to_string()))
    }
}

struct RosTrial {
    index: u32,
    seed: u64,
    world: SimWorld,
    w_t_n_est: Option<RigidTransform>,
    n_t_m_est: Option<RigidTransform>,
    obstacles: Vec<CollisionPrimitive>,
    filter: SeqFilter,
    clicks: Vec<ClickerPacket>,
    plan: Option<(PlanningScene, JointTrajectory)>,
}

/// Robot-side half: owns the tracker, the anatomy, the planner and the robot.
/// The operator's physical actions (where the clicker is held) are simulated
/// here as well, since they only matter through what the tracker sees.
pub struct RosNode {
    ctx: Arc<Context>,
    trial: Option<RosTrial>,
    /// Datagrams that failed to decode.
    pub rejected_datagrams: usize,
}

impl RosNode {
    pub fn new(ctx: Arc<Context>) -> Self {
        Self {
            ctx,
            trial: None,
            rejected_datagrams: 0,
        }
    }

    pub fn on_clicker(&mut self, bytes: &[u8]) {
        let Ok(packet) = decode_clicker(bytes) else {
            self.rejected_datagrams += 1;
            return;
        };
        if let Some(t) = &mut self.trial {
            if t.filter.accept(packet.seq) {
                t.clicks.push(packet);
            }
        }
    }

    pub fn clicks_received(&self) -> usize {
        self.trial.as_ref().map_or(0, |t| t.clicks.len())
    }

    pub fn handle(&mut self, msg: &Message) -> Vec<Message> {
        match self.step(msg) {
            Ok(replies) => replies,
            Err((stage, message)) => {
                let trial = self.trial.take().map(|t| t.index);
                vec![Message::Error {
                    trial,
                    stage: stage.to_string(),
                    message,
                }]
            }
        }
    }

    fn current(&mut self, trial: u32) -> StageResult<&mut RosTrial> {
        match &mut self.trial {
            Some(t) if t.index == trial => Ok(t),
            _ => Err(("protocol", format!("no active trial {trial}"))),
        }
    }

    fn step(&mut self, msg: &Message) -> StageResult<Vec<Message>> {
        let ctx = self.ctx.clone();
        match msg {
            Message::Ack { subject, value, .. } if subject == "trial" => {
                let index = *value as u32;
                let seed = ctx.trial_seed(index);
                let mut world = ctx.sim_world(seed);
                let n_t_oholo = world.tracker_measure(FrameId::OHolo).at("calibration")?;
                let n_t_oref = world.tracker_measure(FrameId::ORef).at("calibration")?;
                self.trial = Some(RosTrial {
                    index,
                    seed,
                    world,
                    w_t_n_est: None,
                    n_t_m_est: None,
                    obstacles: Vec::new(),
                    filter: SeqFilter::default(),
                    clicks: Vec::new(),
                    plan: None,
                });
                Ok(vec![pose_update(index, FrameId::N, FrameId::OHolo, n_t_oholo), pose_update(index, FrameId::N, FrameId::ORef, n_t_oref)])
            }
            Message::PoseUpdate {
                trial,
                parent: FrameId::W,
                child: FrameId::N,
                pose,
                ..
            } => {
                let t = self.current(*trial)?;
                t.w_t_n_est = Some(*pose);
                let n_t_m = register(&ctx, t)?;
                t.n_t_m_est = Some(n_t_m);
                Ok(vec![pose_update(*trial, FrameId::N, FrameId::M, n_t_m)])
            }
            Message::AvatarUpdate {
                trial,
                frame: FrameId::W,
                tracking,
            } => {
                let t = self.current(*trial)?;
                let w_t_n = t.w_t_n_est.ok_or(("protocol", "avatar before calibration".to_string()))?;
                let r_t_w = ctx.scenario.world.r_t_n * w_t_n.inverse();
                let avatar = tracking.transformed(&r_t_w);
                let w = &ctx.scenario.world;
                t.obstacles = avatar_to_collision_objects(&avatar, &w.body, w.avatar_margin);
                Ok(vec![Message::ack("avatar", t.obstacles.len() as u64)])
            }
            Message::Ack { subject, value, .. } if subject == "clicker" => {
                let index = self.trial.as_ref().map(|t| t.index).ok_or(("protocol", "no active trial".to_string()))?;
                let t = self.current(index)?;
                let m_t_i = pick_target(&ctx, t, *value as usize)?;
                Ok(vec![pose_update(index, FrameId::M, FrameId::I, m_t_i)])
            }
            Message::TargetConfirm { trial, accepted, pose } => {
                let t = self.current(*trial)?;
                if !accepted {
                    return Err(("preview", "target rejected".into()));
                }
                let n_t_m = t.n_t_m_est.ok_or(("protocol", "target before registration".to_string()))?;
                let goal = ctx.scenario.world.r_t_n * n_t_m * *pose * ctx.flange_t_instrument.inverse();
                let scene = PlanningScene::new(ctx.arm.clone(), t.obstacles.clone(), ctx.scenario.planner.clearance);
                let start = ctx.start_config(*trial, &scene);
                let clock = Instant::now();
                let traj = plan(&scene, &start, &goal, &ctx.scenario.planner.params(t.seed)).at("planning")?;
                let planning_time = clock.elapsed().as_secs_f64();
                t.plan = Some((scene, traj.clone()));
                Ok(vec![Message::TrajectoryMsg {
                    trial: *trial,
                    trajectory: traj,
                    flange_goal: goal,
                    start,
                    planning_time,
                }])
            }
            Message::ExecuteCmd { trial } => {
                let t = self.current(*trial)?;
                let (scene, traj) = t.plan.take().ok_or(("protocol", "execute before planning".to_string()))?;
                let mut robot = SimRobot::new(
                    ctx.arm.clone(),
                    ctx.scenario.world.robot_joint_sigma,
                    ctx.noise.execution,
                    t.seed,
                );
                robot.noise_frame = ctx.flange_t_instrument;
                robot.monitor = Some(scene);
                let flange = execute(&traj, &mut robot).at("execution")?;
                let r_t_i = flange * ctx.flange_t_instrument;
                t.world.graph.set_edge(FrameId::R, FrameId::I, r_t_i, 0.0).at("measurement")?;
                let n_t_i = t.world.tracker_measure(FrameId::I).at("measurement")?;
                self.trial = None;
                Ok(vec![pose_update(*trial, FrameId::N, FrameId::I, n_t_i)])
            }
            other => Err(("protocol", format!("unexpected {} message", other.type_name()))),
        }
    }
}

fn pose_update(trial: u32, parent: FrameId, child: FrameId, pose: RigidTransform) -> Message {
    Message::PoseUpdate {
        trial,
        parent,
        child,
        pose,
        stamp: 0.0,
    }
}

/// Digitizes the landmarks with the tracked probe and fits image to patient
/// marker; returns the tracker to image estimate.
fn register(ctx: &Context, t: &mut RosTrial) -> StageResult<RigidTransform> {
    let world = &mut t.world;
    let n_t_p = world.tracker_measure(FrameId::P).at("registration")?;
    let p_t_n = n_t_p.inverse();
    let r_t_m = world.graph.resolve(FrameId::R, FrameId::M).at("registration")?;
    let digitize = |world: &mut SimWorld, x: &nalgebra::Vector3<f64>| -> StageResult<nalgebra::Vector3<f64>> {
        let tip = RigidTransform::from_translation(r_t_m.transform_point(x));
        world.graph.set_edge(FrameId::R, FrameId::C, tip, 0.0).at("registration")?;
        let m = world.tracker_measure(FrameId::C).at("registration")?;
        Ok(p_t_n.transform_point(m.translation()))
    };
    let mut measured = Vec::with_capacity(ctx.fiducials.len());
    for x in &ctx.fiducials {
        measured.push(digitize(world, x)?);
    }
    let source = PointCloud::new(ctx.fiducials.clone()).at("registration")?;
    let target = PointCloud::new(measured).at("registration")?;
    let mut p_t_m = paired_point_register(&source, &target).at("registration")?.transform;

    let n_icp = ctx.scenario.registration.icp_points;
    if n_icp > 0 {
        let mut rng = device_rng(t.seed, "scenario.surface");
        let samples = ctx.anatomy.sample_surface(n_icp, &mut rng);
        let mut pts = Vec::with_capacity(n_icp);
        for (x, _) in &samples {
            pts.push(digitize(world, x)?);
        }
        let cloud = PointCloud::new(pts).at("registration")?;
        let fit = icp(&cloud, &ctx.anatomy, &p_t_m.inverse(), DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL).at("registration")?;
        p_t_m = fit.transform.inverse();
    }
    world.graph.remove_edge(FrameId::R, FrameId::C);
    Ok(n_t_p * p_t_m)
}

/// Target selection and instrument pose in the image frame.
fn pick_target(ctx: &Context, t: &mut RosTrial, announced: usize) -> StageResult<RigidTransform> {
    let spec = ctx.target(t.index).clone();
    let n_t_m = t.n_t_m_est.ok_or(("protocol", "targeting before registration".to_string()))?;
    let snap = ctx.anatomy.closest_point(&vec3(&spec.point));
    let surface = AnatomicalTarget {
        position: snap.point,
        normal: ctx.anatomy.triangle_normal(snap.triangle),
        triangle: snap.triangle,
    };
    let target = match &spec.clicker {
        None => surface,
        Some(script) => {
            if t.clicks.len() != announced || announced == 0 {
                return Err(("targeting", format!("received {} of {} clicker packets", t.clicks.len(), announced)));
            }
            // The operator aims at the hologram, which the HMD renders through
            // its own estimates; physically that is this pose in R.
            let w_t_n = t.w_t_n_est.ok_or(("protocol", "targeting before calibration".to_string()))?;
            let apparent = ctx.scenario.world.w_t_r.inverse() * w_t_n * n_t_m;
            let p = apparent.transform_point(&surface.position);
            let n = apparent.transform_vector(&surface.normal).normalize();
            let (x_axis, _) = tangent_basis(&n);
            let probe = RigidTransform::from_axes_xz(&x_axis, &(-n), p + n * script.distance);
            t.world.graph.set_edge(FrameId::R, FrameId::C, probe, 0.0).at("targeting")?;
            let events: Vec<ClickerEvent> = t
                .clicks
                .iter()
                .enumerate()
                .map(|(i, c)| ClickerEvent {
                    time: i as f64,
                    joystick: c.joystick(),
                    button: c.pressed(),
                })
                .collect();
            let states = t.world.clicker_emit(&events).at("targeting")?;
            let m_t_n = n_t_m.inverse();
            let in_image = |s: &ClickerState| ClickerState::new(m_t_n * s.pose, s.joystick, s.button_pressed);
            let mut target = cast_ray(&in_image(&states[0]), &ctx.anatomy).at("targeting")?;
            let mut confirmed = false;
            for s in &states {
                if s.joystick != Vector2::zeros() {
                    target = adjust_target(&target, &s.joystick, &ctx.anatomy, DEFAULT_JOYSTICK_STEP);
                }
                if s.button_pressed {
                    confirmed = true;
                    break;
                }
            }
            if !confirmed {
                return Err(("targeting", "clicker script ended without a press".into()));
            }
            target
        }
    };
    let roll = vec3(&ctx.scenario.roll_reference);
    let pose = match ctx.scenario.kind {
        ScenarioKind::Tms => tms_coil_pose(&target, ctx.scenario.standoff, &roll),
        ScenarioKind::Femoroplasty => {
            let injection = spec.injection.ok_or(("targeting", "missing injection point".to_string()))?;
            femoroplasty_pose(&target.position, &vec3(&injection), &roll)
        }
        ScenarioKind::CalibrationEval => return Err(("targeting", "not a placement scenario".into())),
    }
    .at("targeting")?;
    Ok(pose.pose)
}

/// HMD-side view of the connection to the robot side.
pub trait Link {
    fn send(&mut self, msg: &Message) -> Result<(), StreamError>;
    fn recv(&mut self) -> Result<Message, StreamError>;
    fn send_clicker(&mut self, packet: &[u8; 8]) -> Result<(), StreamError>;
}

/// Direct function calls into a [`RosNode`].
pub struct InProcessLink {
    pub node: RosNode,
    inbox: VecDeque<Message>,
}

impl InProcessLink {
    pub fn new(ctx: Arc<Context>) -> Self {
        Self {
            node: RosNode::new(ctx),
            inbox: VecDeque::new(),
        }
    }
}

impl Link for InProcessLink {
    fn send(&mut self, msg: &Message) -> Result<(), StreamError> {
        self.inbox.extend(self.node.handle(msg));
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, StreamError> {
        self.inbox.pop_front().ok_or(StreamError::TransportClosed)
    }

    fn send_clicker(&mut self, packet: &[u8; 8]) -> Result<(), StreamError> {
        self.node.on_clicker(packet);
        Ok(())
    }
}

/// Stream session plus a datagram channel for the clicker.
pub struct NetLink<S> {
    session: Session<S>,
    datagram: Box<dyn DatagramTransport>,
    redundancy: usize,
}

impl<S: Read + Write> NetLink<S> {
    pub fn connect(io: S, datagram: Box<dyn DatagramTransport>, redundancy: usize) -> Result<Self, StreamError> {
        Ok(Self {
            session: Session::establish(io, Role::Hmd)?,
            datagram,
            redundancy: redundancy.max(1),
        })
    }
}

impl<S: Read + Write> Link for NetLink<S> {
    fn send(&mut self, msg: &Message) -> Result<(), StreamError> {
        self.session.send(msg)
    }

    fn recv(&mut self) -> Result<Message, StreamError> {
        self.session.recv()
    }

    fn send_clicker(&mut self, packet: &[u8; 8]) -> Result<(), StreamError> {
        for _ in 0..self.redundancy {
            self.datagram.send_datagram(packet)?;
        }
        Ok(())
    }
}

const CLICKER_WAIT: Duration = Duration::from_secs(2);

/// Robot-side server loop for one connection.
pub fn serve_ros<S: Read + Write>(
    ctx: Arc<Context>,
    io: S,
    mut datagram: Box<dyn DatagramTransport>,
) -> Result<(), StreamError> {
    let mut session = Session::establish(io, Role::Ros)?;
    let mut node = RosNode::new(ctx);
    session.on_any(move |msg| {
        match msg {
            // Leftover redundant copies from the previous trial.
            Message::Ack { subject, .. } if subject == "trial" => {
                while datagram.recv_datagram(Duration::ZERO).ok().flatten().is_some() {}
            }
            Message::Ack { subject, value, .. } if subject == "clicker" && *value > 0 => {
                let deadline = Instant::now() + CLICKER_WAIT;
                while node.clicks_received() < *value as usize && Instant::now() < deadline {
                    if let Ok(Some(p)) = datagram.recv_datagram(Duration::from_millis(20)) {
                        node.on_clicker(&p);
                    }
                }
            }
            _ => {}
        }
        node.handle(msg)
    });
    session.run()
}

struct Logged<'a> {
    link: &'a mut dyn Link,
    log: &'a mut Vec<LogEntry>,
    trial: u32,
}

impl Logged<'_> {
    fn fail(&self, stage: &str, message: impl ToString) -> WorkflowError {
        WorkflowError {
            trial: self.trial,
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    fn send(&mut self, msg: Message) -> Result<(), WorkflowError> {
        self.link.send(&msg).map_err(|e| self.fail("protocol", e))?;
        self.log.push(LogEntry::Sent(msg));
        Ok(())
    }

    fn clicker(&mut self, packet: [u8; 8]) -> Result<(), WorkflowError> {
        self.link.send_clicker(&packet).map_err(|e| self.fail("protocol", e))?;
        self.log.push(LogEntry::Clicker(packet.to_vec()));
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, WorkflowError> {
        let m = self.link.recv().map_err(|e| self.fail("protocol", e))?;
        self.log.push(LogEntry::Received(m.clone()));
        if let Message::Error { stage, message, .. } = &m {
            return Err(self.fail(stage, message));
        }
        Ok(m)
    }

    fn expect_pose(&mut self, parent: FrameId, child: FrameId) -> Result<RigidTransform, WorkflowError> {
        match self.recv()? {
            Message::PoseUpdate {
                trial,
                parent: p,
                child: c,
                pose,
                ..
            } if trial == self.trial && p == parent && c == child => Ok(pose),
            other => Err(self.fail("protocol", format!("expected {parent}->{child} pose, got {other:?}"))),
        }
    }
}

/// HMD-side steps of one trial.
pub fn run_trial(ctx: &Context, trial: u32, link: &mut dyn Link, log: &mut Vec<LogEntry>) -> Result<TrialReport, WorkflowError> {
    let mut io = Logged { link, log, trial };
    let seed = ctx.trial_seed(trial);
    let mut world = ctx.sim_world(seed);

    io.send(Message::ack("trial", trial as u64))?;
    let n_t_oholo = io.expect_pose(FrameId::N, FrameId::OHolo)?;
    let n_t_oref = io.expect_pose(FrameId::N, FrameId::ORef)?;
    let h_t_oref = world.hmd_measure(FrameId::ORef).map_err(|e| io.fail("calibration", e))?;
    let oholo_t_h = calibrate_single(&CalibrationSample {
        n_t_oholo,
        n_t_oref,
        h_t_oref,
    });
    let w_t_h = world.graph.resolve(FrameId::W, FrameId::H).map_err(|e| io.fail("calibration", e))?;
    let mut w_t_n = world_to_tracker(&w_t_h, &oholo_t_h, &n_t_oholo);
    if !ctx.noise.calibration_error.is_zero() {
        w_t_n = w_t_n * ctx.noise.calibration_error.sample(world.stream("calibration"));
    }
    io.send(pose_update(trial, FrameId::W, FrameId::N, w_t_n))?;

    // Step 1: registration happens on the robot side; the result drives the
    // hologram.
    let n_t_m = io.expect_pose(FrameId::N, FrameId::M)?;

    io.send(Message::AvatarUpdate {
        trial,
        frame: FrameId::W,
        tracking: ctx.avatar_in_world(&world.graph),
    })?;
    match io.recv()? {
        Message::Ack { subject, .. } if subject == "avatar" => {}
        other => return Err(io.fail("protocol", format!("expected avatar ack, got {other:?}"))),
    }

    // Step 2: target selection.
    let events = ctx.target(trial).clicker.as_ref().map(|c| c.events.clone()).unwrap_or_default();
    for (i, e) in events.iter().enumerate() {
        let input = ClickerInput {
            joystick: e.joystick,
            button: e.button,
        };
        io.clicker(encode_clicker(&input, i as u8))?;
    }
    io.send(Message::ack("clicker", events.len() as u64))?;
    let m_t_i = io.expect_pose(FrameId::M, FrameId::I)?;

    // Step 3: preview records the planned pose and confirms it.
    io.send(Message::TargetConfirm {
        trial,
        accepted: true,
        pose: m_t_i,
    })?;

    // Step 4: planning.
    let (trajectory, planning_time) = match io.recv()? {
        Message::TrajectoryMsg {
            trial: tr,
            trajectory,
            planning_time,
            ..
        } if tr == trial => (trajectory, planning_time),
        other => return Err(io.fail("protocol", format!("expected trajectory, got {other:?}"))),
    };
    if ctx.scenario.preview == PreviewPolicy::AcceptIfValid && !trajectory.validated {
        return Err(io.fail("preview", "trajectory failed validation"));
    }

    // Step 5: execution and tracked measurement.
    io.send(Message::ExecuteCmd { trial })?;
    let n_t_i = io.expect_pose(FrameId::N, FrameId::I)?;
    let achieved = n_t_m.inverse() * n_t_i;
    Ok(TrialReport {
        trial,
        seed,
        target: ctx.target_index(trial),
        planned_pose: m_t_i,
        achieved_pose: achieved,
        error: pose_error(&m_t_i, &achieved),
        per_axis: per_axis_error(&m_t_i, &achieved),
        planning_time,
        waypoints: trajectory.waypoints.len(),
        knots: trajectory.knots.len(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Transport {
    #[default]
    InProcess,
    /// Robot side on a thread, in-memory stream and datagram pipes.
    Loopback,
    /// Robot side on a thread, TCP and UDP on 127.0.0.1.
    Tcp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub transport: Transport,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRun {
    pub reports: Vec<TrialReport>,
    /// Per-trial message logs, in trial order.
    pub logs: Vec<Vec<LogEntry>>,
}

impl WorkflowRun {
    /// Reports and logs with wall-clock fields zeroed.
    pub fn without_timing(&self) -> WorkflowRun {
        WorkflowRun {
            reports: self.reports.iter().map(TrialReport::without_timing).collect(),
            logs: self
                .logs
                .iter()
                .map(|l| l.iter().map(LogEntry::without_timing).collect())
                .collect(),
        }
    }
}

fn protocol_error(trial: u32, e: impl ToString) -> WorkflowError {
    WorkflowError {
        trial,
        stage: "protocol".into(),
        message: e.to_string(),
    }
}

fn run_trials(ctx: &Context, trials: &[u32], link: &mut dyn Link) -> Result<Vec<(TrialReport, Vec<LogEntry>)>, WorkflowError> {
    trials
        .iter()
        .map(|&t| {
            let mut log = Vec::new();
            run_trial(ctx, t, link, &mut log).map(|r| (r, log))
        })
        .collect()
}

fn with_link(
    ctx: &Arc<Context>,
    transport: Transport,
    trials: &[u32],
) -> Result<Vec<(TrialReport, Vec<LogEntry>)>, WorkflowError> {
    let first = trials.first().copied().unwrap_or(0);
    let w = &ctx.scenario.world;
    match transport {
        Transport::InProcess => run_trials(ctx, trials, &mut InProcessLink::new(ctx.clone())),
        Transport::Loopback => {
            let (a, b) = LoopbackStream::pair();
            let (da, db) = LoopbackDatagram::pair(w.datagram_drop_rate, ctx.trial_seed(first));
            let server_ctx = ctx.clone();
            let server = thread::spawn(move || serve_ros(server_ctx, b, Box::new(db)));
            let out = {
                let mut link = NetLink::connect(a, Box::new(da), w.clicker_redundancy).map_err(|e| protocol_error(first, e))?;
                run_trials(ctx, trials, &mut link)
            };
            server.join().expect("robot-side thread panicked").map_err(|e| protocol_error(first, e))?;
            out
        }
        Transport::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| protocol_error(first, e))?;
            let addr = listener.local_addr().map_err(|e| protocol_error(first, e))?;
            let (da, db) = UdpDatagram::local_pair().map_err(|e| protocol_error(first, e))?;
            let server_ctx = ctx.clone();
            let server = thread::spawn(move || -> Result<(), StreamError> {
                let (stream, _) = listener.accept()?;
                stream.set_nodelay(true)?;
                serve_ros(server_ctx, stream, Box::new(db))
            });
            let out = {
                let stream = TcpStream::connect(addr).map_err(|e| protocol_error(first, e))?;
                stream.set_nodelay(true).map_err(|e| protocol_error(first, e))?;
                let mut link =
                    NetLink::connect(stream, Box::new(da), w.clicker_redundancy).map_err(|e| protocol_error(first, e))?;
                run_trials(ctx, trials, &mut link)
            };
            server.join().expect("robot-side thread panicked").map_err(|e| protocol_error(first, e))?;
            out
        }
    }
}

/// Runs every trial of a placement scenario. In parallel mode each trial gets
/// its own link (and its own session when networked).
pub fn run_workflow(ctx: &Arc<Context>, opts: RunOptions) -> Result<WorkflowRun, WorkflowError> {
    if ctx.scenario.kind == ScenarioKind::CalibrationEval {
        return Err(WorkflowError {
            trial: 0,
            stage: "scenario".into(),
            message: "calibration_eval scenarios run through run_calibration_experiment".into(),
        });
    }
    let trials: Vec<u32> = (0..ctx.scenario.trials as u32).collect();
    let pairs = if opts.parallel {
        trials
            .par_iter()
            .map(|&t| with_link(ctx, opts.transport, &[t]).map(|mut v| v.remove(0)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        with_link(ctx, opts.transport, &trials)?
    };
    let (reports, logs) = pairs.into_iter().unzip();
    Ok(WorkflowRun { reports, logs })
}

/// HMD side against a robot side started with [`serve`] elsewhere.
pub fn run_workflow_remote(ctx: &Arc<Context>, addr: SocketAddr) -> Result<WorkflowRun, WorkflowError> {
    let e0 = |e: std::io::Error| protocol_error(0, e);
    let stream = TcpStream::connect(addr).map_err(e0)?;
    stream.set_nodelay(true).map_err(e0)?;
    let socket = UdpSocket::bind("0.0.0.0:0").map_err(e0)?;
    let datagram = UdpDatagram::new(socket, addr);
    let mut link = NetLink::connect(stream, Box::new(datagram), ctx.scenario.world.clicker_redundancy)
        .map_err(|e| protocol_error(0, e))?;
    let trials: Vec<u32> = (0..ctx.scenario.trials as u32).collect();
    let (reports, logs) = run_trials(ctx, &trials, &mut link)?.into_iter().unzip();
    Ok(WorkflowRun { reports, logs })
}

/// Robot side on a bound listener (TCP for messages, UDP on the same port
/// for clicker datagrams). Serves connections one at a time; returns after
/// `max_sessions` sessions when given.
pub fn serve(ctx: Arc<Context>, listener: TcpListener, max_sessions: Option<usize>) -> Result<(), StreamError> {
    let local = listener.local_addr()?;
    let socket = UdpSocket::bind(local)?;
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let datagram = UdpDatagram::new(socket.try_clone()?, local);
        serve_ros(ctx.clone(), stream, Box::new(datagram))?;
        served += 1;
        if max_sessions.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}
