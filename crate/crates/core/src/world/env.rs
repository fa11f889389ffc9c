//! Episodic pushing environment with frame-stacked observations.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::physics::{physics_step, Body, PhysicsParams, Twist};
use super::render::{render_visual, RenderSpec, RgbImage, VisualDraw, VisualRandomization, VisualScene};
use super::shape::{ObjectShape, Pose2, ShapeKind};
use super::trajectory::{generate_trajectory, TrajectoryParams};
use super::{Workspace, WorldError};
use crate::rng::{self, SimRng};
use crate::tactile::{render_contact, ContactDepthImage, SensorGeometry, SensorPose, SensorScene};

const RESET_STREAM: u64 = 0x7265_7365_74;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct EpisodeConfig {
    pub max_episode_steps: usize,
    pub success_threshold: f64,
    pub workspace: Workspace,
    /// Per-axis TCP displacement bound per control step, meters.
    pub action_max: f64,
    pub substeps: usize,
    pub dt: f64,
    pub frame_stack: usize,
    pub object: ShapeKind,
    pub mass_low: f64,
    pub mass_high: f64,
    pub friction_low: f64,
    pub friction_high: f64,
    pub physics: PhysicsParams,
    pub sensor: SensorGeometry,
    pub render: RenderSpec,
    pub visual: VisualRandomization,
    pub trajectory: TrajectoryParams,
    /// Object start region half extents around the workspace center.
    pub start_half_width: f64,
    pub start_half_height: f64,
    /// Gap between pusher and object at reset, sampled uniformly.
    pub tcp_gap_low: f64,
    pub tcp_gap_high: f64,
    /// Peak sideways offset of the pusher from the push line at reset.
    pub tcp_lateral: f64,
    pub goal_radius: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_episode_steps: 350,
            success_threshold: 0.025,
            workspace: Workspace::default(),
            action_max: 0.005,
            substeps: 10,
            dt: 0.002,
            frame_stack: 3,
            object: ShapeKind::Disc { radius: 0.04 },
            mass_low: 0.25,
            mass_high: 0.35,
            friction_low: 15.0,
            friction_high: 25.0,
            physics: PhysicsParams::default(),
            sensor: SensorGeometry::default(),
            render: RenderSpec::default(),
            visual: VisualRandomization::default(),
            trajectory: TrajectoryParams::default(),
            start_half_width: 0.15,
            start_half_height: 0.1,
            tcp_gap_low: 0.005,
            tcp_gap_high: 0.02,
            tcp_lateral: 0.01,
            goal_radius: 0.012,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m| Err(WorldError::InvalidConfig(m));
        if self.max_episode_steps == 0 || !(self.success_threshold > 0.0) {
            return bad("max_episode_steps and success_threshold must be positive");
        }
        if !(self.action_max > 0.0) || self.substeps == 0 || !(self.dt > 0.0) {
            return bad("action_max, substeps and dt must be positive");
        }
        if self.frame_stack == 0 {
            return bad("frame_stack must be positive");
        }
        if !(self.mass_low > 0.0 && self.mass_low <= self.mass_high) {
            return bad("mass range must be positive and ordered");
        }
        if !(self.friction_low >= 0.0 && self.friction_low <= self.friction_high) {
            return bad("friction range must be non-negative and ordered");
        }
        if self.friction_high * self.dt >= 1.0 {
            return bad("friction_high * dt must stay below 1 for stable damping");
        }
        if !(self.tcp_gap_low >= 0.0 && self.tcp_gap_low <= self.tcp_gap_high) || self.tcp_lateral < 0.0 {
            return bad("pusher start ranges must be non-negative and ordered");
        }
        if self.visual.background_low > self.visual.background_high || self.visual.camera_offset < 0.0 {
            return bad("visual randomization ranges must be ordered");
        }
        if self.render.height == 0 || self.render.width == 0 || self.render.supersample == 0 {
            return bad("render resolution must be positive");
        }
        ObjectShape::new(self.object, self.mass_low, self.friction_low)?;
        self.trajectory.validate()?;
        self.sensor.validate()?;
        Ok(())
    }

    pub fn proprio_dim(&self) -> usize {
        5
    }
}

/// Commanded TCP displacement, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn clamped(self, a_max: f64) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(-a_max, a_max) } else { 0.0 };
        Self { dx: c(self.dx), dy: c(self.dy) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub body: Body,
    pub shape: ObjectShape,
    pub goals: Vec<(f64, f64)>,
    pub goal_index: usize,
    pub step: usize,
    pub sensor_heading: f64,
}

impl WorldState {
    pub fn active_goal(&self) -> (f64, f64) {
        self.goals[self.goal_index.min(self.goals.len() - 1)]
    }

    pub fn d_goal(&self) -> f64 {
        let (gx, gy) = self.active_goal();
        libm::hypot(self.body.pose.x - gx, self.body.pose.y - gy)
    }

    pub fn d_tcp(&self) -> f64 {
        libm::hypot(self.body.tcp.0 - self.body.pose.x, self.body.tcp.1 - self.body.pose.y)
    }

    /// Distance from the object to the last goal point.
    pub fn final_distance(&self) -> f64 {
        let (gx, gy) = *self.goals.last().expect("non-empty trajectory");
        libm::hypot(self.body.pose.x - gx, self.body.pose.y - gy)
    }
}

/// Dense reward: negative object-to-goal distance minus TCP-to-object distance.
pub fn compute_reward(state: &WorldState) -> f64 {
    -state.d_goal() - state.d_tcp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub visual: Vec<RgbImage>,
    pub tactile: Vec<ContactDepthImage>,
    /// TCP x, y; active goal x, y; elapsed fraction of the step budget.
    pub proprio: [f32; 5],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub d_goal: f64,
    pub d_tcp: f64,
    pub goal_index: usize,
    pub final_distance: f64,
    pub in_contact: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

pub struct PushEnv {
    cfg: EpisodeConfig,
    state: Option<WorldState>,
    draw: VisualDraw,
    visual: VecDeque<RgbImage>,
    tactile: VecDeque<ContactDepthImage>,
    finished: bool,
    in_contact: bool,
}

impl PushEnv {
    pub fn new(cfg: EpisodeConfig) -> Result<Self, WorldError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: None,
            draw: VisualDraw::neutral(),
            visual: VecDeque::new(),
            tactile: VecDeque::new(),
            finished: true,
            in_contact: false,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    pub fn draw(&self) -> &VisualDraw {
        &self.draw
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation, WorldError> {
        let cfg = &self.cfg;
        let mut rng: SimRng = rng::stream(seed, RESET_STREAM);
        let mass = rng::uniform(&mut rng, cfg.mass_low, cfg.mass_high);
        let friction = rng::uniform(&mut rng, cfg.friction_low, cfg.friction_high);
        let shape = ObjectShape::new(cfg.object, mass, friction)?;
        let x = rng::uniform(&mut rng, -cfg.start_half_width, cfg.start_half_width);
        let y = rng::uniform(&mut rng, -cfg.start_half_height, cfg.start_half_height);
        let theta = rng::uniform(&mut rng, -core::f64::consts::PI, core::f64::consts::PI);
        let margin = shape.bounding_radius() + 0.01;
        let goals = generate_trajectory(&mut rng, (x, y), &cfg.trajectory, &cfg.workspace, margin)?;
        // Pusher starts behind the object on the line away from the first goal.
        let (gx, gy) = goals[0];
        let (ux, uy) = unit(gx - x, gy - y).unwrap_or((1.0, 0.0));
        let gap = rng::uniform(&mut rng, cfg.tcp_gap_low, cfg.tcp_gap_high);
        let lateral = rng::uniform(&mut rng, -cfg.tcp_lateral, cfg.tcp_lateral);
        let back = probe_extent(&cfg.object, theta, (-ux, -uy)) + cfg.physics.pusher_radius + gap;
        let tcp = cfg.workspace.clamp(x - back * ux - lateral * uy, y - back * uy + lateral * ux, 0.0);
        self.draw = VisualDraw::sample(&mut rng, &cfg.visual, &cfg.workspace);
        let mut state = WorldState {
            body: Body { pose: Pose2::new(x, y, theta), twist: Twist::default(), tcp },
            shape,
            goals,
            goal_index: 0,
            step: 0,
            sensor_heading: 0.0,
        };
        state.sensor_heading = sensor_heading(&state, 0.0);
        self.state = Some(state);
        self.finished = false;
        self.in_contact = false;
        let v = self.render_frame();
        let t = self.tactile_frame()?;
        let n = self.cfg.frame_stack;
        self.visual = core::iter::repeat_n(v, n).collect();
        self.tactile = core::iter::repeat_n(t, n).collect();
        Ok(self.observation())
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, WorldError> {
        if self.finished {
            return Err(if self.state.is_none() { WorldError::NotReset } else { WorldError::EpisodeFinished });
        }
        let cfg = &self.cfg;
        let a = action.clamped(cfg.action_max);
        let state = self.state.as_mut().expect("reset before step");
        let sub = (a.dx / cfg.substeps as f64, a.dy / cfg.substeps as f64);
        let mut touched = false;
        for _ in 0..cfg.substeps {
            touched |= physics_step(&mut state.body, &state.shape, sub, cfg.dt, &cfg.physics, &cfg.workspace).is_some();
        }
        state.step += 1;
        let reward = compute_reward(state);
        let mut terminated = false;
        if state.d_goal() < cfg.success_threshold {
            if state.goal_index + 1 == state.goals.len() {
                terminated = true;
            } else {
                state.goal_index += 1;
            }
        }
        let truncated = !terminated && state.step >= cfg.max_episode_steps;
        state.sensor_heading = sensor_heading(state, state.sensor_heading);
        let info = StepInfo {
            d_goal: state.d_goal(),
            d_tcp: state.d_tcp(),
            goal_index: state.goal_index,
            final_distance: state.final_distance(),
            in_contact: touched,
        };
        self.finished = terminated || truncated;
        self.in_contact = touched;
        let v = self.render_frame();
        let t = self.tactile_frame()?;
        self.visual.pop_front();
        self.visual.push_back(v);
        self.tactile.pop_front();
        self.tactile.push_back(t);
        Ok(StepResult { observation: self.observation(), reward, terminated, truncated, info })
    }

    pub fn observation(&self) -> Observation {
        let s = self.state.as_ref().expect("reset before observing");
        let (gx, gy) = s.active_goal();
        Observation {
            visual: self.visual.iter().cloned().collect(),
            tactile: self.tactile.iter().cloned().collect(),
            proprio: [
                s.body.tcp.0 as f32,
                s.body.tcp.1 as f32,
                gx as f32,
                gy as f32,
                (s.step as f64 / self.cfg.max_episode_steps as f64) as f32,
            ],
        }
    }

    pub fn visual_scene(&self) -> VisualScene {
        let s = self.state.as_ref().expect("reset before rendering");
        VisualScene {
            shape: s.shape.kind,
            object: s.body.pose,
            tcp: s.body.tcp,
            pusher_radius: self.cfg.physics.pusher_radius,
            goal: Some(s.active_goal()),
            goal_radius: self.cfg.goal_radius,
        }
    }

    pub fn render_frame(&self) -> RgbImage {
        render_visual(&self.visual_scene(), &self.draw, &self.cfg.render, &self.cfg.workspace)
    }

    pub fn sensor_pose(&self) -> SensorPose {
        let s = self.state.as_ref().expect("reset before sensing");
        let (s_, c) = libm::sincos(s.sensor_heading);
        let r = self.cfg.physics.pusher_radius;
        SensorPose { x: s.body.tcp.0 + r * c, y: s.body.tcp.1 + r * s_, heading: s.sensor_heading }
    }

    pub fn tactile_frame(&self) -> Result<ContactDepthImage, WorldError> {
        let s = self.state.as_ref().expect("reset before sensing");
        let scene = SensorScene { sensor: self.sensor_pose(), shape: s.shape.kind, object: s.body.pose };
        Ok(render_contact(&scene, &self.cfg.sensor)?)
    }
}

fn unit(x: f64, y: f64) -> Option<(f64, f64)> {
    let n = libm::hypot(x, y);
    (n > 1e-12).then(|| (x / n, y / n))
}

/// The sensor faces from the TCP toward the active goal.
fn sensor_heading(state: &WorldState, previous: f64) -> f64 {
    let (gx, gy) = state.active_goal();
    match unit(gx - state.body.tcp.0, gy - state.body.tcp.1) {
        Some((ux, uy)) => super::shape::wrap_angle(libm::atan2(uy, ux)),
        None => previous,
    }
}

/// Distance from the object center to its boundary along `dir` (world frame).
fn probe_extent(kind: &ShapeKind, theta: f64, dir: (f64, f64)) -> f64 {
    let pose = Pose2::new(0.0, 0.0, theta);
    let d = pose.rotate_to_local(dir.0, dir.1);
    let far = 2.0 * kind.bounding_radius();
    let entry = crate::tactile::ray_entry(kind, (d.0 * far, d.1 * far), (-d.0, -d.1)).unwrap_or(far);
    far - entry
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PushEnv {
        PushEnv::new(EpisodeConfig::default()).unwrap()
    }

    #[test]
    fn reward_formula() {
        let mut e = env();
        e.reset(3).unwrap();
        let mut s = e.state().unwrap().clone();
        s.goals = alloc::vec![(0.0, 0.0)];
        s.goal_index = 0;
        s.body.pose = Pose2::new(0.0, 0.0, 0.0);
        s.body.tcp = (0.0, 0.0);
        assert_eq!(compute_reward(&s), 0.0);
        s.body.pose = Pose2::new(0.1, 0.0, 0.0);
        s.body.tcp = (0.1, 0.05);
        assert!((compute_reward(&s) + 0.15).abs() < 1e-15);
        let mut moved = s.clone();
        moved.goals = alloc::vec![(0.07, -0.02)];
        moved.body.pose.x += 0.07;
        moved.body.pose.y -= 0.02;
        moved.body.tcp = (s.body.tcp.0 + 0.07, s.body.tcp.1 - 0.02);
        assert!((compute_reward(&moved) - compute_reward(&s)).abs() < 1e-12);
    }

    #[test]
    fn reset_is_deterministic_and_stacks_copies() {
        let mut a = env();
        let mut b = env();
        let oa = a.reset(17).unwrap();
        assert_eq!(oa, b.reset(17).unwrap());
        assert_eq!(oa.visual.len(), 3);
        assert!(oa.visual.iter().all(|f| *f == oa.visual[0]));
        assert!(oa.tactile.iter().all(|f| *f == oa.tactile[0]));
        assert_ne!(oa, b.reset(18).unwrap());
    }

    #[test]
    fn initial_poses_stay_inside_the_start_region() {
        let mut e = env();
        let cfg = e.config().clone();
        for seed in 0..100 {
            e.reset(seed).unwrap();
            let s = e.state().unwrap();
            assert!(s.body.pose.x.abs() <= cfg.start_half_width && s.body.pose.y.abs() <= cfg.start_half_height);
            assert!(cfg.workspace.contains(s.body.pose.x, s.body.pose.y, s.shape.bounding_radius()));
            assert!(s.d_tcp() > s.shape.bounding_radius());
        }
    }

    #[test]
    fn zero_action_on_a_static_scene_keeps_reward() {
        let mut e = env();
        e.reset(5).unwrap();
        let r1 = e.step(Action::default()).unwrap().reward;
        let r2 = e.step(Action::default()).unwrap().reward;
        assert_eq!(r1, r2);
    }

    #[test]
    fn truncates_at_the_step_cap_and_refuses_further_steps() {
        let mut e = env();
        e.reset(2).unwrap();
        let mut last = None;
        for _ in 0..350 {
            last = Some(e.step(Action::default()).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminated);
        assert_eq!(e.step(Action::default()), Err(WorldError::EpisodeFinished));
        e.reset(2).unwrap();
        assert_eq!(e.state().unwrap().step, 0);
    }

    #[test]
    fn frame_stack_slides() {
        let mut e = env();
        e.reset(4).unwrap();
        let mut produced = Vec::new();
        let mut obs = None;
        for t in 0..6 {
            let a = Action::new(0.004 * libm::cos(t as f64), 0.004 * libm::sin(t as f64));
            let r = e.step(a).unwrap();
            produced.push(r.observation.visual[2].clone());
            obs = Some(r.observation);
        }
        let obs = obs.unwrap();
        let t = produced.len() - 1;
        for i in 0..3 {
            assert_eq!(obs.visual[i], produced[t + 1 + i - 3]);
        }
    }

    #[test]
    fn actions_are_clamped() {
        let a = Action::new(0.5, -f64::NAN).clamped(0.005);
        assert_eq!(a, Action::new(0.005, 0.0));
    }

    #[test]
    fn reward_is_bounded_by_twice_the_diagonal() {
        let mut e = env();
        let diag = e.config().workspace.diagonal();
        for seed in 0..5 {
            e.reset(seed).unwrap();
            for k in 0..60 {
                let r = e.step(Action::new(0.005 * libm::cos(k as f64 * 0.3), 0.005)).unwrap().reward;
                assert!(r <= 0.0 && r >= -2.0 * diag);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = EpisodeConfig { mass_low: 0.5, mass_high: 0.1, ..EpisodeConfig::default() };
        assert!(PushEnv::new(cfg).is_err());
        let cfg = EpisodeConfig { friction_high: 600.0, ..EpisodeConfig::default() };
        assert!(PushEnv::new(cfg).is_err());
    }
}
