//! Environment interaction: observation tracking, the training loop and a
//! controller wrapper for evaluation.

use alloc::vec;
use alloc::vec::Vec;

use crate::collect::{dequantize, episode_seed, quantize};
use crate::eval::Controller;
use crate::nn::ParamStore;
use crate::rng::{self, SimRng};
use crate::vtgen::VtGen;
use crate::world::{Action, EpisodeConfig, Observation, PushEnv, WorldState};

use super::agent::{Agent, AgentConfig, ObsTensors, UpdateReport, ACTION_DIM};
use super::replay::{stack_ids, EpisodeFrames, Frame, FrameSink, ReplayBuffer, StackRef};
use super::VtConError;

/// Where the agent's tactile stream comes from.
#[derive(Clone, Copy)]
pub enum Touch<'a> {
    /// The sensor's contact depth frames.
    GroundTruth,
    /// A frozen generator applied to the visual stack; its output is repeated
    /// to fill the tactile stack.
    Generated { net: &'a VtGen, store: &'a ParamStore<f32> },
}

impl Touch<'_> {
    /// Checks that environment, agent and generator agree on shapes.
    pub fn check(&self, agent: &AgentConfig, env: &EpisodeConfig) -> Result<(), VtConError> {
        if env.render.height != agent.image_size || env.render.width != agent.image_size {
            return Err(VtConError::Shape("render resolution differs from the agent's image size"));
        }
        if env.frame_stack != agent.frames {
            return Err(VtConError::Shape("environment and agent frame stacks differ"));
        }
        if !agent.uses_tactile() {
            return Ok(());
        }
        if env.sensor.rows != agent.tactile_size || env.sensor.cols != agent.tactile_size {
            return Err(VtConError::Shape("sensor resolution differs from the agent's tactile size"));
        }
        if let Touch::Generated { net, store } = self {
            let g = net.config();
            if g.image_size != agent.image_size || g.tactile_size != agent.tactile_size || g.frames != agent.frames {
                return Err(VtConError::Shape("generator geometry differs from the agent's"));
            }
            if store.is_empty() {
                return Err(VtConError::Config("generator store is empty"));
            }
        }
        Ok(())
    }
}

/// Turns environment observations into stored frames and stack references.
#[derive(Clone, Debug)]
pub struct ObsTracker {
    frames: usize,
    uses_tactile: bool,
    history: Vec<u64>,
    input: Vec<f32>,
}

impl ObsTracker {
    pub fn new(cfg: &AgentConfig) -> Self {
        Self { frames: cfg.frames, uses_tactile: cfg.uses_tactile(), history: Vec::new(), input: Vec::new() }
    }

    pub fn begin_episode(&mut self) {
        self.history.clear();
    }

    /// Stores the newest frame of `obs` and returns the current stack.
    pub fn record<S: FrameSink>(&mut self, sink: &mut S, obs: &Observation, touch: &Touch<'_>) -> StackRef {
        let newest = obs.visual.last().expect("non-empty visual stack");
        let visual: Vec<u8> = newest.data.iter().map(|&v| quantize(v)).collect();
        let tactile = match (self.uses_tactile, touch) {
            (false, _) => Vec::new(),
            (true, Touch::GroundTruth) => obs.tactile.last().expect("non-empty tactile stack").values.iter().map(|&v| quantize(v)).collect(),
            (true, Touch::Generated { net, store }) => {
                // The generator sees the same 8-bit frames the agent does.
                self.input.clear();
                for img in &obs.visual {
                    self.input.extend(img.data.iter().map(|&v| dequantize(quantize(v))));
                }
                let c = net.predict(store, &[&self.input]).pop().expect("one output");
                c.values.iter().map(|&v| quantize(v)).collect()
            }
        };
        let id = sink.push_frame(Frame { visual, tactile });
        self.history.push(id);
        if self.history.len() > self.frames {
            self.history.remove(0);
        }
        let visual = stack_ids(&self.history, self.frames);
        let tactile = match (self.uses_tactile, touch) {
            (false, _) => Vec::new(),
            (true, Touch::GroundTruth) => visual.clone(),
            (true, Touch::Generated { .. }) => vec![id; self.frames],
        };
        StackRef { visual, tactile, proprio: obs.proprio }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub steps: usize,
    /// Uniform random actions before the first update.
    pub warmup: usize,
    /// Gradient updates per environment step.
    pub updates_per_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 150_000, warmup: 1_000, updates_per_step: 1 }
    }
}

/// One finished training episode with the most recent learner losses.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeLog {
    pub episode: usize,
    /// Environment steps taken so far, this episode included.
    pub step: usize,
    pub reward: f64,
    pub length: usize,
    pub final_distance: f64,
    pub success: bool,
    pub update: Option<UpdateReport>,
}

pub fn env_action(a: [f32; ACTION_DIM], action_max: f64) -> Action {
    Action::new(a[0] as f64 * action_max, a[1] as f64 * action_max)
}

fn random_action(rng: &mut SimRng) -> [f32; ACTION_DIM] {
    [rng::uniform(rng, -1.0, 1.0) as f32, rng::uniform(rng, -1.0, 1.0) as f32]
}

/// Runs the agent in the environment for `train.steps` steps, learning
/// online. Episodes use seeds derived from `seed`.
pub fn train_agent(
    env_cfg: &EpisodeConfig,
    agent_cfg: &AgentConfig,
    train: &TrainConfig,
    touch: Touch<'_>,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<(Agent, Vec<EpisodeLog>), VtConError> {
    touch.check(agent_cfg, env_cfg)?;
    let mut agent = Agent::new(agent_cfg.clone(), seed)?;
    let mut env = PushEnv::new(env_cfg.clone())?;
    let mut buffer = ReplayBuffer::new(agent_cfg.buffer_capacity);
    let mut tracker = ObsTracker::new(agent_cfg);
    let mut explore = rng::stream(seed, 0x3a3d);
    let mut logs = Vec::new();
    let mut last_update = None;
    let mut step = 0;
    let mut episode = 0;
    while step < train.steps {
        tracker.begin_episode();
        let mut obs = env.reset(episode_seed(seed, episode as u64))?;
        let mut current = tracker.record(&mut buffer, &obs, &touch);
        let (mut total, mut length, mut final_distance, mut success) = (0.0, 0, 0.0, false);
        while !env.is_finished() && step < train.steps {
            let a = if step < train.warmup {
                random_action(&mut explore)
            } else {
                let o = ObsTensors::gather(&buffer, &[&current], agent_cfg);
                agent.act(&o, false)[0]
            };
            let r = env.step(env_action(a, env_cfg.action_max))?;
            obs = r.observation;
            let next = tracker.record(&mut buffer, &obs, &touch);
            buffer.push(current, a, r.reward as f32, next.clone(), r.terminated);
            current = next;
            total += r.reward;
            length += 1;
            final_distance = r.info.final_distance;
            success = r.terminated;
            step += 1;
            if step >= train.warmup && buffer.len() >= agent_cfg.batch_size {
                for _ in 0..train.updates_per_step {
                    last_update = Some(agent.update(&buffer)?);
                }
            }
        }
        let log = EpisodeLog { episode, step, reward: total, length, final_distance, success, update: last_update };
        on_episode(&log);
        logs.push(log);
        episode += 1;
    }
    Ok((agent, logs))
}

/// Acts with a trained agent; the controller owns its episode frames.
pub struct AgentController<'a> {
    agent: &'a mut Agent,
    touch: Touch<'a>,
    tracker: ObsTracker,
    frames: EpisodeFrames,
    deterministic: bool,
}

impl<'a> AgentController<'a> {
    pub fn new(agent: &'a mut Agent, touch: Touch<'a>, env: &EpisodeConfig, deterministic: bool) -> Result<Self, VtConError> {
        touch.check(&agent.cfg, env)?;
        let tracker = ObsTracker::new(&agent.cfg);
        Ok(Self { agent, touch, tracker, frames: EpisodeFrames::default(), deterministic })
    }
}

impl Controller for AgentController<'_> {
    fn begin_episode(&mut self, _env: &EpisodeConfig) {
        self.frames.clear();
        self.tracker.begin_episode();
    }

    fn act(&mut self, _state: &WorldState, obs: &Observation, env: &EpisodeConfig) -> Action {
        let s = self.tracker.record(&mut self.frames, obs, &self.touch);
        let o = ObsTensors::gather(&self.frames, &[&s], &self.agent.cfg);
        env_action(self.agent.act(&o, self.deterministic)[0], env.action_max)
    }
}
