//! Seeded policy evaluation and its report.

use alloc::string::String;
use alloc::vec::Vec;

use crate::collect::episode_seed;
use crate::expert::scripted_expert;
use crate::rng::{self, SimRng};
use crate::world::{Action, EpisodeConfig, Observation, PushEnv, WorldError, WorldState};

/// Success threshold of the main comparison, meters.
pub const MAIN_THRESHOLD: f64 = 0.025;
/// Success threshold of the ablation protocol, meters.
pub const ABLATION_THRESHOLD: f64 = 0.04;

pub trait Controller {
    fn begin_episode(&mut self, _env: &EpisodeConfig) {}
    fn act(&mut self, state: &WorldState, obs: &Observation, env: &EpisodeConfig) -> Action;
}

pub struct ScriptedController;

impl Controller for ScriptedController {
    fn act(&mut self, state: &WorldState, _obs: &Observation, env: &EpisodeConfig) -> Action {
        scripted_expert(state, env)
    }
}

/// Uniform actions over the full command range.
pub struct RandomController(pub SimRng);

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self(rng::stream(seed, 0x7a4d))
    }
}

impl Controller for RandomController {
    fn act(&mut self, _state: &WorldState, _obs: &Observation, env: &EpisodeConfig) -> Action {
        let m = env.action_max;
        Action::new(rng::uniform(&mut self.0, -m, m), rng::uniform(&mut self.0, -m, m))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeRow {
    pub seed: u64,
    pub reward: f64,
    pub length: usize,
    /// Object to final goal, meters.
    pub final_distance: f64,
    pub success: bool,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Self { mean, std: libm::sqrt(var) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub reward: MeanStd,
    pub length: MeanStd,
    pub distance: MeanStd,
    /// Fraction of successful episodes in `[0, 1]`.
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub threshold: f64,
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
    /// Absent when there are no episodes.
    pub summary: Option<Summary>,
    /// Digest of the configuration that produced the report; filled by the
    /// caller.
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EpisodeRow>, threshold: f64, seed: u64) -> Self {
        let summary = summarize(&rows);
        Self { threshold, seed, rows, summary, fingerprint: String::new() }
    }

    pub fn success_rate(&self) -> Option<f64> {
        self.summary.map(|s| s.success_rate)
    }
}

pub fn summarize(rows: &[EpisodeRow]) -> Option<Summary> {
    Some(Summary {
        reward: MeanStd::of(rows.iter().map(|r| r.reward))?,
        length: MeanStd::of(rows.iter().map(|r| r.length as f64))?,
        distance: MeanStd::of(rows.iter().map(|r| r.final_distance))?,
        success_rate: rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64,
    })
}

/// Seeds of the evaluation episodes; disjoint from training seeds, which use
/// the run seed directly.
pub fn eval_seed(seed: u64, episode: usize) -> u64 {
    episode_seed(seed ^ 0xe7a1_0000_0000_0000, episode as u64)
}

/// Rolls `controller` out for `episodes` seeded episodes. An episode counts
/// as a success when its final distance is below `threshold`.
pub fn evaluate<C: Controller + ?Sized>(
    controller: &mut C,
    env_cfg: &EpisodeConfig,
    episodes: usize,
    threshold: f64,
    seed: u64,
) -> Result<EvalReport, WorldError> {
    let mut env = PushEnv::new(env_cfg.clone())?;
    let mut rows = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = eval_seed(seed, i);
        let mut obs = env.reset(s)?;
        controller.begin_episode(env_cfg);
        let (mut reward, mut length) = (0.0, 0);
        let mut final_distance = env.state().expect("reset").final_distance();
        while !env.is_finished() {
            let a = controller.act(env.state().expect("reset"), &obs, env_cfg);
            let r = env.step(a)?;
            reward += r.reward;
            length += 1;
            final_distance = r.info.final_distance;
            obs = r.observation;
        }
        rows.push(EpisodeRow { seed: s, reward, length, final_distance, success: final_distance < threshold });
    }
    Ok(EvalReport::from_rows(rows, threshold, seed))
}
