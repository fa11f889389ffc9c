//! Expert rollouts recorded as paired visual/tactile sequences.

use alloc::vec::Vec;

use crate::data::{assign_splits, Split};
use crate::expert::scripted_expert;
use crate::tactile::ContactDepthImage;
use crate::vtgen::PairSource;
use crate::world::{Action, EpisodeConfig, Observation, PushEnv, RgbImage, WorldError, WorldState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CollectError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("expert succeeded on {successes}/{episodes} probe episodes, below the {required:.0}% needed for useful data")]
    WeakExpert { successes: usize, episodes: usize, required: f64 },
}

/// Probe size and pass rate required before collecting.
pub const PROBE_EPISODES: usize = 20;
pub const PROBE_MIN_SUCCESS: f64 = 0.5;

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(q: u8) -> f32 {
    q as f32 / 255.0
}

/// One recorded episode. Index `t` holds what was observed before action
/// `t`; the last index is the observation after the final step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub seed: u64,
    pub success: bool,
    pub final_distance: f64,
    pub image_size: usize,
    /// Newest RGB frame per index, CHW, quantized to 8 bits.
    pub frames: Vec<Vec<u8>>,
    /// Newest ground-truth contact depth per index.
    pub tactile: Vec<ContactDepthImage>,
    pub proprio: Vec<[f32; 5]>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl Sequence {
    pub fn observations(&self) -> usize {
        self.frames.len()
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Frames `t-n+1..=t`, oldest first, padded with frame 0 at the start
    /// like the environment's stack after reset.
    pub fn visual_stack_into(&self, t: usize, n: usize, out: &mut Vec<f32>) {
        for k in 0..n {
            let idx = (t + k + 1).saturating_sub(n);
            out.extend(self.frames[idx].iter().map(|&q| dequantize(q)));
        }
    }
}

/// Distinct episode seed for each index under a run seed.
pub fn episode_seed(run_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = run_seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn newest(obs: &Observation) -> (&RgbImage, &ContactDepthImage) {
    (obs.visual.last().expect("non-empty stack"), obs.tactile.last().expect("non-empty stack"))
}

/// Runs one episode under `policy` and records every observation.
pub fn rollout<P>(env: &mut PushEnv, seed: u64, mut policy: P) -> Result<Sequence, WorldError>
where
    P: FnMut(&WorldState, &Observation) -> Action,
{
    let mut obs = env.reset(seed)?;
    let size = env.config().render.height;
    let mut seq = Sequence {
        seed,
        success: false,
        final_distance: 0.0,
        image_size: size,
        frames: Vec::new(),
        tactile: Vec::new(),
        proprio: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
    };
    loop {
        let (v, t) = newest(&obs);
        seq.frames.push(v.data.iter().map(|&x| quantize(x)).collect());
        seq.tactile.push(t.clone());
        seq.proprio.push(obs.proprio);
        if env.is_finished() {
            break;
        }
        let a = policy(env.state().expect("reset"), &obs).clamped(env.config().action_max);
        let r = env.step(a)?;
        seq.actions.push(a);
        seq.rewards.push(r.reward);
        seq.success = r.terminated;
        seq.final_distance = r.info.final_distance;
        obs = r.observation;
    }
    Ok(seq)
}

/// Success count of the scripted expert over `episodes` probe seeds.
pub fn probe_expert(cfg: &EpisodeConfig, episodes: usize, seed: u64) -> Result<usize, WorldError> {
    let mut env = PushEnv::new(cfg.clone())?;
    let mut wins = 0;
    for i in 0..episodes {
        // Probe seeds come from a different family than collection seeds.
        let s = rollout(&mut env, episode_seed(!seed, i as u64), |st, _| scripted_expert(st, cfg))?;
        wins += s.success as usize;
    }
    Ok(wins)
}

/// Scripted-expert sequences with their split assignment. Collection is
/// refused when the expert fails the probe.
pub fn collect_expert(cfg: &EpisodeConfig, n_sequences: usize, seed: u64) -> Result<(Vec<Sequence>, Vec<Split>), CollectError> {
    let wins = probe_expert(cfg, PROBE_EPISODES, seed)?;
    if (wins as f64) < PROBE_MIN_SUCCESS * PROBE_EPISODES as f64 {
        return Err(CollectError::WeakExpert { successes: wins, episodes: PROBE_EPISODES, required: 100.0 * PROBE_MIN_SUCCESS });
    }
    let mut env = PushEnv::new(cfg.clone())?;
    let mut out = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        out.push(rollout(&mut env, episode_seed(seed, i as u64), |st, _| scripted_expert(st, cfg))?);
    }
    Ok((out, assign_splits(n_sequences, seed)))
}

/// Every observation of a set of sequences as generator training pairs.
pub struct PairedFrames<'a> {
    sequences: Vec<&'a Sequence>,
    index: Vec<(usize, usize)>,
    stack: usize,
}

impl<'a> PairedFrames<'a> {
    pub fn new(sequences: impl IntoIterator<Item = &'a Sequence>, stack: usize) -> Self {
        let sequences: Vec<&Sequence> = sequences.into_iter().collect();
        let index = sequences.iter().enumerate().flat_map(|(s, q)| (0..q.observations()).map(move |t| (s, t))).collect();
        Self { sequences, index, stack }
    }

    /// Pairs from the sequences assigned to `split`.
    pub fn for_split(sequences: &'a [Sequence], splits: &[Split], split: Split, stack: usize) -> Self {
        Self::new(sequences.iter().zip(splits).filter(|(_, &s)| s == split).map(|(q, _)| q), stack)
    }

    pub fn sequence_count(&self) -> usize {
        self.sequences.len()
    }
}

impl PairSource for PairedFrames<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn visual_into(&self, i: usize, out: &mut Vec<f32>) {
        let (s, t) = self.index[i];
        self.sequences[s].visual_stack_into(t, self.stack, out);
    }

    fn tactile(&self, i: usize) -> &[f32] {
        let (s, t) = self.index[i];
        &self.sequences[s].tactile[t].values
    }
}
