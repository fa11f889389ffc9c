//! The two training stages, evaluation and ablations, shared by the CLI and
//! the acceptance tests.

use vitac_core::collect::{collect_expert, PairedFrames};
use vitac_core::data::Split;
use vitac_core::eval::{evaluate, EvalReport};
use vitac_core::nn::checkpoint::Checkpoint;
use vitac_core::nn::ParamStore;
use vitac_core::rng;
use vitac_core::vtcon::{
    train_agent, Agent, AgentConfig, AgentController, ContrastiveMode, EpisodeLog, FusionMode, Modality, Touch,
};
use vitac_core::vtgen::{train_generator, GenEpoch, GenReport, GenTrainer, VtGen};

use crate::config::{Config, TouchMode};
use crate::dataset::{build_manifest, Dataset};
use crate::Error;

pub const GENERATOR_PREFIX: &str = "generator";

pub fn collect(cfg: &Config) -> Result<Dataset, Error> {
    let (sequences, splits) = collect_expert(&cfg.world, cfg.collect.sequences, cfg.seed)?;
    let manifest = build_manifest(&sequences, &splits, cfg.seed, &cfg.world, cfg.digest());
    Ok(Dataset { manifest, sequences })
}

fn check_dataset(cfg: &Config, data: &Dataset) -> Result<(), Error> {
    let m = &data.manifest;
    let g = &cfg.generator;
    if m.image_size != g.image_size || m.tactile_rows != g.tactile_size || m.tactile_cols != g.tactile_size || m.frame_stack != g.frames {
        return Err(Error::Invalid(format!(
            "dataset ({}px images, {}x{} touch, {} frames) does not match the generator ({}px, {}x{}, {} frames)",
            m.image_size, m.tactile_rows, m.tactile_cols, m.frame_stack, g.image_size, g.tactile_size, g.tactile_size, g.frames
        )));
    }
    Ok(())
}

pub fn train_gen(cfg: &Config, data: &Dataset, on_epoch: impl FnMut(&GenEpoch)) -> Result<(GenTrainer, GenReport), Error> {
    check_dataset(cfg, data)?;
    let splits = data.splits();
    let n = cfg.generator.frames;
    let part = |s| PairedFrames::for_split(&data.sequences, &splits, s, n);
    let (train, val, test) = (part(Split::Train), part(Split::Val), part(Split::Test));
    Ok(train_generator(&cfg.generator, &cfg.gen_train, cfg.seed, &train, &val, &test, on_epoch)?)
}

pub fn generator_checkpoint(store: &ParamStore<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.add_store(GENERATOR_PREFIX, store, false);
    ck
}

pub fn load_generator(cfg: &Config, bytes: &[u8]) -> Result<(VtGen, ParamStore<f32>), Error> {
    let mut store = ParamStore::new();
    let net = VtGen::new(&mut store, &cfg.generator, &mut rng::seeded(0))?;
    Checkpoint::decode(bytes)?.load_store(GENERATOR_PREFIX, &mut store, false)?;
    Ok((net, store))
}

pub type Generator<'a> = Option<(&'a VtGen, &'a ParamStore<f32>)>;

pub fn touch<'a>(cfg: &Config, agent: &AgentConfig, generator: Generator<'a>) -> Result<Touch<'a>, Error> {
    if agent.modality == Modality::VisualOnly {
        return Ok(Touch::GroundTruth);
    }
    match (cfg.policy.touch, generator) {
        (TouchMode::GroundTruth, _) => Ok(Touch::GroundTruth),
        (TouchMode::Generated, Some((net, store))) => Ok(Touch::Generated { net, store }),
        (TouchMode::Generated, None) => Err(Error::Invalid("generated touch needs a generator checkpoint".into())),
    }
}

pub fn train_policy(
    cfg: &Config,
    agent: &AgentConfig,
    seed: u64,
    generator: Generator<'_>,
    on_episode: impl FnMut(&EpisodeLog),
) -> Result<(Agent, Vec<EpisodeLog>), Error> {
    let t = touch(cfg, agent, generator)?;
    Ok(train_agent(&cfg.world, agent, &cfg.train, t, seed, on_episode)?)
}

pub fn evaluate_agent(
    cfg: &Config,
    agent: &mut Agent,
    generator: Generator<'_>,
    episodes: usize,
    threshold: f64,
) -> Result<EvalReport, Error> {
    let t = touch(cfg, &agent.cfg.clone(), generator)?;
    let mut controller = AgentController::new(agent, t, &cfg.world, true)?;
    let mut report = evaluate(&mut controller, &cfg.world, episodes, threshold, cfg.eval.seed)?;
    report.fingerprint = cfg.digest();
    Ok(report)
}

pub fn agent_from_checkpoint(cfg: &Config, bytes: &[u8]) -> Result<Agent, Error> {
    let mut agent = Agent::new(cfg.agent.clone(), cfg.seed)?;
    agent.load_checkpoint(&Checkpoint::decode(bytes)?)?;
    Ok(agent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Fusion,
    Contrastive,
}

impl AblationAxis {
    pub fn variants(self, base: &AgentConfig) -> Vec<(String, AgentConfig)> {
        match self {
            AblationAxis::Fusion => [FusionMode::Add, FusionMode::Concat, FusionMode::Attention]
                .into_iter()
                .map(|f| (f.label().to_string(), AgentConfig { fusion: f, ..base.clone() }))
                .collect(),
            AblationAxis::Contrastive => [ContrastiveMode::None, ContrastiveMode::Standard, ContrastiveMode::Verbatim]
                .into_iter()
                .map(|m| {
                    let mut c = base.clone();
                    c.contrastive.mode = m;
                    (m.label().to_string(), c)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains and evaluates every variant on every configured seed. All
/// variants see the same training and evaluation episode seeds.
pub fn ablate(
    cfg: &Config,
    axis: AblationAxis,
    generator: Generator<'_>,
    mut progress: impl FnMut(&str, u64, Option<&EpisodeLog>),
) -> Result<Vec<AblationRow>, Error> {
    let mut run = cfg.clone();
    run.train.steps = cfg.ablation.steps;
    let mut rows = Vec::new();
    for (label, agent_cfg) in axis.variants(&cfg.agent) {
        for &seed in &cfg.ablation.seeds {
            progress(&label, seed, None);
            let (mut agent, _) = train_policy(&run, &agent_cfg, seed, generator, |e| progress(&label, seed, Some(e)))?;
            let report = evaluate_agent(&run, &mut agent, generator, cfg.ablation.episodes, cfg.ablation.threshold)?;
            rows.push(AblationRow { variant: label.clone(), seed, report });
        }
    }
    Ok(rows)
}
