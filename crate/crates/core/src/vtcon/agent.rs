//! Soft actor-critic over fused visual-tactile features.
//!
//! Parameter groups live in separate stores: the two online encoders, the
//! fusion head (fusion plus proprioception MLP), the twin critics, the actor
//! and the temperature. Momentum encoders and the target fusion head and
//! critics are congruent clones. Next-state features for the TD target come
//! from the momentum encoders and the target fusion head.

use alloc::vec::Vec;

use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::Mlp;
use crate::nn::{adam_step, AdamConfig, Bound, Graph, NnError, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rng::{self, SimRng};

use super::contrastive::{bidirectional, ContrastiveConfig, ContrastiveMode};
use super::encoder::{contrastive_vectors, tactile_to_rgb, Encoder, EncoderConfig};
use super::fusion::{Fusion, FusionMode};
use super::replay::{FrameSource, ReplayBuffer, StackRef};
use super::VtConError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Modality {
    VisualTactile,
    /// Visual encoder only: no tactile branch, fusion or contrastive step.
    VisualOnly,
}

pub const ACTION_DIM: usize = 2;
pub const PROPRIO_DIM: usize = 5;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct AgentConfig {
    pub modality: Modality,
    pub frames: usize,
    pub image_size: usize,
    pub tactile_size: usize,
    pub encoder: EncoderConfig,
    pub fusion: FusionMode,
    pub heads: usize,
    pub proprio_hidden: usize,
    pub proprio_out: usize,
    pub hidden: usize,
    pub contrastive: ContrastiveConfig,
    pub gamma: f64,
    /// Polyak rate of the target critics and target fusion head.
    pub tau: f64,
    /// Momentum-encoder coefficient: `M <- eta M + (1 - eta) E`.
    pub momentum: f64,
    pub init_alpha: f64,
    pub learn_alpha: bool,
    /// Defaults to `-ACTION_DIM`.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub adam: AdamConfig,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            modality: Modality::VisualTactile,
            frames: 3,
            image_size: 64,
            tactile_size: 32,
            encoder: EncoderConfig::default(),
            fusion: FusionMode::Attention,
            heads: 8,
            proprio_hidden: 32,
            proprio_out: 32,
            hidden: 256,
            contrastive: ContrastiveConfig::default(),
            gamma: 0.99,
            tau: 0.005,
            momentum: 0.99,
            init_alpha: 0.1,
            learn_alpha: true,
            target_entropy: None,
            batch_size: 64,
            buffer_capacity: 20_000,
            adam: AdamConfig::default(),
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), VtConError> {
        self.contrastive.validate()?;
        if self.frames == 0 || self.hidden == 0 || self.proprio_hidden == 0 || self.proprio_out == 0 {
            return Err(VtConError::Config("frames and layer widths must be positive"));
        }
        if self.encoder.pool_for(self.image_size).is_none() {
            return Err(VtConError::Config("encoder geometry does not tile the image size"));
        }
        if self.tactile_size == 0 || self.image_size % self.tactile_size != 0 {
            return Err(VtConError::Config("image size must be a multiple of the tactile size"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(VtConError::Config("gamma in [0,1], tau in (0,1], momentum in [0,1)"));
        }
        if !(self.init_alpha > 0.0) || self.batch_size < 2 || self.buffer_capacity < self.batch_size {
            return Err(VtConError::Config("alpha must be positive, batch at least 2 and within the buffer"));
        }
        if !self.adam.is_valid() || !(self.log_std_min < self.log_std_max) {
            return Err(VtConError::Config("invalid optimizer or log-std range"));
        }
        Ok(())
    }

    pub fn uses_tactile(&self) -> bool {
        self.modality == Modality::VisualTactile
    }

    pub fn input_channels(&self) -> usize {
        3 * self.frames
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(ACTION_DIM as f64))
    }
}

/// One batch of observations as network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsTensors {
    /// `[B, 3N, H, H]`
    pub visual: Tensor<f32>,
    /// `[B, 3N, H, H]`: each tactile frame resized and replicated to RGB.
    pub tactile: Option<Tensor<f32>>,
    /// `[B, 5]`
    pub proprio: Tensor<f32>,
}

impl ObsTensors {
    pub fn gather<S: FrameSource + ?Sized>(src: &S, refs: &[&StackRef], cfg: &AgentConfig) -> Self {
        let (b, c, h) = (refs.len(), cfg.input_channels(), cfg.image_size);
        let mut vis = Vec::with_capacity(b * c * h * h);
        let mut prop = Vec::with_capacity(b * PROPRIO_DIM);
        for r in refs {
            for &id in &r.visual {
                vis.extend(src.frame(id).visual.iter().map(|&q| q as f32 / 255.0));
            }
            prop.extend_from_slice(&r.proprio);
        }
        let tactile = cfg.uses_tactile().then(|| {
            let mut tac = Vec::with_capacity(b * c * h * h);
            let mut plane = Vec::with_capacity(cfg.tactile_size * cfg.tactile_size);
            for r in refs {
                for &id in &r.tactile {
                    plane.clear();
                    plane.extend(src.frame(id).tactile.iter().map(|&q| q as f32 / 255.0));
                    tactile_to_rgb(&plane, cfg.tactile_size, h, &mut tac);
                }
            }
            Tensor::new(&[b, c, h, h], tac)
        });
        Self { visual: Tensor::new(&[b, c, h, h], vis), tactile, proprio: Tensor::new(&[b, PROPRIO_DIM], prop) }
    }
}

/// Sampled training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: ObsTensors,
    pub next: ObsTensors,
    pub action: Tensor<f32>,
    pub reward: Vec<f32>,
    pub done: Vec<f32>,
}

impl Batch {
    pub fn from_buffer(buffer: &ReplayBuffer, indices: &[usize], cfg: &AgentConfig) -> Self {
        let ts: Vec<_> = indices.iter().map(|&i| buffer.get(i)).collect();
        let obs: Vec<&StackRef> = ts.iter().map(|t| &t.obs).collect();
        let next: Vec<&StackRef> = ts.iter().map(|t| &t.next).collect();
        Self {
            obs: ObsTensors::gather(buffer, &obs, cfg),
            next: ObsTensors::gather(buffer, &next, cfg),
            action: Tensor::new(&[ts.len(), ACTION_DIM], ts.iter().flat_map(|t| t.action).collect()),
            reward: ts.iter().map(|t| t.reward).collect(),
            done: ts.iter().map(|t| t.done as u8 as f32).collect(),
        }
    }
}

/// Network layouts; parameter values live in [`AgentParams`].
#[derive(Clone, Debug)]
pub struct AgentNets {
    pub enc_v: Encoder,
    pub enc_c: Option<Encoder>,
    pub fusion: Option<Fusion>,
    pub proprio: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub actor: Mlp,
    pub log_alpha: ParamId,
}

/// Parameter groups of one agent, each with its own optimizer state.
#[derive(Clone, Debug)]
pub struct AgentParams<T: Scalar> {
    pub enc_v: ParamStore<T>,
    pub enc_c: ParamStore<T>,
    pub fuse: ParamStore<T>,
    pub critic: ParamStore<T>,
    pub actor: ParamStore<T>,
    pub alpha: ParamStore<T>,
    pub mom_v: ParamStore<T>,
    pub mom_c: ParamStore<T>,
    pub fuse_target: ParamStore<T>,
    pub critic_target: ParamStore<T>,
}

/// Which copy of each group a forward pass reads.
#[derive(Clone, Copy)]
pub struct ObsBinding<'a, T> {
    pub enc_v: Bound<'a, T>,
    pub enc_c: Bound<'a, T>,
    pub fuse: Bound<'a, T>,
}

pub struct ObsVars {
    /// `[B, state_width]`: fused features then proprioception features.
    pub state: Var,
    pub tokens_v: Var,
    pub tokens_c: Option<Var>,
}

impl AgentNets {
    pub fn build<T: Scalar>(cfg: &AgentConfig, rng: &mut SimRng) -> Result<(Self, AgentParams<T>), VtConError> {
        cfg.validate()?;
        let c = cfg.input_channels();
        let mut enc_v_store = ParamStore::new();
        let enc_v = Encoder::new(&mut enc_v_store, "encoder", c, &cfg.encoder, rng)?;
        let mut enc_c_store = ParamStore::new();
        let enc_c = cfg.uses_tactile().then(|| Encoder::new(&mut enc_c_store, "encoder", c, &cfg.encoder, rng)).transpose()?;
        let mut fuse = ParamStore::new();
        let (t, d) = (cfg.encoder.tokens(), cfg.encoder.channels);
        let fusion = cfg.uses_tactile().then(|| Fusion::new(&mut fuse, cfg.fusion, t, d, cfg.heads, rng)).transpose()?;
        let proprio = Mlp::new(&mut fuse, "proprio", &[PROPRIO_DIM, cfg.proprio_hidden, cfg.proprio_out], rng);
        let state = fusion.as_ref().map(|f| f.output_width()).unwrap_or(t * d) + cfg.proprio_out;
        let mut critic = ParamStore::new();
        let q1 = Mlp::new(&mut critic, "q1", &[state + ACTION_DIM, cfg.hidden, cfg.hidden, 1], rng);
        let q2 = Mlp::new(&mut critic, "q2", &[state + ACTION_DIM, cfg.hidden, cfg.hidden, 1], rng);
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", &[state, cfg.hidden, cfg.hidden, 2 * ACTION_DIM], rng);
        let mut alpha = ParamStore::new();
        let log_alpha = alpha.add("log_alpha", Tensor::from_f64(&[1], &[libm::log(cfg.init_alpha)]));
        let params = AgentParams {
            mom_v: enc_v_store.clone(),
            mom_c: enc_c_store.clone(),
            fuse_target: fuse.clone(),
            critic_target: critic.clone(),
            enc_v: enc_v_store,
            enc_c: enc_c_store,
            fuse,
            critic,
            actor: actor_store,
            alpha,
        };
        Ok((Self { enc_v, enc_c, fusion, proprio, q1, q2, actor, log_alpha }, params))
    }

    pub fn state_width(&self) -> usize {
        let t = self.enc_v.config().feature_width();
        self.fusion.as_ref().map(|f| f.output_width()).unwrap_or(t) + self.proprio.output_width()
    }

    pub fn observe<T: Scalar>(&self, g: &mut Graph<T>, b: ObsBinding<'_, T>, obs: &ObsTensors) -> ObsVars {
        let v = g.input(obs.visual.cast());
        let tokens_v = self.enc_v.tokens(g, b.enc_v, v);
        let batch = g.shape(tokens_v)[0];
        let (fused, tokens_c) = match (&self.enc_c, &self.fusion, &obs.tactile) {
            (Some(ec), Some(f), Some(tac)) => {
                let c = g.input(tac.cast());
                let tc = ec.tokens(g, b.enc_c, c);
                (f.forward(g, b.fuse, tokens_v, tc), Some(tc))
            }
            (None, _, _) => (g.reshape(tokens_v, &[batch, self.enc_v.config().feature_width()]), None),
            _ => panic!("tactile-aware agent needs tactile observations"),
        };
        let p = g.input(obs.proprio.cast());
        let pf = self.proprio.forward(g, b.fuse, p);
        let state = g.concat(&[fused, pf], 1);
        ObsVars { state, tokens_v, tokens_c }
    }

    /// `Q(s, a)` as `[B]`.
    pub fn q<T: Scalar>(&self, g: &mut Graph<T>, net: &Mlp, p: Bound<'_, T>, state: Var, action: Var) -> Var {
        let x = g.concat(&[state, action], 1);
        let q = net.forward(g, p, x);
        let b = g.shape(q)[0];
        g.reshape(q, &[b])
    }

    /// Squashed Gaussian policy. With `eps` the sample is `tanh(mu + sigma
    /// eps)`; without, the squashed mean. Returns the action in `[-1, 1]`
    /// and, when sampling, its log density.
    pub fn policy<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: Bound<'_, T>,
        state: Var,
        eps: Option<&Tensor<T>>,
        log_std: (f64, f64),
    ) -> (Var, Option<Var>) {
        let out = self.actor.forward(g, p, state);
        let mu = g.slice(out, 1, 0, ACTION_DIM);
        let Some(eps) = eps else {
            return (g.tanh(mu), None);
        };
        let ls = g.slice(out, 1, ACTION_DIM, ACTION_DIM);
        let ls = g.clamp(ls, T::from_f64(log_std.0), T::from_f64(log_std.1));
        let std = g.exp(ls);
        let e = g.input(eps.clone());
        let noise = g.mul(std, e);
        let u = g.add(mu, noise);
        let a = g.tanh(u);
        // log N(u; mu, sigma) = -eps^2/2 - log sigma - log(2 pi)/2
        let half_log_2pi = 0.5 * libm::log(2.0 * core::f64::consts::PI);
        let base = Tensor::new(eps.shape(), eps.data().iter().map(|&x| T::from_f64(-0.5 * x.to_f64() * x.to_f64() - half_log_2pi)).collect());
        let base = g.input(base);
        let gauss = g.sub(base, ls);
        let a2 = g.square(a);
        let one_minus = g.neg(a2);
        let one_minus = g.add_scalar(one_minus, T::from_f64(1.0 + 1e-6));
        let jac = g.log(one_minus);
        let per = g.sub(gauss, jac);
        (a, Some(g.sum_last(per)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    /// Contrastive loss `L_vt + L_tv`; absent when the step is disabled.
    pub con_loss: Option<f64>,
    pub l_vt: Option<f64>,
    pub l_tv: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub nets: AgentNets,
    pub params: AgentParams<f32>,
    update_rng: SimRng,
    act_rng: SimRng,
    updates: u64,
}

fn normal_tensor(rng: &mut SimRng, shape: &[usize]) -> Tensor<f32> {
    let n = crate::nn::numel(shape);
    Tensor::new(shape, (0..n).map(|_| rng::normal(rng) as f32).collect())
}

fn step_group(store: &mut ParamStore<f32>, grads: &crate::nn::Gradients<f32>, adam: &AdamConfig) {
    store.zero_grad();
    store.accumulate(grads);
    adam_step(store, adam);
}

impl Agent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self, VtConError> {
        let (nets, params) = AgentNets::build(&cfg, &mut rng::stream(seed, 0xa6e7))?;
        Ok(Self { cfg, nets, params, update_rng: rng::stream(seed, 0x5ac), act_rng: rng::stream(seed, 0xac7), updates: 0 })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn alpha(&self) -> f64 {
        libm::exp(self.params.alpha.value(self.nets.log_alpha).data()[0] as f64)
    }

    fn online(&self) -> ObsBinding<'_, f32> {
        ObsBinding {
            enc_v: Bound::frozen(&self.params.enc_v),
            enc_c: Bound::frozen(&self.params.enc_c),
            fuse: Bound::frozen(&self.params.fuse),
        }
    }

    /// Normalized actions in `[-1, 1]^2` for a batch of observations.
    pub fn act(&mut self, obs: &ObsTensors, deterministic: bool) -> Vec<[f32; 2]> {
        let b = obs.proprio.shape()[0];
        let eps = (!deterministic).then(|| normal_tensor(&mut self.act_rng, &[b, ACTION_DIM]));
        let mut g = Graph::new();
        let s = self.nets.observe(&mut g, self.online(), obs);
        let (a, _) = self.nets.policy(&mut g, Bound::frozen(&self.params.actor), s.state, eps.as_ref(), self.log_std());
        g.data(a).chunks(ACTION_DIM).map(|c| [c[0], c[1]]).collect()
    }

    fn log_std(&self) -> (f64, f64) {
        (self.cfg.log_std_min, self.cfg.log_std_max)
    }

    /// Samples a batch and runs one full update.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<UpdateReport, VtConError> {
        if buffer.len() < self.cfg.batch_size {
            return Err(VtConError::InsufficientBuffer { have: buffer.len(), need: self.cfg.batch_size });
        }
        let idx = buffer.sample_indices(&mut self.update_rng, self.cfg.batch_size);
        let batch = Batch::from_buffer(buffer, &idx, &self.cfg);
        self.update_on(&batch)
    }

    /// Critic, actor, temperature, target averaging, contrastive step and
    /// momentum update, in that order.
    pub fn update_on(&mut self, batch: &Batch) -> Result<UpdateReport, VtConError> {
        let b = batch.reward.len();
        if b < 2 {
            return Err(VtConError::BatchTooSmall(b));
        }
        let cfg = self.cfg.clone();
        let alpha = self.alpha();
        let mut report = UpdateReport { alpha, ..UpdateReport::default() };
        let eps_next = normal_tensor(&mut self.update_rng, &[b, ACTION_DIM]);
        let eps_pi = normal_tensor(&mut self.update_rng, &[b, ACTION_DIM]);

        // Critic.
        let state_values = {
            let p = &self.params;
            let mut g = Graph::new();
            let target = ObsBinding {
                enc_v: Bound::frozen(&p.mom_v),
                enc_c: Bound::frozen(&p.mom_c),
                fuse: Bound::frozen(&p.fuse_target),
            };
            let nobs = self.nets.observe(&mut g, target, &batch.next);
            let (na, nlogp) = self.nets.policy(&mut g, Bound::frozen(&p.actor), nobs.state, Some(&eps_next), self.log_std());
            let ct = Bound::frozen(&p.critic_target);
            let tq1 = self.nets.q(&mut g, &self.nets.q1, ct, nobs.state, na);
            let tq2 = self.nets.q(&mut g, &self.nets.q2, ct, nobs.state, na);
            let tq = g.min(tq1, tq2);
            let nlogp = nlogp.expect("sampled");
            let y: Vec<f32> = (0..b)
                .map(|i| {
                    let soft = g.data(tq)[i] as f64 - alpha * g.data(nlogp)[i] as f64;
                    (batch.reward[i] as f64 + cfg.gamma * (1.0 - batch.done[i] as f64) * soft) as f32
                })
                .collect();
            let online = ObsBinding { enc_v: Bound::train(&p.enc_v), enc_c: Bound::train(&p.enc_c), fuse: Bound::train(&p.fuse) };
            let obs = self.nets.observe(&mut g, online, &batch.obs);
            let act = g.input(batch.action.clone());
            let cb = Bound::train(&p.critic);
            let q1 = self.nets.q(&mut g, &self.nets.q1, cb, obs.state, act);
            let q2 = self.nets.q(&mut g, &self.nets.q2, cb, obs.state, act);
            let yv = g.input(Tensor::new(&[b], y));
            let d1 = g.sub(q1, yv);
            let d1 = g.square(d1);
            let l1 = g.mean(d1);
            let d2 = g.sub(q2, yv);
            let d2 = g.square(d2);
            let l2 = g.mean(d2);
            let loss = g.add(l1, l2);
            report.critic_loss = g.data(loss)[0] as f64;
            let state_values = g.value(obs.state).clone();
            let grads = g.backward(loss)?;
            let p = &mut self.params;
            step_group(&mut p.enc_v, &grads, &cfg.adam);
            if cfg.uses_tactile() {
                step_group(&mut p.enc_c, &grads, &cfg.adam);
            }
            step_group(&mut p.fuse, &grads, &cfg.adam);
            step_group(&mut p.critic, &grads, &cfg.adam);
            state_values
        };

        // Actor, on detached state features.
        let logp_values = {
            let p = &self.params;
            let mut g = Graph::new();
            let s = g.input(state_values);
            let (a, logp) = self.nets.policy(&mut g, Bound::train(&p.actor), s, Some(&eps_pi), self.log_std());
            let logp = logp.expect("sampled");
            let cf = Bound::frozen(&p.critic);
            let q1 = self.nets.q(&mut g, &self.nets.q1, cf, s, a);
            let q2 = self.nets.q(&mut g, &self.nets.q2, cf, s, a);
            let q = g.min(q1, q2);
            let al = g.scale(logp, alpha as f32);
            let obj = g.sub(al, q);
            let loss = g.mean(obj);
            report.actor_loss = g.data(loss)[0] as f64;
            let logp_values = g.data(logp).to_vec();
            let grads = g.backward(loss)?;
            step_group(&mut self.params.actor, &grads, &cfg.adam);
            logp_values
        };
        report.entropy = -logp_values.iter().map(|&v| v as f64).sum::<f64>() / b as f64;

        // Temperature.
        if cfg.learn_alpha {
            let mut g = Graph::new();
            let la = g.param(&self.params.alpha, self.nets.log_alpha);
            let coef = -(logp_values.iter().map(|&v| v as f64).sum::<f64>() / b as f64 + cfg.target_entropy());
            let c = g.input(Tensor::from_f64(&[1], &[coef]));
            let loss = g.mul(la, c);
            let loss = g.mean(loss);
            report.alpha_loss = g.data(loss)[0] as f64;
            let grads = g.backward(loss)?;
            step_group(&mut self.params.alpha, &grads, &cfg.adam);
        }

        // Target averaging.
        let keep = (1.0 - cfg.tau) as f32;
        self.params.critic_target.ema_from(&self.params.critic, keep)?;
        self.params.fuse_target.ema_from(&self.params.fuse, keep)?;

        // Contrastive step.
        if cfg.uses_tactile() && cfg.contrastive.mode != ContrastiveMode::None && cfg.contrastive.weight > 0.0 {
            let (vt, tv, con, grads) = self.contrastive_grads(&batch.obs)?;
            report.l_vt = Some(vt);
            report.l_tv = Some(tv);
            report.con_loss = Some(con);
            step_group(&mut self.params.enc_v, &grads, &cfg.adam);
            step_group(&mut self.params.enc_c, &grads, &cfg.adam);
        }

        // Momentum encoders.
        self.momentum_update()?;
        self.updates += 1;
        Ok(report)
    }

    /// Contrastive loss values and weighted gradients on `obs`.
    pub fn contrastive_grads(&self, obs: &ObsTensors) -> Result<(f64, f64, f64, crate::nn::Gradients<f32>), VtConError> {
        let (Some(ec), Some(tac)) = (&self.nets.enc_c, &obs.tactile) else {
            return Err(VtConError::Config("contrastive step needs the tactile branch"));
        };
        let p = &self.params;
        let c = &self.cfg.contrastive;
        let mut g = Graph::new();
        let v = g.input(obs.visual.clone());
        let t = g.input(tac.clone());
        let tv = self.nets.enc_v.tokens(&mut g, Bound::train(&p.enc_v), v);
        let tc = ec.tokens(&mut g, Bound::train(&p.enc_c), t);
        let mv = self.nets.enc_v.tokens(&mut g, Bound::frozen(&p.mom_v), v);
        let mc = ec.tokens(&mut g, Bound::frozen(&p.mom_c), t);
        let (fv, fc) = (contrastive_vectors(&mut g, tv), contrastive_vectors(&mut g, tc));
        let (mv, mc) = (contrastive_vectors(&mut g, mv), contrastive_vectors(&mut g, mc));
        let (l_vt, l_tv, con) = bidirectional(&mut g, fv, fc, mv, mc, c.temperature, c.mode)?;
        let values = (g.data(l_vt)[0] as f64, g.data(l_tv)[0] as f64, g.data(con)[0] as f64);
        let loss = g.scale(con, c.weight as f32);
        let grads = g.backward(loss)?;
        Ok((values.0, values.1, values.2, grads))
    }

    /// `M <- eta M + (1 - eta) E` for both modalities.
    pub fn momentum_update(&mut self) -> Result<(), NnError> {
        let eta = self.cfg.momentum as f32;
        self.params.mom_v.ema_from(&self.params.enc_v, eta)?;
        self.params.mom_c.ema_from(&self.params.enc_c, eta)
    }

    /// Every parameter group, with optimizer state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, store) in self.groups() {
            ck.add_store(name, store, true);
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), NnError> {
        let p = &mut self.params;
        let groups: [(&str, &mut ParamStore<f32>); 10] = [
            ("enc_v", &mut p.enc_v),
            ("enc_c", &mut p.enc_c),
            ("fuse", &mut p.fuse),
            ("critic", &mut p.critic),
            ("actor", &mut p.actor),
            ("alpha", &mut p.alpha),
            ("mom_v", &mut p.mom_v),
            ("mom_c", &mut p.mom_c),
            ("fuse_target", &mut p.fuse_target),
            ("critic_target", &mut p.critic_target),
        ];
        for (name, store) in groups {
            ck.load_store(name, store, true)?;
        }
        Ok(())
    }

    pub fn groups(&self) -> [(&'static str, &ParamStore<f32>); 10] {
        let p = &self.params;
        [
            ("enc_v", &p.enc_v),
            ("enc_c", &p.enc_c),
            ("fuse", &p.fuse),
            ("critic", &p.critic),
            ("actor", &p.actor),
            ("alpha", &p.alpha),
            ("mom_v", &p.mom_v),
            ("mom_c", &p.mom_c),
            ("fuse_target", &p.fuse_target),
            ("critic_target", &p.critic_target),
        ]
    }
}

/// Critic regression targets `r + gamma (1 - done) (min Q' - alpha log pi')`
/// from precomputed next-state terms.
pub fn td_targets(reward: &[f32], done: &[f32], min_q_next: &[f64], logp_next: &[f64], gamma: f64, alpha: f64) -> Vec<f64> {
    (0..reward.len())
        .map(|i| reward[i] as f64 + gamma * (1.0 - done[i] as f64) * (min_q_next[i] - alpha * logp_next[i]))
        .collect()
}

/// Finite-difference checks of the encoders, fusion head and proprioception
/// MLP composed into the state features, once per fusion mode, in `f64`.
pub fn observation_gradchecks(seed: u64) -> Vec<crate::nn::gradcheck::GradCheck> {
    use crate::nn::gradcheck::{check, random_tensor, weighted_sum};
    let mut out = Vec::new();
    for mode in [FusionMode::Attention, FusionMode::Add, FusionMode::Concat] {
        let cfg = AgentConfig {
            encoder: EncoderConfig { stem_channels: 4, channels: 8, token_side: 2, ..EncoderConfig::default() },
            image_size: 16,
            tactile_size: 8,
            frames: 1,
            heads: 2,
            fusion: mode,
            hidden: 8,
            ..AgentConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut r = rng::stream(seed, 0x6f62);
        let enc_v = Encoder::new(&mut store, "v", 3, &cfg.encoder, &mut r).expect("valid encoder");
        let enc_c = Encoder::new(&mut store, "c", 3, &cfg.encoder, &mut r).expect("valid encoder");
        let fusion = Fusion::new(&mut store, mode, 4, 8, 2, &mut r).expect("valid fusion");
        let proprio = Mlp::new(&mut store, "proprio", &[PROPRIO_DIM, 8, 8], &mut r);
        let (skel, _) = AgentNets::build::<f64>(&cfg, &mut rng::seeded(0)).expect("valid agent");
        let nets = AgentNets { enc_v, enc_c: Some(enc_c), fusion: Some(fusion), proprio, ..skel };
        let to_f32 = |t: Tensor<f64>| Tensor::new(t.shape(), t.data().iter().map(|&v| v as f32).collect());
        let obs = ObsTensors {
            visual: to_f32(random_tensor(&mut r, &[2, 3, 16, 16], 0.0, 1.0)),
            tactile: Some(to_f32(random_tensor(&mut r, &[2, 3, 16, 16], 0.0, 1.0))),
            proprio: to_f32(random_tensor(&mut r, &[2, PROPRIO_DIM], -1.0, 1.0)),
        };
        out.push(check(mode.label(), &mut store, 12, seed, |g, s| {
            let b = ObsBinding { enc_v: Bound::train(s), enc_c: Bound::train(s), fuse: Bound::train(s) };
            let o = nets.observe(g, b, &obs);
            weighted_sum(g, o.state, seed ^ 0x0b5)
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::nn::layers::Mlp;
    use alloc::vec;

    fn small() -> AgentConfig {
        AgentConfig {
            image_size: 32,
            tactile_size: 16,
            hidden: 32,
            proprio_hidden: 8,
            proprio_out: 8,
            batch_size: 8,
            buffer_capacity: 64,
            ..AgentConfig::default()
        }
    }

    fn obs(cfg: &AgentConfig, b: usize, seed: u64) -> ObsTensors {
        let mut r = rng::seeded(seed);
        let (c, h) = (cfg.input_channels(), cfg.image_size);
        let mut img = |n: usize| Tensor::new(&[b, c, h, h], (0..n).map(|_| rng::uniform(&mut r, 0.0, 1.0) as f32).collect());
        let visual = img(b * c * h * h);
        let tactile = cfg.uses_tactile().then(|| img(b * c * h * h));
        let proprio = Tensor::new(&[b, PROPRIO_DIM], (0..b * PROPRIO_DIM).map(|i| (i as f32 * 0.37).sin()).collect());
        ObsTensors { visual, tactile, proprio }
    }

    fn batch(cfg: &AgentConfig, seed: u64) -> Batch {
        let b = cfg.batch_size;
        Batch {
            obs: obs(cfg, b, seed),
            next: obs(cfg, b, seed + 1),
            action: Tensor::new(&[b, 2], (0..2 * b).map(|i| ((i as f32) * 0.9).cos()).collect()),
            reward: (0..b).map(|i| i as f32 * 0.1 - 0.3).collect(),
            done: (0..b).map(|i| (i % 3 == 0) as u8 as f32).collect(),
        }
    }

    fn sq_dist(a: &ParamStore<f32>, b: &ParamStore<f32>) -> f64 {
        a.flat_values().iter().zip(b.flat_values()).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
    }

    #[test]
    fn td_target_reduces_to_reward_without_bootstrap() {
        let (r, q, lp) = ([1.5f32, -0.5], [10.0, -3.0], [0.2, -0.7]);
        assert_eq!(td_targets(&r, &[0.0, 0.0], &q, &lp, 0.0, 0.3), vec![1.5, -0.5]);
        assert_eq!(td_targets(&r, &[1.0, 1.0], &q, &lp, 0.99, 0.3), vec![1.5, -0.5]);
        let y = td_targets(&r, &[0.0, 1.0], &q, &lp, 0.9, 0.5);
        assert!((y[0] - (1.5 + 0.9 * (10.0 - 0.1))).abs() < 1e-9);
    }

    #[test]
    fn critic_loss_falls_on_a_fixed_batch() {
        let cfg = AgentConfig { adam: AdamConfig::with_lr(1e-3), ..small() };
        let mut agent = Agent::new(cfg.clone(), 1).unwrap();
        let b = batch(&cfg, 10);
        let first = agent.update_on(&b).unwrap().critic_loss;
        let mut last = first;
        for _ in 0..20 {
            let r = agent.update_on(&b).unwrap();
            assert!(r.con_loss.is_some());
            last = r.critic_loss;
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!(agent.groups().iter().all(|(_, s)| s.all_finite()));
    }

    #[test]
    fn zero_contrastive_weight_matches_a_disabled_step() {
        let base = small();
        let zero = AgentConfig { contrastive: ContrastiveConfig { weight: 0.0, ..base.contrastive }, ..base.clone() };
        let none = AgentConfig { contrastive: ContrastiveConfig { mode: ContrastiveMode::None, ..base.contrastive }, ..base.clone() };
        let b = batch(&base, 3);
        let (mut a0, mut an, mut a1) = (Agent::new(zero, 5).unwrap(), Agent::new(none, 5).unwrap(), Agent::new(base, 5).unwrap());
        for _ in 0..3 {
            assert_eq!(a0.update_on(&b).unwrap().con_loss, None);
            an.update_on(&b).unwrap();
            a1.update_on(&b).unwrap();
        }
        for ((_, x), (_, y)) in a0.groups().iter().zip(an.groups()) {
            assert!(x.values_equal(y));
        }
        assert!(!a0.params.enc_v.values_equal(&a1.params.enc_v));
    }

    #[test]
    fn momentum_encoders_never_receive_gradients() {
        let cfg = small();
        let mut agent = Agent::new(cfg.clone(), 2).unwrap();
        let b = batch(&cfg, 4);
        let (_, _, _, grads) = agent.contrastive_grads(&b.obs).unwrap();
        assert!(grads.touches(&agent.params.enc_v) && grads.touches(&agent.params.enc_c));
        assert!(!grads.touches(&agent.params.mom_v) && !grads.touches(&agent.params.mom_c));
        for _ in 0..100 {
            agent.update_on(&b).unwrap();
            assert!(agent.params.mom_v.grads_all_zero() && agent.params.mom_c.grads_all_zero());
            assert_eq!(agent.params.mom_v.adam_steps(), 0);
        }
    }

    #[test]
    fn momentum_update_contracts_toward_the_online_encoder() {
        // A large step rate spreads online and momentum weights far enough
        // apart that f32 rounding stays below the tolerance.
        let cfg = AgentConfig { adam: AdamConfig::with_lr(1e-2), ..small() };
        let mut agent = Agent::new(cfg.clone(), 3).unwrap();
        for _ in 0..5 {
            agent.update_on(&batch(&cfg, 8)).unwrap();
        }
        let before = sq_dist(&agent.params.mom_v, &agent.params.enc_v).sqrt();
        assert!(before > 0.0);
        agent.momentum_update().unwrap();
        let after = sq_dist(&agent.params.mom_v, &agent.params.enc_v).sqrt();
        assert!((after / before - 0.99).abs() < 1e-6, "{}", after / before);

        agent.cfg.momentum = 0.0;
        agent.momentum_update().unwrap();
        assert!(agent.params.mom_v.values_equal(&agent.params.enc_v));
        assert!(agent.params.mom_c.values_equal(&agent.params.enc_c));
    }

    #[test]
    fn target_critics_stay_between_old_target_and_online() {
        let cfg = AgentConfig { tau: 0.3, adam: AdamConfig::with_lr(1e-2), ..small() };
        let mut agent = Agent::new(cfg.clone(), 4).unwrap();
        let b = batch(&cfg, 6);
        for _ in 0..3 {
            let old = agent.params.critic_target.flat_values();
            agent.update_on(&b).unwrap();
            let online = agent.params.critic.flat_values();
            for ((t, o), n) in agent.params.critic_target.flat_values().iter().zip(&old).zip(&online) {
                let (lo, hi) = (o.min(*n), o.max(*n));
                assert!(*t >= lo - 1e-6 && *t <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn actions_are_bounded_and_deterministic_mode_repeats() {
        let cfg = small();
        let mut agent = Agent::new(cfg.clone(), 6).unwrap();
        let o = obs(&cfg, 5, 9);
        let a = agent.act(&o, true);
        assert_eq!(a, agent.act(&o, true));
        let s1 = agent.act(&o, false);
        let s2 = agent.act(&o, false);
        assert_ne!(s1, s2);
        for x in a.iter().chain(&s1).chain(&s2).flatten() {
            assert!((-1.0..=1.0).contains(x));
        }
    }

    #[test]
    fn log_density_matches_scalar_formula() {
        let cfg = small();
        let mut store = ParamStore::<f64>::new();
        let mut r = rng::seeded(7);
        let width = 6;
        let actor = Mlp::new(&mut store, "actor", &[width, 16, 16, 4], &mut r);
        let (nets, _) = AgentNets::build::<f64>(&cfg, &mut rng::seeded(1)).unwrap();
        let nets = AgentNets { actor, ..nets };
        let state = gradcheck::random_tensor(&mut r, &[3, width], -2.0, 2.0);
        let eps = gradcheck::random_tensor(&mut r, &[3, 2], -2.0, 2.0);
        let mut g = Graph::new();
        let s = g.input(state);
        let (a, lp) = nets.policy(&mut g, Bound::frozen(&store), s, Some(&eps), (-20.0, 2.0));
        let out = nets.actor.forward(&mut g, Bound::frozen(&store), s);
        let out = g.data(out).to_vec();
        for i in 0..3 {
            let mut want = 0.0;
            for j in 0..2 {
                let (mu, ls) = (out[i * 4 + j], out[i * 4 + 2 + j].clamp(-20.0, 2.0));
                let u = mu + libm::exp(ls) * eps.data()[i * 2 + j];
                let density = libm::exp(-0.5 * ((u - mu) / libm::exp(ls)).powi(2)) / (libm::exp(ls) * libm::sqrt(2.0 * core::f64::consts::PI));
                assert!((g.data(a)[i * 2 + j] - libm::tanh(u)).abs() < 1e-12);
                want += libm::log(density) - libm::log(1.0 - libm::tanh(u).powi(2) + 1e-6);
            }
            assert!((g.data(lp.unwrap())[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn stochastic_mean_matches_the_deterministic_action() {
        let cfg = small();
        let mut store = ParamStore::<f64>::new();
        let mut r = rng::seeded(21);
        let width = 6;
        let actor = Mlp::new(&mut store, "actor", &[width, 16, 16, 4], &mut r);
        // Narrow, state-independent spread so the squashing bias sits well
        // inside the Monte-Carlo error.
        let last = actor.layers.last().unwrap().clone();
        for row in store.value_mut(last.weight).data_mut().chunks_mut(4) {
            row[2] = 0.0;
            row[3] = 0.0;
        }
        store.value_mut(last.bias.unwrap()).data_mut()[2..].fill(-5.0);
        let (nets, _) = AgentNets::build::<f64>(&cfg, &mut rng::seeded(1)).unwrap();
        let nets = AgentNets { actor, ..nets };
        let n = 10_000;
        let one = gradcheck::random_tensor(&mut r, &[1, width], -1.0, 1.0);
        let state = Tensor::new(&[n, width], one.data().iter().copied().cycle().take(n * width).collect());
        let eps = Tensor::new(&[n, 2], (0..2 * n).map(|_| rng::normal(&mut r)).collect());
        let mut g = Graph::new();
        let s1 = g.input(one);
        let (det, _) = nets.policy(&mut g, Bound::frozen(&store), s1, None, (-20.0, 2.0));
        let sn = g.input(state);
        let (draws, _) = nets.policy(&mut g, Bound::frozen(&store), sn, Some(&eps), (-20.0, 2.0));
        for j in 0..2 {
            let xs: Vec<f64> = g.data(draws).iter().skip(j).step_by(2).copied().collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = libm::sqrt(xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64);
            let se = sd / libm::sqrt(n as f64);
            assert!(se > 0.0);
            assert!((mean - g.data(det)[j]).abs() < 3.0 * se, "dim {j}: {mean} vs {} (se {se})", g.data(det)[j]);
        }
    }

    #[test]
    fn observation_state_layout() {
        for (modality, fusion) in [(Modality::VisualTactile, FusionMode::Concat), (Modality::VisualOnly, FusionMode::Attention)] {
            let cfg = AgentConfig { modality, fusion, ..small() };
            let (nets, mut p) = AgentNets::build::<f32>(&cfg, &mut rng::seeded(2)).unwrap();
            // Zero the proprioception head so its features are exactly zero.
            for id in p.fuse.ids().collect::<Vec<_>>() {
                if p.fuse.param(id).name.starts_with("proprio") {
                    p.fuse.value_mut(id).data_mut().fill(0.0);
                }
            }
            let o = obs(&cfg, 2, 1);
            let mut g = Graph::new();
            let bind = ObsBinding { enc_v: Bound::frozen(&p.enc_v), enc_c: Bound::frozen(&p.enc_c), fuse: Bound::frozen(&p.fuse) };
            let s = nets.observe(&mut g, bind, &o);
            let w = nets.state_width();
            assert_eq!(g.shape(s.state), &[2, w]);
            let f = cfg.encoder.feature_width();
            let fused = if modality == Modality::VisualOnly { f } else { 2 * f };
            assert_eq!(w, fused + cfg.proprio_out);
            let x = g.input(o.visual.clone());
            let vis = nets.enc_v.features(&mut g, Bound::frozen(&p.enc_v), x);
            // Concatenation interleaves per token: [v_t, c_t] for each token t.
            let (d, stride) = (cfg.encoder.channels, fused / cfg.encoder.tokens());
            for row in 0..2 {
                let st = &g.data(s.state)[row * w..(row + 1) * w];
                let v = &g.data(vis)[row * f..(row + 1) * f];
                for t in 0..cfg.encoder.tokens() {
                    assert_eq!(&st[t * stride..t * stride + d], &v[t * d..(t + 1) * d]);
                }
                assert!(st[fused..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn observation_graph_gradients_match_finite_differences() {
        let reports = observation_gradchecks(13);
        assert_eq!(reports.len(), 3);
        for r in reports {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_every_group() {
        let cfg = small();
        let mut a = Agent::new(cfg.clone(), 8).unwrap();
        a.update_on(&batch(&cfg, 2)).unwrap();
        let bytes = a.checkpoint().encode();
        let mut b = Agent::new(cfg, 9).unwrap();
        b.load_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        for ((_, x), (_, y)) in a.groups().iter().zip(b.groups()) {
            assert!(x.values_equal(y));
        }
    }
}
