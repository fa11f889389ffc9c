//! Vision-to-touch generator: predicts the current contact-depth image from a
//! stack of recent RGB frames.
//!
//! Pipeline: strided conv encoder, multi-head attention with the coarse
//! tokens as queries and a learnable embedding as keys and values, a refine
//! conv stack, residual blocks, then a decoder that alternates transposed
//! convolution and nearest upsampling. The last layer is a clamp to `[0, 1]`
//! so exact zeros are reachable.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::metrics::{self, MetricError, SsimParams};
use crate::nn::layers::{normal_init, Conv2d, ConvTranspose2d, CrossAttention, HeadsError, ResidualBlock};
use crate::nn::{adam_step, AdamConfig, Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rng::{self, SimRng};
use crate::tactile::ContactDepthImage;
use crate::world::RgbImage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VtGenError {
    #[error("invalid generator configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Heads(#[from] HeadsError),
    #[error("expected {expected} visual frames, got {found}")]
    StackLength { expected: usize, found: usize },
    #[error("expected {expected}x{expected} frames, got {rows}x{cols}")]
    Resolution { expected: usize, rows: usize, cols: usize },
    #[error("sample holds {found} values, expected {expected}")]
    SampleSize { expected: usize, found: usize },
    #[error("the training split is empty")]
    EmptyDataset,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct VtGenConfig {
    pub frames: usize,
    pub image_size: usize,
    pub tactile_size: usize,
    /// Output widths of the stride-2 coarse convolutions.
    pub coarse_channels: Vec<usize>,
    pub heads: usize,
    /// Number of learnable key/value tokens.
    pub embedding_tokens: usize,
    pub embedding_std: f64,
    pub refine_channels: Vec<usize>,
    pub residual_blocks: usize,
    /// Output width of each decoder stage; only as many as needed are used.
    pub decoder_channels: Vec<usize>,
}

impl Default for VtGenConfig {
    fn default() -> Self {
        Self {
            frames: 3,
            image_size: 64,
            tactile_size: 32,
            coarse_channels: vec![16, 32, 64],
            heads: 8,
            embedding_tokens: 64,
            embedding_std: 0.02,
            refine_channels: vec![64, 32],
            residual_blocks: 4,
            decoder_channels: vec![32, 16, 16, 16],
        }
    }
}

impl VtGenConfig {
    pub fn input_channels(&self) -> usize {
        3 * self.frames
    }

    /// Side of the coarse token grid.
    pub fn grid(&self) -> usize {
        self.image_size >> self.coarse_channels.len()
    }

    pub fn attention_width(&self) -> usize {
        self.coarse_channels.last().copied().unwrap_or(0)
    }

    pub fn decoder_stages(&self) -> usize {
        let g = self.grid().max(1);
        (self.tactile_size / g).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<(), VtGenError> {
        if self.frames == 0 || self.coarse_channels.is_empty() || self.refine_channels.is_empty() {
            return Err(VtGenError::Config("frames, coarse and refine stacks must be non-empty"));
        }
        let g = self.grid();
        if g == 0 || g << self.coarse_channels.len() != self.image_size {
            return Err(VtGenError::Config("image size must be a multiple of 2^(coarse layers)"));
        }
        let ratio = self.tactile_size / g;
        if self.tactile_size % g != 0 || ratio == 0 || !ratio.is_power_of_two() {
            return Err(VtGenError::Config("tactile size must be the token grid times a power of two"));
        }
        if self.decoder_channels.len() < self.decoder_stages() {
            return Err(VtGenError::Config("not enough decoder widths for the upsampling ratio"));
        }
        let w = self.attention_width();
        if self.heads == 0 || w % self.heads != 0 {
            return Err(HeadsError { width: w, heads: self.heads }.into());
        }
        if self.embedding_tokens == 0 || !(self.embedding_std >= 0.0) {
            return Err(VtGenError::Config("embedding needs tokens and a non-negative scale"));
        }
        if self.coarse_channels.iter().chain(&self.refine_channels).chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(VtGenError::Config("zero-width layer"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum DecoderStage {
    Transpose(ConvTranspose2d),
    Upsample(Conv2d),
}

#[derive(Clone, Debug)]
pub struct VtGen {
    cfg: VtGenConfig,
    coarse: Vec<Conv2d>,
    embedding: ParamId,
    attention: CrossAttention,
    refine: Vec<Conv2d>,
    blocks: Vec<ResidualBlock>,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
}

impl VtGen {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &VtGenConfig, rng: &mut SimRng) -> Result<Self, VtGenError> {
        cfg.validate()?;
        let mut c = cfg.input_channels();
        let mut coarse = Vec::new();
        for (i, &w) in cfg.coarse_channels.iter().enumerate() {
            coarse.push(Conv2d::new(store, &format!("gen.coarse{i}"), c, w, 3, 2, 1, rng));
            c = w;
        }
        let width = cfg.attention_width();
        let embedding = store.add("gen.embedding", normal_init(rng, &[cfg.embedding_tokens, width], cfg.embedding_std));
        let attention = CrossAttention::new(store, "gen.attention", width, cfg.heads, rng)?;
        let mut refine = Vec::new();
        for (i, &w) in cfg.refine_channels.iter().enumerate() {
            refine.push(Conv2d::new(store, &format!("gen.refine{i}"), c, w, 3, 1, 1, rng));
            c = w;
        }
        let blocks = (0..cfg.residual_blocks).map(|i| ResidualBlock::new(store, &format!("gen.block{i}"), c, rng)).collect();
        let mut decoder = Vec::new();
        for i in 0..cfg.decoder_stages() {
            let w = cfg.decoder_channels[i];
            let name = format!("gen.decoder{i}");
            decoder.push(if i % 2 == 0 {
                DecoderStage::Transpose(ConvTranspose2d::new(store, &name, c, w, 4, 2, 1, rng))
            } else {
                DecoderStage::Upsample(Conv2d::new(store, &name, c, w, 3, 1, 1, rng))
            });
            c = w;
        }
        let head = Conv2d::new(store, "gen.head", c, 1, 3, 1, 1, rng);
        Ok(Self { cfg: cfg.clone(), coarse, embedding, attention, refine, blocks, decoder, head })
    }

    pub fn config(&self) -> &VtGenConfig {
        &self.cfg
    }

    /// Pre-clamp output `[B, 1, S, S]` for input `[B, 3N, H, W]`.
    pub fn forward_raw<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let mut h = x;
        for conv in &self.coarse {
            h = conv.forward(g, p, h);
            h = g.relu(h);
        }
        let s = g.shape(h).to_vec();
        let (b, d, gh, gw) = (s[0], s[1], s[2], s[3]);
        let tokens = g.reshape(h, &[b, d, gh * gw]);
        let tokens = g.permute(tokens, &[0, 2, 1]);
        let emb = p.get(g, self.embedding);
        let attended = self.attention.forward(g, p, tokens, emb);
        let attended = g.permute(attended, &[0, 2, 1]);
        let mut h = g.reshape(attended, &[b, d, gh, gw]);
        for conv in &self.refine {
            h = conv.forward(g, p, h);
            h = g.relu(h);
        }
        for block in &self.blocks {
            h = block.forward(g, p, h);
        }
        for stage in &self.decoder {
            h = match stage {
                DecoderStage::Transpose(t) => t.forward(g, p, h),
                DecoderStage::Upsample(c) => {
                    let u = g.upsample_nearest(h, 2);
                    c.forward(g, p, u)
                }
            };
            h = g.relu(h);
        }
        self.head.forward(g, p, h)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let raw = self.forward_raw(g, p, x);
        g.clamp(raw, T::ZERO, T::ONE)
    }

    /// Checks a visual stack and flattens it channel-wise, frame by frame.
    pub fn stack_input(&self, frames: &[RgbImage]) -> Result<Vec<f32>, VtGenError> {
        if frames.len() != self.cfg.frames {
            return Err(VtGenError::StackLength { expected: self.cfg.frames, found: frames.len() });
        }
        let n = self.cfg.image_size;
        let mut out = Vec::with_capacity(frames.len() * 3 * n * n);
        for f in frames {
            if f.height != n || f.width != n || f.data.len() != 3 * n * n {
                return Err(VtGenError::Resolution { expected: n, rows: f.height, cols: f.width });
            }
            out.extend_from_slice(&f.data);
        }
        Ok(out)
    }

    /// Generated contact-depth image for one visual stack.
    pub fn generate(&self, store: &ParamStore<f32>, frames: &[RgbImage]) -> Result<ContactDepthImage, VtGenError> {
        let input = self.stack_input(frames)?;
        Ok(self.predict(store, &[&input]).pop().expect("one sample in, one out"))
    }

    /// Batched inference over pre-stacked inputs.
    pub fn predict(&self, store: &ParamStore<f32>, inputs: &[&[f32]]) -> Vec<ContactDepthImage> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let (n, s) = (self.cfg.image_size, self.cfg.tactile_size);
        let c = self.cfg.input_channels();
        let mut data = Vec::with_capacity(inputs.len() * c * n * n);
        for x in inputs {
            assert_eq!(x.len(), c * n * n, "generator input size");
            data.extend_from_slice(x);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[inputs.len(), c, n, n], data));
        let y = self.forward(&mut g, Bound::frozen(store), x);
        g.data(y)
            .chunks(s * s)
            .map(|v| ContactDepthImage { rows: s, cols: s, values: v.to_vec() })
            .collect()
    }
}

/// `n` identical copies of the generated frame.
pub fn repeat_to_sequence(c_gen: &ContactDepthImage, n: usize) -> Vec<ContactDepthImage> {
    vec![c_gen.clone(); n]
}

/// Fixed random conv feature stack standing in for a pretrained backbone.
/// Weights are drawn once from the seed and never exposed mutably.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T: Scalar> {
    store: ParamStore<T>,
    convs: Vec<Conv2d>,
}

pub const PERCEPTUAL_CHANNELS: [usize; 3] = [8, 16, 16];
pub const PERCEPTUAL_STRIDES: [usize; 3] = [1, 2, 2];

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0x7667_67);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut c = 1;
        for (i, (&w, &s)) in PERCEPTUAL_CHANNELS.iter().zip(&PERCEPTUAL_STRIDES).enumerate() {
            let conv = Conv2d::new(&mut store, &format!("phi{i}"), c, w, 3, s, 1, &mut rng);
            let std = libm::sqrt(2.0 / (c * 9) as f64);
            *store.value_mut(conv.weight) = normal_init(&mut rng, &[w, c, 3, 3], std);
            *store.value_mut(conv.bias) = Tensor::zeros(&[w]);
            convs.push(conv);
            c = w;
        }
        Self { store, convs }
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Activations after every layer; all of them are taps.
    pub fn features(&self, g: &mut Graph<T>, x: Var) -> Vec<Var> {
        let p = Bound::frozen(&self.store);
        let mut h = x;
        let mut taps = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = conv.forward(g, p, h);
            h = g.relu(h);
            taps.push(h);
        }
        taps
    }
}

fn mse_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.square(d);
    g.mean(d)
}

/// Sum over taps of the mean squared feature difference, plus
/// `lambda_pix` times the pixel-space mean squared error.
pub fn perceptual_loss<T: Scalar>(g: &mut Graph<T>, ext: &PerceptualExtractor<T>, a: Var, b: Var, lambda_pix: f64) -> Var {
    let fa = ext.features(g, a);
    let fb = ext.features(g, b);
    let mut total = mse_var(g, fa[0], fb[0]);
    for (&x, &y) in fa.iter().zip(&fb).skip(1) {
        let t = mse_var(g, x, y);
        total = g.add(total, t);
    }
    if lambda_pix != 0.0 {
        let pix = mse_var(g, a, b);
        let pix = g.scale(pix, T::from_f64(lambda_pix));
        total = g.add(total, pix);
    }
    total
}

/// Training objective: perceptual features of the clamped output, pixel
/// error of the pre-clamp output. The clamp has zero slope outside `[0, 1]`;
/// measuring pixel error before it keeps every pixel trainable, and since
/// the targets lie in `[0, 1]` this term bounds the clamped pixel error
/// from above.
pub fn generator_loss<T: Scalar>(g: &mut Graph<T>, ext: &PerceptualExtractor<T>, raw: Var, target: Var, lambda_pix: f64) -> Var {
    let out = g.clamp(raw, T::ZERO, T::ONE);
    let feat = perceptual_loss(g, ext, out, target, 0.0);
    if lambda_pix == 0.0 {
        return feat;
    }
    let pix = mse_var(g, raw, target);
    let pix = g.scale(pix, T::from_f64(lambda_pix));
    g.add(feat, pix)
}

/// One paired training record: stacked frames `[3N, H, W]` and the
/// ground-truth contact depth `[S, S]`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSample {
    pub visual: Vec<f32>,
    pub tactile: Vec<f32>,
}

/// Indexed paired records. Implementors may materialize the visual stack
/// lazily, which keeps large collections compact.
pub trait PairSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends the stacked frames of record `i` to `out`.
    fn visual_into(&self, i: usize, out: &mut Vec<f32>);

    fn tactile(&self, i: usize) -> &[f32];
}

impl PairSource for [GenSample] {
    fn len(&self) -> usize {
        <[GenSample]>::len(self)
    }

    fn visual_into(&self, i: usize, out: &mut Vec<f32>) {
        out.extend_from_slice(&self[i].visual);
    }

    fn tactile(&self, i: usize) -> &[f32] {
        &self[i].tactile
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct GenTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambda_pix: f64,
    pub extractor_seed: u64,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 64, adam: AdamConfig::default(), lambda_pix: 1.0, extractor_seed: 0x9e37 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quality {
    pub samples: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Samples whose ground truth is all zero.
    pub no_contact_samples: usize,
    /// Mean generated value over those samples.
    pub no_contact_mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Quality,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenReport {
    pub epochs: Vec<GenEpoch>,
    pub test: Quality,
}

pub struct GenTrainer {
    pub net: VtGen,
    pub store: ParamStore<f32>,
    extractor: PerceptualExtractor<f32>,
    cfg: GenTrainConfig,
}

impl GenTrainer {
    pub fn new(arch: &VtGenConfig, cfg: &GenTrainConfig, seed: u64) -> Result<Self, VtGenError> {
        if cfg.batch_size == 0 || !cfg.adam.is_valid() || !(cfg.lambda_pix >= 0.0) {
            return Err(VtGenError::Config("batch size, optimizer or pixel weight out of range"));
        }
        let mut store = ParamStore::new();
        let net = VtGen::new(&mut store, arch, &mut rng::stream(seed, 0x67e4))?;
        Ok(Self { net, store, extractor: PerceptualExtractor::new(cfg.extractor_seed), cfg: cfg.clone() })
    }

    pub fn extractor(&self) -> &PerceptualExtractor<f32> {
        &self.extractor
    }

    /// Loss on a batch without updating anything.
    pub fn batch_loss<S: PairSource + ?Sized>(&self, data: &S, batch: &[usize]) -> Result<f64, VtGenError> {
        let (x, y) = gather(&self.net, data, batch)?;
        let mut g = Graph::new();
        let l = self.record_loss(&mut g, x, y, false);
        Ok(g.data(l)[0] as f64)
    }

    fn record_loss(&self, g: &mut Graph<f32>, x: Tensor<f32>, y: Tensor<f32>, train: bool) -> Var {
        let x = g.input(x);
        let y = g.input(y);
        let p = if train { Bound::train(&self.store) } else { Bound::frozen(&self.store) };
        let raw = self.net.forward_raw(g, p, x);
        generator_loss(g, &self.extractor, raw, y, self.cfg.lambda_pix)
    }

    /// One Adam step on records `batch` of `data`; returns the loss before
    /// the step.
    pub fn step<S: PairSource + ?Sized>(&mut self, data: &S, batch: &[usize]) -> Result<f64, VtGenError> {
        let (x, y) = gather(&self.net, data, batch)?;
        let mut g = Graph::new();
        let l = self.record_loss(&mut g, x, y, true);
        let loss = g.data(l)[0] as f64;
        let grads = g.backward(l).expect("fresh graph with scalar loss");
        self.store.zero_grad();
        self.store.accumulate(&grads);
        adam_step(&mut self.store, &self.cfg.adam);
        Ok(loss)
    }

    /// One pass over `train` in a seeded order; returns the mean batch loss.
    pub fn epoch<S: PairSource + ?Sized>(&mut self, train: &S, order_seed: u64) -> Result<f64, VtGenError> {
        if train.is_empty() {
            return Err(VtGenError::EmptyDataset);
        }
        let order = rng::permutation(&mut rng::stream(order_seed, 0xe90c), train.len());
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            total += self.step(train, chunk)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    pub fn evaluate<S: PairSource + ?Sized>(&self, samples: &S) -> Result<Quality, VtGenError> {
        evaluate_generator(&self.net, &self.store, samples, self.cfg.batch_size)
    }
}

/// Batch tensors `[B, 3N, H, W]` and `[B, 1, S, S]` for the given records.
fn gather<S: PairSource + ?Sized>(net: &VtGen, data: &S, batch: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), VtGenError> {
    let a = net.config();
    let (n, s, c) = (a.image_size, a.tactile_size, a.input_channels());
    let mut vis = Vec::with_capacity(batch.len() * c * n * n);
    let mut tac = Vec::with_capacity(batch.len() * s * s);
    for &i in batch {
        let before = vis.len();
        data.visual_into(i, &mut vis);
        if vis.len() - before != c * n * n {
            return Err(VtGenError::SampleSize { expected: c * n * n, found: vis.len() - before });
        }
        let t = data.tactile(i);
        if t.len() != s * s {
            return Err(VtGenError::SampleSize { expected: s * s, found: t.len() });
        }
        tac.extend_from_slice(t);
    }
    Ok((Tensor::new(&[batch.len(), c, n, n], vis), Tensor::new(&[batch.len(), 1, s, s], tac)))
}

/// Mean PSNR and SSIM of generated against ground-truth frames, plus the
/// mean output on samples without contact.
pub fn evaluate_generator<S: PairSource + ?Sized>(
    net: &VtGen,
    store: &ParamStore<f32>,
    samples: &S,
    batch: usize,
) -> Result<Quality, VtGenError> {
    let s = net.config().tactile_size;
    let params = SsimParams::default();
    let mut q = Quality { samples: samples.len(), ..Quality::default() };
    let mut nc_sum = 0.0;
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = gather(net, samples, chunk)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = net.forward(&mut g, Bound::frozen(store), xv);
        for (out, &i) in g.data(y).chunks(s * s).zip(chunk) {
            let truth = samples.tactile(i);
            q.psnr += metrics::psnr(out, truth, 1.0)?;
            q.ssim += metrics::ssim(out, truth, s, s, &params)?;
            if truth.iter().all(|&v| v == 0.0) {
                q.no_contact_samples += 1;
                nc_sum += out.iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64;
            }
        }
    }
    if !samples.is_empty() {
        q.psnr /= samples.len() as f64;
        q.ssim /= samples.len() as f64;
    }
    if q.no_contact_samples > 0 {
        q.no_contact_mean = Some(nc_sum / q.no_contact_samples as f64);
    }
    Ok(q)
}

/// Full training run: `cfg.epochs` passes over `train`, validation metrics
/// after each, test metrics at the end.
pub fn train_generator<A, B, C>(
    arch: &VtGenConfig,
    cfg: &GenTrainConfig,
    seed: u64,
    train: &A,
    val: &B,
    test: &C,
    mut on_epoch: impl FnMut(&GenEpoch),
) -> Result<(GenTrainer, GenReport), VtGenError>
where
    A: PairSource + ?Sized,
    B: PairSource + ?Sized,
    C: PairSource + ?Sized,
{
    if train.is_empty() {
        return Err(VtGenError::EmptyDataset);
    }
    let mut trainer = GenTrainer::new(arch, cfg, seed)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let train_loss = trainer.epoch(train, seed.wrapping_add(e as u64))?;
        let rec = GenEpoch { epoch: e, train_loss, val: trainer.evaluate(val)? };
        on_epoch(&rec);
        epochs.push(rec);
    }
    let test = trainer.evaluate(test)?;
    Ok((trainer, GenReport { epochs, test }))
}

/// Finite-difference check of the whole generator and its training loss on
/// a miniature configuration, in `f64`.
pub fn composed_gradcheck(seed: u64) -> crate::nn::gradcheck::GradCheck {
    use crate::nn::gradcheck::{check, random_tensor};
    let arch = VtGenConfig {
        frames: 1,
        image_size: 8,
        tactile_size: 8,
        coarse_channels: vec![4, 8],
        heads: 2,
        embedding_tokens: 3,
        embedding_std: 0.5,
        refine_channels: vec![4],
        residual_blocks: 1,
        decoder_channels: vec![4, 3],
    };
    let mut r = rng::stream(seed, 0x6763);
    let x = random_tensor(&mut r, &[2, 3, 8, 8], 0.0, 1.0);
    let y = random_tensor(&mut r, &[2, 1, 8, 8], 0.0, 1.0);
    let mut store = ParamStore::<f64>::new();
    let net = VtGen::new(&mut store, &arch, &mut r).expect("valid miniature generator");
    let ext = PerceptualExtractor::<f64>::new(2);
    check("vt_gen", &mut store, 24, seed, |g, s| {
        let xi = g.input(x.clone());
        let yi = g.input(y.clone());
        let raw = net.forward_raw(g, Bound::train(s), xi);
        generator_loss(g, &ext, raw, yi, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input<T: Scalar>(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let mut r = rng::seeded(seed);
        let n = crate::nn::numel(shape);
        Tensor::new(shape, (0..n).map(|_| T::from_f64(rng::uniform(&mut r, lo, hi))).collect())
    }

    #[test]
    fn default_shapes() {
        let cfg = VtGenConfig::default();
        assert_eq!(cfg.grid(), 8);
        assert_eq!(cfg.decoder_stages(), 2);
        let mut store = ParamStore::<f32>::new();
        let net = VtGen::new(&mut store, &cfg, &mut rng::seeded(0)).unwrap();
        let frames = vec![RgbImage { height: 64, width: 64, data: vec![0.3; 3 * 64 * 64] }; 3];
        let out = net.generate(&store, &frames).unwrap();
        assert_eq!((out.rows, out.cols), (32, 32));
        let big = VtGenConfig { image_size: 128, ..VtGenConfig::default() };
        assert_eq!(big.decoder_stages(), 1);
        big.validate().unwrap();
    }

    #[test]
    fn rejects_bad_stacks_and_configs() {
        let cfg = VtGenConfig::default();
        let mut store = ParamStore::<f32>::new();
        let net = VtGen::new(&mut store, &cfg, &mut rng::seeded(0)).unwrap();
        let frame = RgbImage { height: 64, width: 64, data: vec![0.0; 3 * 64 * 64] };
        assert_eq!(net.generate(&store, &[frame.clone()]).unwrap_err(), VtGenError::StackLength { expected: 3, found: 1 });
        let small = RgbImage { height: 32, width: 32, data: vec![0.0; 3 * 32 * 32] };
        assert!(matches!(net.generate(&store, &[frame.clone(), frame, small]), Err(VtGenError::Resolution { .. })));
        assert!(matches!(VtGenConfig { heads: 7, ..cfg.clone() }.validate(), Err(VtGenError::Heads(_))));
        assert!(VtGenConfig { image_size: 60, ..cfg.clone() }.validate().is_err());
        assert!(VtGenConfig { tactile_size: 24, ..cfg }.validate().is_err());
    }

    #[test]
    fn outputs_stay_in_unit_range_and_are_deterministic() {
        let cfg = VtGenConfig::default();
        for seed in 0..3 {
            let mut store = ParamStore::<f32>::new();
            let net = VtGen::new(&mut store, &cfg, &mut rng::seeded(seed)).unwrap();
            // Scale inputs well outside the image range to push the head around.
            for scale in [1.0, 50.0, -50.0] {
                let x: Vec<f32> = random_input::<f32>(seed + 10, &[9 * 64 * 64], 0.0, 1.0).data().iter().map(|v| v * scale).collect();
                let a = net.predict(&store, &[&x]);
                let b = net.predict(&store, &[&x]);
                assert_eq!(a, b);
                assert!(a[0].values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn repeat_gives_identical_frames() {
        let c = ContactDepthImage { rows: 2, cols: 2, values: vec![0.1, 0.2, 0.3, 0.4] };
        let seq = repeat_to_sequence(&c, 3);
        assert_eq!(seq.len(), 3);
        assert!(seq.iter().all(|f| f == &c));
        assert_eq!(seq[0].values, c.values);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let cfg = VtGenConfig::default();
        let mut store = ParamStore::<f32>::new();
        let net = VtGen::new(&mut store, &cfg, &mut rng::seeded(5)).unwrap();
        let ext = PerceptualExtractor::<f32>::new(1);
        let mut g = Graph::new();
        let x = g.input(random_input(1, &[4, 9, 64, 64], 0.0, 1.0));
        let y = g.input(random_input(2, &[4, 1, 32, 32], 0.0, 1.0));
        let raw = net.forward_raw(&mut g, Bound::train(&store), x);
        let l = generator_loss(&mut g, &ext, raw, y, 1.0);
        let grads = g.backward(l).unwrap();
        store.accumulate(&grads);
        for p in store.params() {
            assert!(p.grad.iter().any(|&v| v != 0.0), "{} has no gradient", p.name);
        }
        assert!(ext.store().grads_all_zero());
    }

    #[test]
    fn composed_generator_matches_finite_differences() {
        let r = composed_gradcheck(7);
        assert!(r.passed(), "max rel err {:.3e} over {} coords ({} kinks)", r.max_rel_error, r.checked, r.kinks);
    }

    // Naive 3x3 convolution with zero padding, straight from the definition.
    fn conv_ref(x: &[f64], c_in: usize, h: usize, w: usize, wt: &[f32], b: &[f32], c_out: usize, stride: usize) -> (Vec<f64>, usize, usize) {
        let ho = (h + 2 - 3) / stride + 1;
        let wo = (w + 2 - 3) / stride + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        for o in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o] as f64;
                    for i in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * c_in + i) * 3 + ky) * 3 + kx] as f64 * x[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc.max(0.0);
                }
            }
        }
        (out, ho, wo)
    }

    #[test]
    fn perceptual_loss_matches_direct_recomputation() {
        let ext = PerceptualExtractor::<f32>::new(42);
        let a = random_input::<f32>(5, &[1, 1, 16, 16], 0.0, 1.0);
        let b = random_input::<f32>(6, &[1, 1, 16, 16], 0.0, 1.0);
        let mut g = Graph::new();
        let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
        let l = perceptual_loss(&mut g, &ext, va, vb, 1.0);
        let got = g.data(l)[0] as f64;

        let taps = |img: &Tensor<f32>| {
            let mut x: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
            let (mut c, mut h, mut w) = (1, 16, 16);
            let mut out = Vec::new();
            for (i, (&co, &s)) in PERCEPTUAL_CHANNELS.iter().zip(&PERCEPTUAL_STRIDES).enumerate() {
                let st = ext.store();
                let wt = st.value(st.find(&format!("phi{i}.weight")).unwrap()).data();
                let bs = st.value(st.find(&format!("phi{i}.bias")).unwrap()).data();
                let (y, ho, wo) = conv_ref(&x, c, h, w, wt, bs, co, s);
                out.push(y.clone());
                x = y;
                c = co;
                h = ho;
                w = wo;
            }
            out
        };
        let (ta, tb) = (taps(&a), taps(&b));
        let mut want = 0.0;
        for (x, y) in ta.iter().zip(&tb) {
            want += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
        }
        want += a.data().iter().zip(b.data()).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / 256.0;
        assert!((got - want).abs() <= 1e-5 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn perceptual_loss_is_zero_on_equal_and_symmetric() {
        let ext = PerceptualExtractor::<f64>::new(3);
        let a = random_input::<f64>(7, &[2, 1, 32, 32], 0.0, 1.0);
        let b = random_input::<f64>(8, &[2, 1, 32, 32], 0.0, 1.0);
        let eval = |p: &Tensor<f64>, q: &Tensor<f64>| {
            let mut g = Graph::new();
            let (x, y) = (g.input(p.clone()), g.input(q.clone()));
            let l = perceptual_loss(&mut g, &ext, x, y, 1.0);
            g.data(l)[0]
        };
        assert_eq!(eval(&a, &a), 0.0);
        assert!(eval(&a, &b) > 0.0);
        assert_eq!(eval(&a, &b), eval(&b, &a));
        let again = PerceptualExtractor::<f64>::new(3);
        assert!(again.store().values_equal(ext.store()));
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<GenSample> {
        // Target is a blurred copy of the first channel at half resolution.
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let visual: Vec<f32> = (0..9 * 64 * 64).map(|_| rng::uniform(&mut r, 0.0, 1.0) as f32).collect();
                let tactile = (0..32 * 32)
                    .map(|i| {
                        let (y, x) = (i / 32, i % 32);
                        let at = |dy: usize, dx: usize| visual[(2 * y + dy) * 64 + 2 * x + dx];
                        (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0
                    })
                    .collect();
                GenSample { visual, tactile }
            })
            .collect()
    }

    #[test]
    fn fixed_batch_loss_drops_over_ten_steps() {
        let data = toy_samples(16, 1);
        let batch: Vec<usize> = (0..16).collect();
        let mut t = GenTrainer::new(&VtGenConfig::default(), &GenTrainConfig::default(), 3).unwrap();
        let first = t.batch_loss(data.as_slice(), &batch).unwrap();
        for _ in 0..10 {
            t.step(data.as_slice(), &batch).unwrap();
        }
        let last = t.batch_loss(data.as_slice(), &batch).unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn training_is_reproducible_and_rejects_empty_data() {
        let data = toy_samples(6, 2);
        let cfg = GenTrainConfig { epochs: 1, batch_size: 4, ..GenTrainConfig::default() };
        let run = || train_generator(&VtGenConfig::default(), &cfg, 11, data.as_slice(), &data[..2], &data[..2], |_| {}).unwrap();
        let (a, ra) = run();
        let (b, rb) = run();
        assert!(a.store.values_equal(&b.store));
        assert_eq!(ra, rb);
        assert_eq!(
            train_generator(&VtGenConfig::default(), &cfg, 1, &[][..], &[][..], &[][..], |_| {}).err(),
            Some(VtGenError::EmptyDataset)
        );
    }
}
