//! Frame-stack conv encoder shared by both modalities.

use alloc::format;
use alloc::vec::Vec;

use crate::nn::layers::{Conv2d, LayerNorm};
use crate::nn::{Bound, Graph, ParamStore, Scalar, Var};
use crate::rng::SimRng;

use super::VtConError;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct EncoderConfig {
    /// Channels of the first (patchifying) convolution.
    pub stem_channels: usize,
    pub stem_kernel: usize,
    /// Token width.
    pub channels: usize,
    /// The feature map is average-pooled to `side x side` tokens.
    pub token_side: usize,
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { stem_channels: 16, stem_kernel: 4, channels: 32, token_side: 4, layer_norm: true }
    }
}

impl EncoderConfig {
    pub fn tokens(&self) -> usize {
        self.token_side * self.token_side
    }

    pub fn feature_width(&self) -> usize {
        self.tokens() * self.channels
    }

    /// Pool window for an input of side `size`, if the geometry tiles.
    pub fn pool_for(&self, size: usize) -> Option<usize> {
        let k = self.stem_kernel.max(1);
        if self.token_side == 0 || size % k != 0 {
            return None;
        }
        let after = size / k;
        if after % 2 != 0 {
            return None;
        }
        let grid = after / 2;
        (grid >= self.token_side && grid % self.token_side == 0).then_some(grid / self.token_side)
    }
}

/// `conv(k, stride k) -> relu -> conv(3, stride 2) -> relu -> avg pool`,
/// returned as `[B, side*side, channels]` tokens.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv2d,
    conv: Conv2d,
    norm: Option<LayerNorm>,
    cfg: EncoderConfig,
    in_channels: usize,
}

impl Encoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        cfg: &EncoderConfig,
        rng: &mut SimRng,
    ) -> Result<Self, VtConError> {
        if in_channels == 0 || cfg.stem_channels == 0 || cfg.channels == 0 || cfg.stem_kernel == 0 || cfg.token_side == 0 {
            return Err(VtConError::Config("encoder widths, kernel and token grid must be positive"));
        }
        let k = cfg.stem_kernel;
        let stem = Conv2d::new(store, &format!("{name}.stem"), in_channels, cfg.stem_channels, k, k, 0, rng);
        let conv = Conv2d::new(store, &format!("{name}.conv"), cfg.stem_channels, cfg.channels, 3, 2, 1, rng);
        let norm = cfg.layer_norm.then(|| LayerNorm::new(store, &format!("{name}.norm"), cfg.channels));
        Ok(Self { stem, conv, norm, cfg: cfg.clone(), in_channels })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Tokens `[B, T, D]` for input `[B, C, H, H]`.
    pub fn tokens<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let pool = self.cfg.pool_for(s[2]).unwrap_or_else(|| panic!("encoder cannot tile input {:?}", s));
        let h = self.stem.forward(g, p, x);
        let h = g.relu(h);
        let h = self.conv.forward(g, p, h);
        let h = g.relu(h);
        let h = if pool > 1 { g.avg_pool(h, pool) } else { h };
        let b = s[0];
        let (d, t) = (self.cfg.channels, self.cfg.tokens());
        let h = g.reshape(h, &[b, d, t]);
        let h = g.permute(h, &[0, 2, 1]);
        match &self.norm {
            Some(n) => n.forward(g, p, h),
            None => h,
        }
    }

    /// Flattened feature vectors `[B, T*D]`.
    pub fn features<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let t = self.tokens(g, p, x);
        let b = g.shape(t)[0];
        g.reshape(t, &[b, self.cfg.feature_width()])
    }
}

/// Unit-norm rows for contrastive similarity.
pub fn contrastive_vectors<T: Scalar>(g: &mut Graph<T>, tokens: Var) -> Var {
    let s = g.shape(tokens).to_vec();
    let flat = g.reshape(tokens, &[s[0], s[1..].iter().product()]);
    g.l2_normalize(flat, T::from_f64(1e-12))
}

/// Nearest-neighbour resize of a single-channel `[rows, rows]` image to
/// `size x size` (an integer multiple), replicated into three channels.
pub fn tactile_to_rgb(values: &[f32], rows: usize, size: usize, out: &mut Vec<f32>) {
    assert!(rows > 0 && size % rows == 0, "tactile {rows} does not tile {size}");
    let f = size / rows;
    let start = out.len();
    for r in 0..size {
        for c in 0..size {
            out.push(values[(r / f) * rows + c / f]);
        }
    }
    let plane = out[start..].to_vec();
    out.extend_from_slice(&plane);
    out.extend_from_slice(&plane);
}
