//! Visual-tactile token fusion.

use crate::nn::layers::CrossAttention;
use crate::nn::{Bound, Graph, ParamStore, Scalar, Var};
use crate::rng::SimRng;

use super::VtConError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum FusionMode {
    /// Multi-head cross attention: visual tokens query tactile tokens.
    Attention,
    /// Element-wise sum of the token maps.
    Add,
    /// Feature-axis concatenation of the token maps.
    Concat,
}

impl FusionMode {
    pub fn label(self) -> &'static str {
        match self {
            FusionMode::Attention => "Attention",
            FusionMode::Add => "Addition",
            FusionMode::Concat => "Concatenation",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fusion {
    mode: FusionMode,
    attention: Option<CrossAttention>,
    tokens: usize,
    width: usize,
}

impl Fusion {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        mode: FusionMode,
        tokens: usize,
        width: usize,
        heads: usize,
        rng: &mut SimRng,
    ) -> Result<Self, VtConError> {
        let attention = match mode {
            FusionMode::Attention => Some(CrossAttention::new(store, "fusion.attention", width, heads, rng)?),
            _ => None,
        };
        Ok(Self { mode, attention, tokens, width })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn attention(&self) -> Option<&CrossAttention> {
        self.attention.as_ref()
    }

    pub fn output_width(&self) -> usize {
        match self.mode {
            FusionMode::Concat => 2 * self.tokens * self.width,
            _ => self.tokens * self.width,
        }
    }

    /// Flat fused features `[B, output_width]` from `[B, T, D]` token maps.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, f_v: Var, f_c: Var) -> Var {
        let b = g.shape(f_v)[0];
        let fused = match (&self.attention, self.mode) {
            (Some(a), _) => a.forward(g, p, f_v, f_c),
            (None, FusionMode::Add) => g.add(f_v, f_c),
            _ => g.concat(&[f_v, f_c], 2),
        };
        g.reshape(fused, &[b, self.output_width()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng;
    use alloc::vec;
    use alloc::vec::Vec;

    fn rand(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut r = rng::seeded(seed);
        let n = crate::nn::numel(shape);
        Tensor::new(shape, (0..n).map(|_| rng::normal(&mut r)).collect())
    }

    #[test]
    fn identical_tactile_tokens_give_their_value_projection() {
        let mut store = ParamStore::<f64>::new();
        let f = Fusion::new(&mut store, FusionMode::Attention, 4, 8, 8, &mut rng::seeded(1)).unwrap();
        let a = f.attention().unwrap();
        let token: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let fc = Tensor::new(&[2, 4, 8], token.iter().cycle().take(64).copied().collect());
        let mut g = Graph::new();
        let (v, c) = (g.input(rand(2, &[2, 4, 8])), g.input(fc));
        let out = f.forward(&mut g, Bound::frozen(&store), v, c);
        // token . w_v . w_o, the same for every output token.
        let (wv, wo) = (store.value(a.w_v).data(), store.value(a.w_o).data());
        let vproj: Vec<f64> = (0..8).map(|j| (0..8).map(|i| token[i] * wv[i * 8 + j]).sum()).collect();
        let want: Vec<f64> = (0..8).map(|j| (0..8).map(|i| vproj[i] * wo[i * 8 + j]).sum()).collect();
        for tok in g.data(out).chunks(8) {
            for (x, y) in tok.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_head_matches_dense_reimplementation() {
        let mut store = ParamStore::<f64>::new();
        let f = Fusion::new(&mut store, FusionMode::Attention, 3, 4, 1, &mut rng::seeded(3)).unwrap();
        let a = f.attention().unwrap().clone();
        let (xv, xc) = (rand(4, &[1, 3, 4]), rand(5, &[1, 3, 4]));
        let mut g = Graph::new();
        let (v, c) = (g.input(xv.clone()), g.input(xc.clone()));
        let out = f.forward(&mut g, Bound::frozen(&store), v, c);
        let mm = |x: &[f64], w: &[f64]| -> Vec<f64> {
            (0..3).flat_map(|r| (0..4).map(move |j| (0..4).map(|i| x[r * 4 + i] * w[i * 4 + j]).sum::<f64>())).collect()
        };
        let w = |id| store.value(id).data().to_vec();
        let q = mm(xv.data(), &w(a.w_q));
        let k = mm(xc.data(), &w(a.w_k));
        let vv = mm(xc.data(), &w(a.w_v));
        let mut ctx = vec![0.0; 12];
        for i in 0..3 {
            let s: Vec<f64> = (0..3).map(|j| (0..4).map(|d| q[i * 4 + d] * k[j * 4 + d]).sum::<f64>() / 2.0).collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = s.iter().map(|x| libm::exp(x - m)).sum();
            for j in 0..3 {
                for d in 0..4 {
                    ctx[i * 4 + d] += libm::exp(s[j] - m) / z * vv[j * 4 + d];
                }
            }
        }
        let want = mm(&ctx, &w(a.w_o));
        for (x, y) in g.data(out).iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn add_and_concat_layouts() {
        let mut store = ParamStore::<f64>::new();
        let add = Fusion::new(&mut store, FusionMode::Add, 2, 3, 1, &mut rng::seeded(0)).unwrap();
        let cat = Fusion::new(&mut store, FusionMode::Concat, 2, 3, 1, &mut rng::seeded(0)).unwrap();
        assert!(store.is_empty());
        let (a, b) = (rand(1, &[1, 2, 3]), rand(2, &[1, 2, 3]));
        let mut g = Graph::new();
        let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
        let s = add.forward(&mut g, Bound::frozen(&store), va, vb);
        let c = cat.forward(&mut g, Bound::frozen(&store), va, vb);
        for i in 0..6 {
            assert_eq!(g.data(s)[i], a.data()[i] + b.data()[i]);
        }
        assert_eq!(g.shape(c), &[1, 12]);
        assert_eq!(&g.data(c)[..3], &a.data()[..3]);
        assert_eq!(&g.data(c)[3..6], &b.data()[..3]);
        assert!(matches!(Fusion::new(&mut store, FusionMode::Attention, 2, 6, 4, &mut rng::seeded(0)), Err(VtConError::Heads(_))));
    }
}
