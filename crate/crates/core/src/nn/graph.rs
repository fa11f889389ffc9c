//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! op is added, and the op is remembered together with whatever it needs for
//! its adjoint. [`Graph::backward`] walks the tape once in reverse and returns
//! [`Gradients`] keyed by the parameter stores whose values were bound into
//! the graph with [`Graph::param`]. Values bound with [`Graph::frozen`] or
//! [`Graph::input`] are constants: nothing flows back into them.

use alloc::vec;
use alloc::vec::Vec;

use super::conv::{col2im, conv_transpose_out, im2col, ConvGeom};
use super::param::GradEntry;
use super::tensor::{numel, strides};
use super::{gemm, Gradients, Layout, NnError, ParamId, ParamStore, Scalar, StoreId, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param { store: StoreId, param: ParamId },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Min { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Clamp { x: Var, lo: T, hi: T },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    MatMul { a: Var, b: Var, ta: bool, tb: bool, batch: usize, shared_b: bool, m: usize, k: usize, n: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Upsample { x: Var, factor: usize },
    AvgPool { x: Var, k: usize },
    Sum { x: Var },
    Mean { x: Var },
    SumLast { x: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    L2Normalize { x: Var, norms: Vec<T> },
    LogSumExpRows { x: Var, exclude_diagonal: bool },
    BroadcastBatch { x: Var, n: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn usage(msg: alloc::string::String) -> ! {
    panic!("{}", msg)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Trainable leaf bound to `store[id]`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param { store: store.id(), param: id }, true)
    }

    /// Parameter value used as a constant (stop-gradient).
    pub fn frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.input(store.value(id).clone())
    }

    /// Constant copy of an already recorded value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = &self.nodes[x.0].value;
        let out = Tensor::new(src.shape(), src.data().iter().map(|&v| f(v)).collect());
        let ng = self.ng(&[x]);
        self.push(out, op, ng)
    }

    fn check_broadcast(&self, a: Var, b: Var, what: &str) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let ok = sa == sb || numel(sb) == 1 || (sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb);
        if !ok {
            usage(alloc::format!("{what}: shape mismatch {:?} vs {:?}", sa, sb));
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, what: &str) -> Var {
        self.check_broadcast(a, b, what);
        let va = self.nodes[a.0].value.data();
        let vb = self.nodes[b.0].value.data();
        let nb = vb.len();
        let data = va.iter().enumerate().map(|(i, &x)| f(x, vb[i % nb])).collect();
        let out = Tensor::new(self.shape(a), data);
        let ng = self.ng(&[a, b]);
        self.push(out, op, ng)
    }

    /// Elementwise `a + b`; `b` may be a scalar or a trailing-shape suffix of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    /// Elementwise minimum of equally shaped values.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        if self.shape(a) != self.shape(b) {
            usage(alloc::format!("min: shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        self.binary(a, b, |x, y| if y < x { y } else { x }, Op::Min { a, b }, "min")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::ONE)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::ZERO { v } else { T::ZERO }, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log { x })
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let src = &self.nodes[x.0].value;
        if numel(shape) != src.numel() {
            usage(alloc::format!("reshape: cannot view {:?} as {:?}", src.shape(), shape));
        }
        let out = src.clone().reshape(shape);
        let ng = self.ng(&[x]);
        self.push(out, Op::Reshape { x }, ng)
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let lead = s[0];
        let rest = numel(&s[1..]);
        self.reshape(x, &[lead, rest])
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let src = &self.nodes[x.0].value;
        let shape = src.shape();
        if axes.len() != shape.len() || {
            let mut seen = vec![false; axes.len()];
            axes.iter().any(|&a| a >= seen.len() || core::mem::replace(&mut seen[a], true))
        } {
            usage(alloc::format!("permute: invalid axes {:?} for shape {:?}", axes, shape));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let data = permute_data(src.data(), shape, axes);
        let out = Tensor::new(&out_shape, data);
        let ng = self.ng(&[x]);
        self.push(out, Op::Permute { x, axes: axes.to_vec() }, ng)
    }

    /// Matrix product over the last two axes.
    ///
    /// `a` is `[.., m, k]` (`[.., k, m]` when `ta`); `b` is `[.., k, n]`
    /// (`[.., n, k]` when `tb`) with the same leading axes, or rank 2 and
    /// shared across every leading index of `a`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            usage(alloc::format!("matmul: operands must be at least 2-D, got {:?} and {:?}", sa, sb));
        }
        let (m, ka) = if ta { (sa[sa.len() - 1], sa[sa.len() - 2]) } else { (sa[sa.len() - 2], sa[sa.len() - 1]) };
        let (kb, n) = if tb { (sb[sb.len() - 1], sb[sb.len() - 2]) } else { (sb[sb.len() - 2], sb[sb.len() - 1]) };
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_b = lead_b.is_empty() && !lead_a.is_empty();
        if ka != kb || (!shared_b && lead_a != lead_b) {
            usage(alloc::format!("matmul: shape mismatch {:?} (ta={ta}) vs {:?} (tb={tb})", sa, sb));
        }
        let batch = numel(lead_a);
        let k = ka;
        let mut out_shape = lead_a.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![T::ZERO; batch * m * n];
        let va = self.nodes[a.0].value.data();
        let vb = self.nodes[b.0].value.data();
        let la = if ta { Layout::Transposed } else { Layout::Normal };
        let lb = if tb { Layout::Transposed } else { Layout::Normal };
        if shared_b && !ta {
            // Fold every leading index of `a` into the row count.
            gemm(batch * m, k, n, va, Layout::Normal, vb, lb, T::ZERO, &mut out);
        } else {
            for i in 0..batch {
                let bslice = if shared_b { vb } else { &vb[i * k * n..(i + 1) * k * n] };
                gemm(m, k, n, &va[i * m * k..(i + 1) * m * k], la, bslice, lb, T::ZERO, &mut out[i * m * n..(i + 1) * m * n]);
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(&out_shape, out), Op::MatMul { a, b, ta, tb, batch, shared_b, m, k, n }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add(y, b),
            None => y,
        }
    }

    /// 2-D convolution. `x`: `[N, C, H, W]`, `w`: `[O, C, kh, kw]`, `b`: `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            usage(alloc::format!("conv2d: input {:?} incompatible with kernel {:?} (stride {stride})", sx, sw));
        }
        if sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            usage(alloc::format!("conv2d: kernel {:?} larger than padded input {:?}", sw, sx));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                usage(alloc::format!("conv2d: bias {:?} does not match {} output channels", self.shape(b), sw[0]));
            }
        }
        let (n, o) = (sx[0], sw[0]);
        let g = ConvGeom { channels: sx[1], height: sx[2], width: sx[3], kh: sw[2], kw: sw[3], stride, pad };
        let (ho, wo) = g.out_hw();
        let hw = ho * wo;
        let mut out = vec![T::ZERO; n * o * hw];
        let mut cols = vec![T::ZERO; g.col_rows() * hw];
        let vx = self.nodes[x.0].value.data();
        let vw = self.nodes[w.0].value.data();
        let img = g.channels * g.height * g.width;
        for i in 0..n {
            im2col(&vx[i * img..(i + 1) * img], &g, &mut cols);
            gemm(o, g.col_rows(), hw, vw, Layout::Normal, &cols, Layout::Normal, T::ZERO, &mut out[i * o * hw..(i + 1) * o * hw]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.nodes[b.0].value.data(), n, o, hw);
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(Tensor::new(&[n, o, ho, wo], out), Op::Conv2d { x, w, b, stride, pad }, ng)
    }

    /// Transposed convolution (adjoint of [`conv2d`](Self::conv2d) in its
    /// input). `x`: `[N, C, H, W]`, `w`: `[C, O, kh, kw]`, `b`: `[O]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || stride == 0 {
            usage(alloc::format!("conv_transpose2d: input {:?} incompatible with kernel {:?}", sx, sw));
        }
        if (sx[2] - 1) * stride + sw[2] < 2 * pad + 1 || (sx[3] - 1) * stride + sw[3] < 2 * pad + 1 {
            usage(alloc::format!("conv_transpose2d: padding {pad} too large for {:?}", sx));
        }
        let (n, c, o) = (sx[0], sx[1], sw[1]);
        let ho = conv_transpose_out(sx[2], sw[2], stride, pad);
        let wo = conv_transpose_out(sx[3], sw[3], stride, pad);
        // Geometry of the equivalent forward convolution from the output grid.
        let g = ConvGeom { channels: o, height: ho, width: wo, kh: sw[2], kw: sw[3], stride, pad };
        debug_assert_eq!(g.out_hw(), (sx[2], sx[3]));
        let hw_in = sx[2] * sx[3];
        let mut out = vec![T::ZERO; n * o * ho * wo];
        let mut cols = vec![T::ZERO; g.col_rows() * hw_in];
        let vx = self.nodes[x.0].value.data();
        let vw = self.nodes[w.0].value.data();
        for i in 0..n {
            // cols = W^T x, with W viewed as [C, O*kh*kw]
            gemm(g.col_rows(), c, hw_in, vw, Layout::Transposed, &vx[i * c * hw_in..(i + 1) * c * hw_in], Layout::Normal, T::ZERO, &mut cols);
            col2im(&cols, &g, &mut out[i * o * ho * wo..(i + 1) * o * ho * wo]);
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                usage(alloc::format!("conv_transpose2d: bias {:?} does not match {o} output channels", self.shape(b)));
            }
            add_channel_bias(&mut out, self.nodes[b.0].value.data(), n, o, ho * wo);
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(Tensor::new(&[n, o, ho, wo], out), Op::ConvTranspose2d { x, w, b, stride, pad }, ng)
    }

    /// Nearest-neighbour upsampling of `[N, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            usage(alloc::format!("upsample_nearest: expected [N,C,H,W] and factor > 0, got {:?} x{factor}", s));
        }
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = (h * factor, w * factor);
        let src = self.nodes[x.0].value.data();
        let planes = s[0] * s[1];
        let mut out = vec![T::ZERO; planes * ho * wo];
        for p in 0..planes {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[p * ho * wo + oy * wo + ox] = src[p * h * w + (oy / factor) * w + ox / factor];
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&[s[0], s[1], ho, wo], out), Op::Upsample { x, factor }, ng)
    }

    /// Non-overlapping `k x k` average pooling of `[N, C, H, W]`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
            usage(alloc::format!("avg_pool: window {k} does not tile {:?}", s));
        }
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = (h / k, w / k);
        let src = self.nodes[x.0].value.data();
        let planes = s[0] * s[1];
        let inv = T::ONE / T::from_f64((k * k) as f64);
        let mut out = vec![T::ZERO; planes * ho * wo];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[p * ho * wo + (y / k) * wo + xx / k] += src[p * h * w + y * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&[s[0], s[1], ho, wo], out), Op::AvgPool { x, k }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.data(x).iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(total), Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_f64(self.data(x).len() as f64);
        let total: T = self.data(x).iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(total / n), Op::Mean { x }, ng)
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or_else(|| usage(alloc::format!("sum_last: scalar input")));
        let out: Vec<T> = self.data(x).chunks(d).map(|c| c.iter().copied().sum()).collect();
        let mut shape = s[..s.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&shape, out), Op::SumLast { x }, ng)
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            usage(alloc::format!("softmax: axis {axis} out of range for {:?}", s));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let mut out = vec![T::ZERO; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = src[idx(0)];
                for j in 1..len {
                    mx = mx.max(src[idx(j)]);
                }
                let mut z = T::ZERO;
                for j in 0..len {
                    let e = (src[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&s, out), Op::Softmax { x, axis }, ng)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or_else(|| usage(alloc::format!("layer_norm: scalar input")));
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            usage(alloc::format!(
                "layer_norm: affine shapes {:?}/{:?} do not match width {d}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let src = self.data(x);
        let gm = self.data(gamma);
        let bt = self.data(beta);
        let rows = src.len() / d;
        let dn = T::from_f64(d as f64);
        let mut xhat = vec![T::ZERO; src.len()];
        let mut rstd = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let rs = T::ONE / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mu) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gm[j] + bt[j];
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        self.push(Tensor::new(&s, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng)
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of zero values");
        let s0 = self.shape(xs[0]).to_vec();
        if axis >= s0.len() {
            usage(alloc::format!("concat: axis {axis} out of range for {:?}", s0));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != s0.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != s0[i]) {
                usage(alloc::format!("concat: shape mismatch {:?} vs {:?} along axis {axis}", s0, s));
            }
            total += s[axis];
        }
        let outer = numel(&s0[..axis]);
        let inner = numel(&s0[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0.clone();
        shape[axis] = total;
        let ng = self.ng(xs);
        self.push(Tensor::new(&shape, out), Op::Concat { xs: xs.to_vec(), axis }, ng)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            usage(alloc::format!("slice: [{start}, {}) out of range on axis {axis} of {:?}", start + len, s));
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&shape, out), Op::Slice { x, axis, start }, ng)
    }

    /// Scales every row (last axis) to unit Euclidean norm:
    /// `y = x / sqrt(|x|^2 + eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or_else(|| usage(alloc::format!("l2_normalize: scalar input")));
        let src = self.data(x);
        let mut norms = Vec::with_capacity(src.len() / d);
        let mut out = vec![T::ZERO; src.len()];
        for (r, row) in src.chunks(d).enumerate() {
            let nrm = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            norms.push(nrm);
            for j in 0..d {
                out[r * d + j] = row[j] / nrm;
            }
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&s, out), Op::L2Normalize { x, norms }, ng)
    }

    /// Row-wise `log(sum_j exp(x[i, j]))` of a `[R, C]` matrix, optionally
    /// leaving out the diagonal entry `j == i`.
    pub fn logsumexp_rows(&mut self, x: Var, exclude_diagonal: bool) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || (exclude_diagonal && s[1] < 2) {
            usage(alloc::format!("logsumexp_rows: need [R, C] with C >= 2 when excluding the diagonal, got {:?}", s));
        }
        let c = s[1];
        let src = self.data(x);
        let mut out = Vec::with_capacity(s[0]);
        for (i, row) in src.chunks(c).enumerate() {
            let keep = |j: usize| !(exclude_diagonal && j == i);
            let mx = row.iter().enumerate().filter(|(j, _)| keep(*j)).map(|(_, &v)| v).fold(None, |m: Option<T>, v| {
                Some(match m {
                    None => v,
                    Some(m) => m.max(v),
                })
            });
            let mx = mx.unwrap_or(T::ZERO);
            let z: T = row.iter().enumerate().filter(|(j, _)| keep(*j)).map(|(_, &v)| (v - mx).exp()).sum();
            out.push(mx + z.ln());
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&[s[0]], out), Op::LogSumExpRows { x, exclude_diagonal }, ng)
    }

    /// Repeats `x` along a new leading axis of length `n`.
    pub fn broadcast_batch(&mut self, x: Var, n: usize) -> Var {
        let s = self.shape(x).to_vec();
        let src = self.data(x);
        let mut out = Vec::with_capacity(n * src.len());
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&s);
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&shape, out), Op::BroadcastBatch { x, n }, ng)
    }

    /// Reverse pass from a single-element `loss`.
    ///
    /// A graph can be differentiated once; record a fresh forward pass
    /// before calling this again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, NnError> {
        if self.backward_done {
            return Err(NnError::BackwardTwice);
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NnError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::ONE]);
        let mut entries = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, g, &mut grads, &mut entries);
        }
        Ok(Gradients { entries })
    }

    fn propagate(&self, idx: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>], entries: &mut Vec<GradEntry<T>>) {
        let node = &self.nodes[idx];
        let val = node.value.data();
        // Accumulates `delta` into the gradient buffer of `v` if it wants one.
        let mut acc = |v: Var, delta: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::ZERO; self.nodes[v.0].value.numel()]);
            delta(slot);
        };
        match &node.op {
            Op::Input => {}
            Op::Param { store, param } => entries.push(GradEntry { store: *store, param: *param, grad: g }),
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -T::ONE } else { T::ONE };
                acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, d)| *s += *d));
                acc(*b, &mut |s| {
                    let nb = s.len();
                    for (i, d) in g.iter().enumerate() {
                        s[i % nb] += sign * *d;
                    }
                });
            }
            Op::Mul { a, b } => {
                let va = self.data(*a);
                let vb = self.data(*b);
                let nb = vb.len();
                acc(*a, &mut |s| {
                    for (i, d) in g.iter().enumerate() {
                        s[i] += *d * vb[i % nb];
                    }
                });
                acc(*b, &mut |s| {
                    for (i, d) in g.iter().enumerate() {
                        s[i % nb] += *d * va[i];
                    }
                });
            }
            Op::Min { a, b } => {
                let va = self.data(*a);
                let vb = self.data(*b);
                acc(*a, &mut |s| {
                    for i in 0..g.len() {
                        if !(vb[i] < va[i]) {
                            s[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..g.len() {
                        if vb[i] < va[i] {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale { x, c } => acc(*x, &mut |s| s.iter_mut().zip(&g).for_each(|(s, d)| *s += *d * *c)),
            Op::AddScalar { x } | Op::Reshape { x } => acc(*x, &mut |s| s.iter_mut().zip(&g).for_each(|(s, d)| *s += *d)),
            Op::Relu { x } => {
                let vx = self.data(*x);
                acc(*x, &mut |s| {
                    for i in 0..g.len() {
                        if vx[i] > T::ZERO {
                            s[i] += g[i];
                        }
                    }
                })
            }
            Op::Tanh { x } => acc(*x, &mut |s| {
                for i in 0..g.len() {
                    s[i] += g[i] * (T::ONE - val[i] * val[i]);
                }
            }),
            Op::Exp { x } => acc(*x, &mut |s| {
                for i in 0..g.len() {
                    s[i] += g[i] * val[i];
                }
            }),
            Op::Log { x } => {
                let vx = self.data(*x);
                acc(*x, &mut |s| {
                    for i in 0..g.len() {
                        s[i] += g[i] / vx[i];
                    }
                })
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.data(*x);
                acc(*x, &mut |s| {
                    for i in 0..g.len() {
                        if vx[i] >= *lo && vx[i] <= *hi {
                            s[i] += g[i];
                        }
                    }
                })
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let back = permute_data(&g, node.value.shape(), &inverse);
                acc(*x, &mut |s| s.iter_mut().zip(&back).for_each(|(s, d)| *s += *d));
            }
            Op::MatMul { a, b, ta, tb, batch, shared_b, m, k, n } => {
                let (ta, tb, batch, shared_b, m, k, n) = (*ta, *tb, *batch, *shared_b, *m, *k, *n);
                let va = self.data(*a);
                let vb = self.data(*b);
                let l = |t: bool| if t { Layout::Transposed } else { Layout::Normal };
                let flip = |t: bool| if t { Layout::Normal } else { Layout::Transposed };
                acc(*a, &mut |s| {
                    if shared_b && !ta {
                        // dA = dC op(B)^T over the folded rows
                        gemm(batch * m, n, k, &g, Layout::Normal, vb, flip(tb), T::ONE, s);
                        return;
                    }
                    for i in 0..batch {
                        let bs = if shared_b { vb } else { &vb[i * k * n..(i + 1) * k * n] };
                        let gs = &g[i * m * n..(i + 1) * m * n];
                        let out = &mut s[i * m * k..(i + 1) * m * k];
                        if ta {
                            // dS[k,m] = op(B)[k,n] dC^T[n,m]
                            gemm(k, n, m, bs, l(tb), gs, Layout::Transposed, T::ONE, out);
                        } else {
                            gemm(m, n, k, gs, Layout::Normal, bs, flip(tb), T::ONE, out);
                        }
                    }
                });
                acc(*b, &mut |s| {
                    if shared_b && !ta {
                        if tb {
                            gemm(n, batch * m, k, &g, Layout::Transposed, va, Layout::Normal, T::ONE, s);
                        } else {
                            gemm(k, batch * m, n, va, Layout::Transposed, &g, Layout::Normal, T::ONE, s);
                        }
                        return;
                    }
                    for i in 0..batch {
                        let as_ = &va[i * m * k..(i + 1) * m * k];
                        let gs = &g[i * m * n..(i + 1) * m * n];
                        let out = if shared_b { &mut s[..] } else { &mut s[i * k * n..(i + 1) * k * n] };
                        if tb {
                            // dS[n,k] = dC^T[n,m] op(A)[m,k]
                            gemm(n, m, k, gs, Layout::Transposed, as_, l(ta), T::ONE, out);
                        } else {
                            // dB[k,n] = op(A)^T[k,m] dC[m,n]
                            gemm(k, m, n, as_, flip(ta), gs, Layout::Normal, T::ONE, out);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (nb, o) = (sx[0], sw[0]);
                let geom = ConvGeom { channels: sx[1], height: sx[2], width: sx[3], kh: sw[2], kw: sw[3], stride: *stride, pad: *pad };
                let (ho, wo) = geom.out_hw();
                let hw = ho * wo;
                let rows = geom.col_rows();
                let img = geom.channels * geom.height * geom.width;
                let vx = self.data(*x);
                let vw = self.data(*w);
                if let Some(b) = b {
                    acc(*b, &mut |s| {
                        for i in 0..nb {
                            for ch in 0..o {
                                let base = (i * o + ch) * hw;
                                s[ch] += g[base..base + hw].iter().copied().sum::<T>();
                            }
                        }
                    });
                }
                let mut cols = vec![T::ZERO; rows * hw];
                acc(*w, &mut |s| {
                    for i in 0..nb {
                        im2col(&vx[i * img..(i + 1) * img], &geom, &mut cols);
                        // dW[O, rows] += dY[O, hw] cols^T
                        gemm(o, hw, rows, &g[i * o * hw..(i + 1) * o * hw], Layout::Normal, &cols, Layout::Transposed, T::ONE, s);
                    }
                });
                acc(*x, &mut |s| {
                    for i in 0..nb {
                        // dcols = W^T dY
                        gemm(rows, o, hw, vw, Layout::Transposed, &g[i * o * hw..(i + 1) * o * hw], Layout::Normal, T::ZERO, &mut cols);
                        col2im(&cols, &geom, &mut s[i * img..(i + 1) * img]);
                    }
                });
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (nb, c, o) = (sx[0], sx[1], sw[1]);
                let out_shape = node.value.shape();
                let (ho, wo) = (out_shape[2], out_shape[3]);
                let geom = ConvGeom { channels: o, height: ho, width: wo, kh: sw[2], kw: sw[3], stride: *stride, pad: *pad };
                let hw_in = sx[2] * sx[3];
                let rows = geom.col_rows();
                let out_img = o * ho * wo;
                let vx = self.data(*x);
                let vw = self.data(*w);
                if let Some(b) = b {
                    acc(*b, &mut |s| {
                        for i in 0..nb {
                            for ch in 0..o {
                                let base = (i * o + ch) * ho * wo;
                                s[ch] += g[base..base + ho * wo].iter().copied().sum::<T>();
                            }
                        }
                    });
                }
                let mut cols = vec![T::ZERO; rows * hw_in];
                let mut gcols: Vec<Vec<T>> = Vec::new();
                for i in 0..nb {
                    im2col(&g[i * out_img..(i + 1) * out_img], &geom, &mut cols);
                    gcols.push(cols.clone());
                }
                acc(*w, &mut |s| {
                    for (i, gc) in gcols.iter().enumerate() {
                        // dW[C, rows] += x[C, hw] gcols^T
                        gemm(c, hw_in, rows, &vx[i * c * hw_in..(i + 1) * c * hw_in], Layout::Normal, gc, Layout::Transposed, T::ONE, s);
                    }
                });
                acc(*x, &mut |s| {
                    for (i, gc) in gcols.iter().enumerate() {
                        // dx[C, hw] = W[C, rows] gcols
                        gemm(c, rows, hw_in, vw, Layout::Normal, gc, Layout::Normal, T::ONE, &mut s[i * c * hw_in..(i + 1) * c * hw_in]);
                    }
                });
            }
            Op::Upsample { x, factor } => {
                let s_in = self.shape(*x);
                let (h, w) = (s_in[2], s_in[3]);
                let (ho, wo) = (h * factor, w * factor);
                let planes = s_in[0] * s_in[1];
                acc(*x, &mut |s| {
                    for p in 0..planes {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                s[p * h * w + (oy / factor) * w + ox / factor] += g[p * ho * wo + oy * wo + ox];
                            }
                        }
                    }
                });
            }
            Op::AvgPool { x, k } => {
                let s_in = self.shape(*x);
                let (h, w) = (s_in[2], s_in[3]);
                let (ho, wo) = (h / k, w / k);
                let planes = s_in[0] * s_in[1];
                let inv = T::ONE / T::from_f64((k * k) as f64);
                acc(*x, &mut |s| {
                    for p in 0..planes {
                        for y in 0..h {
                            for xx in 0..w {
                                s[p * h * w + y * w + xx] += g[p * ho * wo + (y / k) * wo + xx / k] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum { x } => acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean { x } => {
                let inv = g[0] / T::from_f64(self.data(*x).len() as f64);
                acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += inv))
            }
            Op::SumLast { x } => {
                let d = *self.shape(*x).last().unwrap();
                acc(*x, &mut |s| {
                    for (i, v) in s.iter_mut().enumerate() {
                        *v += g[i / d];
                    }
                })
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: T = (0..len).map(|j| g[idx(j)] * val[idx(j)]).sum();
                            for j in 0..len {
                                s[idx(j)] += val[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.shape(*gamma)[0];
                let rows = rstd.len();
                let gm = self.data(*gamma);
                acc(*gamma, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j];
                        }
                    }
                });
                let dn = T::from_f64(d as f64);
                acc(*x, &mut |s| {
                    for r in 0..rows {
                        let mut sum_dxh = T::ZERO;
                        let mut sum_dxh_xh = T::ZERO;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gm[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dxh = g[r * d + j] * gm[j];
                            s[r * d + j] += rstd[r] / dn * (dn * dxh - sum_dxh - xhat[r * d + j] * sum_dxh_xh);
                        }
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[axis + 1..]);
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis] * inner;
                    acc(v, &mut |s| {
                        for o in 0..outer {
                            for t in 0..len {
                                s[o * len + t] += g[o * total + offset + t];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s_in = self.shape(*x).to_vec();
                let len = node.value.shape()[*axis];
                let (outer, full, inner) = split_axis(&s_in, *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for t in 0..len * inner {
                            s[(o * full + start) * inner + t] += g[o * len * inner + t];
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let d = *node.value.shape().last().unwrap();
                acc(*x, &mut |s| {
                    for (r, nrm) in norms.iter().enumerate() {
                        let row = r * d..(r + 1) * d;
                        let dot: T = g[row.clone()].iter().zip(&val[row.clone()]).map(|(a, b)| *a * *b).sum();
                        for j in row {
                            s[j] += (g[j] - val[j] * dot) / *nrm;
                        }
                    }
                });
            }
            Op::LogSumExpRows { x, exclude_diagonal } => {
                let c = self.shape(*x)[1];
                let vx = self.data(*x);
                acc(*x, &mut |s| {
                    for i in 0..val.len() {
                        for j in 0..c {
                            if *exclude_diagonal && i == j {
                                continue;
                            }
                            s[i * c + j] += g[i] * (vx[i * c + j] - val[i]).exp();
                        }
                    }
                });
            }
            Op::BroadcastBatch { x, n } => {
                acc(*x, &mut |s| {
                    let len = s.len();
                    for b in 0..*n {
                        for (t, v) in s.iter_mut().enumerate() {
                            *v += g[b * len + t];
                        }
                    }
                });
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, o: usize, hw: usize) {
    for i in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(o) {
            let base = (i * o + ch) * hw;
            out[base..base + hw].iter_mut().for_each(|v| *v += b);
        }
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn permute_data<T: Scalar>(src: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
