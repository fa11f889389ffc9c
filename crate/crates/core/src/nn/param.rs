use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::{NnError, Scalar, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a [`ParamStore`], used to route gradients
/// from graph leaves back to the store that owns them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StoreId(u64);

impl StoreId {
    fn fresh() -> Self {
        StoreId(NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Handle to one parameter inside a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// Adam first-moment estimate.
    pub m: Vec<T>,
    /// Adam second-moment estimate.
    pub v: Vec<T>,
}

/// Ordered, named collection of trainable tensors with gradient slots and
/// Adam moments. Momentum (EMA) copies are separate congruent stores, see
/// [`ParamStore::ema_from`].
#[derive(Debug)]
pub struct ParamStore<T> {
    id: StoreId,
    params: Vec<Param<T>>,
    adam_steps: u64,
}

impl<T: Scalar> Clone for ParamStore<T> {
    /// Clones values and optimizer state under a fresh identity, so gradients
    /// recorded against the original never land in the clone.
    fn clone(&self) -> Self {
        Self {
            id: StoreId::fresh(),
            params: self.params.clone(),
            adam_steps: self.adam_steps,
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { id: StoreId::fresh(), params: Vec::new(), adam_steps: 0 }
    }

    pub fn id(&self) -> StoreId {
        self.id
    }

    /// Registers a parameter. Names must be unique within the store.
    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        let n = value.numel();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![T::ZERO; n],
            m: vec![T::ZERO; n],
            v: vec![T::ZERO; n],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam_steps
    }

    pub(crate) fn set_adam_steps(&mut self, steps: u64) {
        self.adam_steps = steps;
    }

    /// Manifest of `(name, shape)` pairs in registration order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect()
    }

    pub fn same_manifest(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    /// Adds gradients recorded for this store's leaves into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for entry in grads.entries.iter().filter(|e| e.store == self.id) {
            let slot = &mut self.params[entry.param.0].grad;
            for (g, d) in slot.iter_mut().zip(&entry.grad) {
                *g += *d;
            }
        }
    }

    /// Like [`accumulate`](Self::accumulate) but scales every incoming gradient.
    pub fn accumulate_scaled(&mut self, grads: &Gradients<T>, scale: T) {
        for entry in grads.entries.iter().filter(|e| e.store == self.id) {
            let slot = &mut self.params[entry.param.0].grad;
            for (g, d) in slot.iter_mut().zip(&entry.grad) {
                *g += *d * scale;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::ZERO);
        }
    }

    pub fn grads_all_zero(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| *g == T::ZERO))
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| {
                let g = g.to_f64();
                g * g
            })
            .sum::<f64>()
            .sqrt_f64()
    }

    /// Copies parameter values (not optimizer state) from a congruent store.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<(), NnError> {
        if !self.same_manifest(other) {
            return Err(NnError::ManifestMismatch);
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// Exponential moving average toward a congruent store:
    /// `self = keep * self + (1 - keep) * other`, coordinate-wise.
    ///
    /// Serves both the momentum-encoder update (`keep = eta`) and Polyak
    /// target averaging (`keep = 1 - rate`).
    pub fn ema_from(&mut self, other: &ParamStore<T>, keep: T) -> Result<(), NnError> {
        if !self.same_manifest(other) {
            return Err(NnError::ManifestMismatch);
        }
        let take = T::ONE - keep;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            for (d, s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
                *d = keep * *d + take * *s;
            }
        }
        Ok(())
    }

    pub fn values_equal(&self, other: &ParamStore<T>) -> bool {
        self.same_manifest(other) && self.params.iter().zip(&other.params).all(|(a, b)| a.value == b.value)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite() && p.grad.iter().all(|g| g.is_finite()))
    }

    /// Flattened parameter values in registration order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn to_f64(&self) -> ParamStore<f64> {
        let mut out = ParamStore::<f64>::new();
        for p in &self.params {
            out.add(&p.name, p.value.cast());
        }
        out
    }

    pub fn to_f32(&self) -> ParamStore<f32> {
        let mut out = ParamStore::<f32>::new();
        for p in &self.params {
            out.add(&p.name, p.value.cast());
        }
        out
    }
}

trait SqrtF64 {
    fn sqrt_f64(self) -> f64;
}

impl SqrtF64 for f64 {
    fn sqrt_f64(self) -> f64 {
        libm::sqrt(self)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct GradEntry<T> {
    pub store: StoreId,
    pub param: ParamId,
    pub grad: Vec<T>,
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub(crate) entries: Vec<GradEntry<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `param` of `store`, summed over every leaf that bound it.
    pub fn get(&self, store: &ParamStore<T>, param: ParamId) -> Option<Vec<T>> {
        let mut out: Option<Vec<T>> = None;
        for e in self.entries.iter().filter(|e| e.store == store.id() && e.param == param) {
            match &mut out {
                None => out = Some(e.grad.clone()),
                Some(acc) => acc.iter_mut().zip(&e.grad).for_each(|(a, b)| *a += *b),
            }
        }
        out
    }

    pub fn touches(&self, store: &ParamStore<T>) -> bool {
        self.entries.iter().any(|e| e.store == store.id())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
