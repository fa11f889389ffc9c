use super::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, epsilon: 1e-8, beta1: 0.9, beta2: 0.999 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    pub fn is_valid(&self) -> bool {
        self.learning_rate > 0.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
    }
}

/// One bias-corrected Adam update over every parameter of `store`, then
/// clears the gradient slots.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, cfg: &AdamConfig) {
    let t = store.adam_steps() + 1;
    store.set_adam_steps(t);
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_b2 = T::from_f64(1.0 - cfg.beta2);
    let step = T::from_f64(cfg.learning_rate / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(cfg.epsilon);
    for p in store.params_mut() {
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = p.grad[i];
            p.m[i] = b1 * p.m[i] + one_b1 * g;
            p.v[i] = b2 * p.v[i] + one_b2 * g * g;
            let denom = (p.v[i] * inv_bc2).sqrt() + eps;
            values[i] -= step * p.m[i] / denom;
            p.grad[i] = T::ZERO;
        }
    }
}
