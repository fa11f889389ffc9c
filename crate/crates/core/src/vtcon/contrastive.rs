//! Bidirectional InfoNCE between online features of one modality and
//! momentum features of the other.

use crate::nn::{Graph, Scalar, Var};

use super::VtConError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum ContrastiveMode {
    /// No contrastive step.
    None,
    /// Denominator over every key, positive included.
    Standard,
    /// Denominator over the negatives only (`j != i`).
    Verbatim,
}

impl ContrastiveMode {
    pub fn label(self) -> &'static str {
        match self {
            ContrastiveMode::None => "None",
            ContrastiveMode::Standard => "InfoNCE",
            ContrastiveMode::Verbatim => "MoCo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct ContrastiveConfig {
    pub mode: ContrastiveMode,
    pub temperature: f64,
    /// Weight of the contrastive loss in its optimizer step.
    pub weight: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { mode: ContrastiveMode::Verbatim, temperature: 0.1, weight: 1.0 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), VtConError> {
        if !(self.temperature > 0.0) || !(self.weight >= 0.0) {
            return Err(VtConError::Config("contrastive temperature must be positive and weight non-negative"));
        }
        Ok(())
    }
}

/// `-(1/B) sum_i log(exp(q_i.k_i / tau) / sum_j exp(q_i.k_j / tau))` with
/// `j` over all keys (`Standard`) or all but `i` (`Verbatim`). `k` should
/// be detached.
pub fn info_nce<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, tau: f64, mode: ContrastiveMode) -> Result<Var, VtConError> {
    let (sq, sk) = (g.shape(q).to_vec(), g.shape(k).to_vec());
    if sq.len() != 2 || sq != sk {
        return Err(VtConError::Shape("contrastive batches must be equal [B, D] matrices"));
    }
    if sq[0] < 2 {
        return Err(VtConError::BatchTooSmall(sq[0]));
    }
    let inv = T::from_f64(1.0 / tau);
    let logits = g.matmul_t(q, k, false, true);
    let logits = g.scale(logits, inv);
    let pos = g.mul(q, k);
    let pos = g.sum_last(pos);
    let pos = g.scale(pos, inv);
    let lse = g.logsumexp_rows(logits, mode == ContrastiveMode::Verbatim);
    let per = g.sub(lse, pos);
    Ok(g.mean(per))
}

/// `(L_vt, L_tv, L_con)` with `L_con = L_vt + L_tv`.
pub fn bidirectional<T: Scalar>(
    g: &mut Graph<T>,
    f_v: Var,
    f_c: Var,
    m_v: Var,
    m_c: Var,
    tau: f64,
    mode: ContrastiveMode,
) -> Result<(Var, Var, Var), VtConError> {
    let vt = info_nce(g, f_v, m_c, tau, mode)?;
    let tv = info_nce(g, f_c, m_v, tau, mode)?;
    let con = g.add(vt, tv);
    Ok((vt, tv, con))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng;
    use alloc::vec::Vec;

    // Straight from the formula with scalar loops.
    fn oracle(q: &[Vec<f64>], k: &[Vec<f64>], tau: f64, exclude: bool) -> f64 {
        let b = q.len();
        let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
        let mut total = 0.0;
        for i in 0..b {
            let num = libm::exp(dot(&q[i], &k[i]) / tau);
            let den: f64 = (0..b).filter(|&j| !(exclude && j == i)).map(|j| libm::exp(dot(&q[i], &k[j]) / tau)).sum();
            total -= libm::log(num / den);
        }
        total / b as f64
    }

    fn eval(q: &[Vec<f64>], k: &[Vec<f64>], tau: f64, mode: ContrastiveMode) -> f64 {
        let d = q[0].len();
        let flat = |m: &[Vec<f64>]| Tensor::<f64>::from_f64(&[m.len(), d], &m.concat());
        let mut g = Graph::new();
        let (a, b) = (g.input(flat(q)), g.input(flat(k)));
        let l = info_nce(&mut g, a, b, tau, mode).unwrap();
        g.data(l)[0]
    }

    #[test]
    fn identical_rows_give_log_b_minus_one() {
        for b in [2usize, 4, 64] {
            let row: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
            let n = libm::sqrt(row.iter().map(|x| x * x).sum());
            let row: Vec<f64> = row.iter().map(|x| x / n).collect();
            let m = alloc::vec![row; b];
            let mut g = Graph::<f64>::new();
            let flat = Tensor::from_f64(&[b, 8], &m.concat());
            let (fv, fc, mv, mc) = (g.input(flat.clone()), g.input(flat.clone()), g.input(flat.clone()), g.input(flat));
            let (vt, _, con) = bidirectional(&mut g, fv, fc, mv, mc, 0.1, ContrastiveMode::Verbatim).unwrap();
            let want = libm::log((b - 1) as f64);
            assert!((g.data(vt)[0] - want).abs() < 1e-6);
            assert!((g.data(con)[0] - 2.0 * want).abs() < 1e-6, "B={b}");
        }
    }

    #[test]
    fn two_by_two_hand_computation() {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let q = alloc::vec![alloc::vec![1.0, 0.0], alloc::vec![s, s]];
        let k = alloc::vec![alloc::vec![s, s], alloc::vec![0.0, 1.0]];
        // Row 0: positive q0.k0 = s, negative q0.k1 = 0 -> -(s - 0)/0.1.
        // Row 1: positive q1.k1 = s, negative q1.k0 = 1 -> -(s - 1)/0.1.
        let want = 0.5 * (-(s / 0.1) - (s - 1.0) / 0.1);
        assert!((eval(&q, &k, 0.1, ContrastiveMode::Verbatim) - want).abs() < 1e-12);
        assert!((oracle(&q, &k, 0.1, true) - want).abs() < 1e-12);
    }

    #[test]
    fn matches_oracle_in_both_modes_and_temperatures() {
        let mut r = rng::seeded(4);
        let mut unit = |n: usize, d: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
                    let n = libm::sqrt(v.iter().map(|x| x * x).sum());
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect()
        };
        let (q, k) = (unit(6, 5), unit(6, 5));
        for tau in [0.1, 1.0] {
            assert!((eval(&q, &k, tau, ContrastiveMode::Verbatim) - oracle(&q, &k, tau, true)).abs() < 1e-10);
            assert!((eval(&q, &k, tau, ContrastiveMode::Standard) - oracle(&q, &k, tau, false)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_single_row_batches() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_f64(&[1, 2], &[1.0, 0.0]));
        assert_eq!(info_nce(&mut g, a, a, 0.1, ContrastiveMode::Verbatim).unwrap_err(), VtConError::BatchTooSmall(1));
    }
}
