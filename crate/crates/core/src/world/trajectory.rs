//! Goal paths: fixed-length steps whose heading wanders with coherent noise.

use alloc::vec::Vec;

use super::noise::noise2;
use super::{Workspace, WorldError};
use crate::rng::{self, SimRng};

pub const MAX_ATTEMPTS: usize = 100;

/// Turn angles stay within `gain` only while the noise changes by at most 1
/// between consecutive samples. Along a lattice axis the noise slope peaks
/// a little above 7 per unit, so an eighth of a unit per point is the ceiling.
pub const MAX_FREQUENCY: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct TrajectoryParams {
    pub n_points: usize,
    pub step_len: f64,
    /// Peak heading deviation from the base heading, radians.
    pub gain: f64,
    /// Noise coordinate advance per point.
    pub frequency: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self { n_points: 4, step_len: 0.05, gain: 0.0, frequency: 0.1 }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.n_points < 2 || !(self.step_len > 0.0) || !(self.gain >= 0.0) {
            return Err(WorldError::InvalidTrajectory);
        }
        if !(self.frequency >= 0.0 && self.frequency <= MAX_FREQUENCY) {
            return Err(WorldError::InvalidTrajectory);
        }
        Ok(())
    }
}

/// Heading of segment `k` (1-based) for a given noise seed.
pub fn heading(base: f64, params: &TrajectoryParams, noise_seed: i64, k: usize) -> f64 {
    base + params.gain * noise2(noise_seed, k as f64 * params.frequency, 0.0)
}

/// Points `p_1..p_n`, each `step_len` from its predecessor, with `p_0 =
/// start`. Each attempt draws a fresh base heading and noise seed; a path
/// that leaves `workspace` shrunk by `margin` is discarded.
pub fn generate_trajectory(
    rng: &mut SimRng,
    start: (f64, f64),
    params: &TrajectoryParams,
    workspace: &Workspace,
    margin: f64,
) -> Result<Vec<(f64, f64)>, WorldError> {
    params.validate()?;
    for _ in 0..MAX_ATTEMPTS {
        let base = rng::uniform(rng, -core::f64::consts::PI, core::f64::consts::PI);
        let noise_seed = rng::uniform(rng, 0.0, 9.0e15) as i64;
        let mut pts = Vec::with_capacity(params.n_points);
        let (mut x, mut y) = start;
        let mut ok = true;
        for k in 1..=params.n_points {
            let (s, c) = libm::sincos(heading(base, params, noise_seed, k));
            x += params.step_len * c;
            y += params.step_len * s;
            if !workspace.contains(x, y, margin) {
                ok = false;
                break;
            }
            pts.push((x, y));
        }
        if ok {
            return Ok(pts);
        }
    }
    Err(WorldError::TrajectoryRetries(MAX_ATTEMPTS))
}
