//! Planar pushing world: shapes, contact physics, goal paths, rendering and
//! the episodic environment.

pub mod env;
pub mod noise;
pub mod physics;
pub mod render;
pub mod shape;
pub mod trajectory;

pub use env::{
    compute_reward, Action, EpisodeConfig, Observation, PushEnv, StepInfo, StepResult, WorldState,
};
pub use physics::{physics_step, Body, Contact, PhysicsParams, Twist};
pub use render::{render_visual, RenderSpec, RgbImage, VisualDraw, VisualRandomization, VisualScene};
pub use shape::{ObjectShape, Pose2, ShapeKind};
pub use trajectory::{generate_trajectory, TrajectoryParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("invalid object shape {0:?}")]
    InvalidShape(ShapeKind),
    #[error("invalid trajectory parameters")]
    InvalidTrajectory,
    #[error("no in-bounds trajectory after {0} attempts; the workspace is too small for these parameters")]
    TrajectoryRetries(usize),
    #[error("invalid episode configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("the episode has finished; call reset before stepping again")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotReset,
    #[error(transparent)]
    Tactile(#[from] crate::tactile::TactileError),
}

/// Axis-aligned workspace centered on the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct Workspace {
    pub half_width: f64,
    pub half_height: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { half_width: 0.4, half_height: 0.3 }
    }
}

impl Workspace {
    pub fn contains(&self, x: f64, y: f64, margin: f64) -> bool {
        x.abs() <= self.half_width - margin && y.abs() <= self.half_height - margin
    }

    pub fn clamp(&self, x: f64, y: f64, margin: f64) -> (f64, f64) {
        let hx = (self.half_width - margin).max(0.0);
        let hy = (self.half_height - margin).max(0.0);
        (x.clamp(-hx, hx), y.clamp(-hy, hy))
    }

    pub fn diagonal(&self) -> f64 {
        2.0 * libm::hypot(self.half_width, self.half_height)
    }
}
