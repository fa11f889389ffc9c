//! Top-down orthographic rasterization of the workspace.

use alloc::vec;
use alloc::vec::Vec;

use super::shape::{Pose2, ShapeKind};
use super::Workspace;
use crate::rng::{self, SimRng};

/// Channel-major RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let n = self.height * self.width;
        let i = r * self.width + c;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct VisualRandomization {
    pub enabled: bool,
    /// Peak hue rotation, radians.
    pub hue: f64,
    /// Peak relative brightness change.
    pub brightness: f64,
    pub background_low: f64,
    pub background_high: f64,
    /// Peak camera shift as a fraction of the workspace extent, per axis.
    pub camera_offset: f64,
}

impl Default for VisualRandomization {
    fn default() -> Self {
        Self { enabled: true, hue: 0.35, brightness: 0.15, background_low: 0.25, background_high: 0.45, camera_offset: 0.02 }
    }
}

/// One episode's visual perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualDraw {
    pub hue: f64,
    pub brightness: f64,
    pub background: f64,
    /// Camera shift in meters.
    pub offset: (f64, f64),
}

impl VisualDraw {
    pub fn neutral() -> Self {
        Self { hue: 0.0, brightness: 1.0, background: 0.35, offset: (0.0, 0.0) }
    }

    pub fn sample(rng: &mut SimRng, cfg: &VisualRandomization, workspace: &Workspace) -> Self {
        if !cfg.enabled {
            return Self::neutral();
        }
        let ox = cfg.camera_offset * 2.0 * workspace.half_width;
        let oy = cfg.camera_offset * 2.0 * workspace.half_height;
        Self {
            hue: rng::uniform(rng, -cfg.hue, cfg.hue),
            brightness: 1.0 + rng::uniform(rng, -cfg.brightness, cfg.brightness),
            background: rng::uniform(rng, cfg.background_low, cfg.background_high),
            offset: (rng::uniform(rng, -ox, ox), rng::uniform(rng, -oy, oy)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct RenderSpec {
    pub height: usize,
    pub width: usize,
    /// Subsamples per pixel along each axis.
    pub supersample: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self { height: 64, width: 64, supersample: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualScene {
    pub shape: ShapeKind,
    pub object: Pose2,
    pub tcp: (f64, f64),
    pub pusher_radius: f64,
    pub goal: Option<(f64, f64)>,
    pub goal_radius: f64,
}

const OBJECT: [f64; 3] = [0.85, 0.45, 0.2];
const GOAL: [f64; 3] = [0.2, 0.8, 0.3];
const PUSHER: [f64; 3] = [0.1, 0.12, 0.25];

/// Rotates a color about the gray axis.
fn rotate_hue(c: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, co) = libm::sincos(angle);
    let k = (1.0 - co) / 3.0;
    let q = s / libm::sqrt(3.0);
    let m = [
        [co + k, k - q, k + q],
        [k + q, co + k, k - q],
        [k - q, k + q, co + k],
    ];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * c[0] + m[i][1] * c[1] + m[i][2] * c[2];
    }
    out
}

/// World coordinates of subsample `(sy, sx)` of pixel `(r, c)`.
fn sample_point(spec: &RenderSpec, ws: &Workspace, draw: &VisualDraw, r: usize, c: usize, sy: usize, sx: usize) -> (f64, f64) {
    let n = spec.supersample as f64;
    let fx = (c as f64 + (sx as f64 + 0.5) / n) / spec.width as f64;
    let fy = (r as f64 + (sy as f64 + 0.5) / n) / spec.height as f64;
    (-ws.half_width + fx * 2.0 * ws.half_width + draw.offset.0, ws.half_height - fy * 2.0 * ws.half_height + draw.offset.1)
}

/// Fractional coverage of the object silhouette per pixel.
pub fn object_mask(scene: &VisualScene, draw: &VisualDraw, spec: &RenderSpec, ws: &Workspace) -> Vec<f32> {
    let ss = spec.supersample.max(1);
    let mut mask = vec![0.0f32; spec.height * spec.width];
    for r in 0..spec.height {
        for c in 0..spec.width {
            let mut hits = 0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let (x, y) = sample_point(spec, ws, draw, r, c, sy, sx);
                    let (lx, ly) = scene.object.to_local(x, y);
                    hits += scene.shape.contains(lx, ly) as usize;
                }
            }
            mask[r * spec.width + c] = hits as f32 / (ss * ss) as f32;
        }
    }
    mask
}

pub fn render_visual(scene: &VisualScene, draw: &VisualDraw, spec: &RenderSpec, ws: &Workspace) -> RgbImage {
    let ss = spec.supersample.max(1);
    let object = rotate_hue(OBJECT, draw.hue);
    let goal = rotate_hue(GOAL, draw.hue);
    let background = [draw.background; 3];
    let n = spec.height * spec.width;
    let mut data = vec![0.0f32; 3 * n];
    let inv = 1.0 / (ss * ss) as f64;
    let r_p2 = scene.pusher_radius * scene.pusher_radius;
    let r_g2 = scene.goal_radius * scene.goal_radius;
    for r in 0..spec.height {
        for c in 0..spec.width {
            let mut acc = [0.0f64; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let (x, y) = sample_point(spec, ws, draw, r, c, sy, sx);
                    let (lx, ly) = scene.object.to_local(x, y);
                    let (px, py) = (x - scene.tcp.0, y - scene.tcp.1);
                    let color = if px * px + py * py <= r_p2 {
                        PUSHER
                    } else if scene.shape.contains(lx, ly) {
                        object
                    } else if scene.goal.is_some_and(|(gx, gy)| (x - gx) * (x - gx) + (y - gy) * (y - gy) <= r_g2) {
                        goal
                    } else {
                        background
                    };
                    for k in 0..3 {
                        acc[k] += color[k];
                    }
                }
            }
            for k in 0..3 {
                data[k * n + r * spec.width + c] = (acc[k] * inv * draw.brightness).clamp(0.0, 1.0) as f32;
            }
        }
    }
    RgbImage { height: spec.height, width: spec.width, data }
}

/// Intersection over union of two coverage masks.
pub fn mask_iou(a: &[f32], b: &[f32]) -> f64 {
    let (mut inter, mut union) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        inter += x.min(y) as f64;
        union += x.max(y) as f64;
    }
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}
