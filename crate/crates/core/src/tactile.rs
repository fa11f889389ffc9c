//! Contact-depth rendering for a flat optical tactile tip.
//!
//! A virtual camera sits `standoff` behind the sensing face and looks along
//! the sensor normal. Each pixel casts one ray through its center. The scene
//! is planar, so the vertical image axis is a fixed height band: rows whose
//! vertical offset lies inside the object's band see the lateral
//! cross-section, the others see nothing.

use alloc::vec;
use alloc::vec::Vec;

use crate::world::shape::{Pose2, ShapeKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TactileError {
    #[error("invalid sensor geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("scene pose is not finite")]
    NonFinitePose,
    #[error("depth maps have different resolutions: {0:?} vs {1:?}")]
    ResolutionMismatch((usize, usize), (usize, usize)),
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct SensorGeometry {
    pub tip_width: f64,
    pub tip_height: f64,
    pub standoff: f64,
    pub d_max: f64,
    pub rows: usize,
    pub cols: usize,
    /// Vertical extent of objects relative to the face center, `[low, high]`.
    pub band_low: f64,
    pub band_high: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            tip_width: 0.03,
            tip_height: 0.02,
            standoff: 0.01,
            d_max: 0.005,
            rows: 32,
            cols: 32,
            band_low: -0.01,
            band_high: 0.004,
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<(), TactileError> {
        let finite = [self.tip_width, self.tip_height, self.standoff, self.d_max, self.band_low, self.band_high]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(TactileError::InvalidGeometry("non-finite field"));
        }
        if !(self.tip_width > 0.0 && self.tip_height > 0.0) {
            return Err(TactileError::InvalidGeometry("tip extent must be positive"));
        }
        if !(self.d_max > 0.0) {
            return Err(TactileError::InvalidGeometry("d_max must be positive"));
        }
        if self.standoff < 0.0 {
            return Err(TactileError::InvalidGeometry("standoff must be non-negative"));
        }
        if self.rows < 8 || self.cols < 8 {
            return Err(TactileError::InvalidGeometry("resolution must be at least 8x8"));
        }
        if self.band_low > self.band_high {
            return Err(TactileError::InvalidGeometry("height band is inverted"));
        }
        Ok(())
    }

    /// Lateral offset of column `c`'s center.
    pub fn u(&self, c: usize) -> f64 {
        ((c as f64 + 0.5) / self.cols as f64 - 0.5) * self.tip_width
    }

    /// Vertical offset of row `r`'s center; row 0 is the top.
    pub fn v(&self, r: usize) -> f64 {
        (0.5 - (r as f64 + 0.5) / self.rows as f64) * self.tip_height
    }

    pub fn pixel_width(&self) -> f64 {
        self.tip_width / self.cols as f64
    }

    pub fn row_in_band(&self, r: usize) -> bool {
        let v = self.v(r);
        v >= self.band_low && v <= self.band_high
    }
}

/// Sensing-face center and outward normal heading, world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl SensorPose {
    pub fn normal(&self) -> (f64, f64) {
        let (s, c) = libm::sincos(self.heading);
        (c, s)
    }

    /// Lateral axis: the normal rotated a quarter turn counter-clockwise.
    pub fn lateral(&self) -> (f64, f64) {
        let (s, c) = libm::sincos(self.heading);
        (-s, c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorScene {
    pub sensor: SensorPose,
    pub shape: ShapeKind,
    pub object: Pose2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactDepthImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl ContactDepthImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }
}

pub fn reference_depth(sensor: &SensorGeometry) -> DepthMap {
    DepthMap { rows: sensor.rows, cols: sensor.cols, values: vec![sensor.standoff; sensor.rows * sensor.cols] }
}

/// Distance along a ray to the first point inside `shape`, if any.
///
/// `origin` and `dir` are in the object frame and `dir` is a unit vector.
/// A ray that starts inside the shape hits at 0.
pub fn ray_entry(shape: &ShapeKind, origin: (f64, f64), dir: (f64, f64)) -> Option<f64> {
    let (ox, oy) = origin;
    let (dx, dy) = dir;
    match *shape {
        ShapeKind::Disc { radius } => circle_span(ox, oy, dx, dy, radius).and_then(|(a, b)| first_nonneg(a, b)),
        ShapeKind::Box { half_x, half_y } => {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (o, d, h) in [(ox, dx, half_x), (oy, dy, half_y)] {
                if d == 0.0 {
                    if o.abs() > h {
                        return None;
                    }
                } else {
                    let t1 = (-h - o) / d;
                    let t2 = (h - o) / d;
                    lo = lo.max(t1.min(t2));
                    hi = hi.min(t1.max(t2));
                }
            }
            if lo > hi {
                None
            } else {
                first_nonneg(lo, hi)
            }
        }
        ShapeKind::Annulus { inner, outer } => {
            let (a, b) = circle_span(ox, oy, dx, dy, outer)?;
            // Inside the outer disc on [a, b]; remove the hole's span.
            let Some((ha, hb)) = circle_span(ox, oy, dx, dy, inner) else {
                return first_nonneg(a, b);
            };
            let start = a.max(0.0);
            if start > b {
                return None;
            }
            if start < ha || start > hb {
                Some(start)
            } else if hb <= b {
                Some(hb)
            } else {
                None
            }
        }
    }
}

fn circle_span(ox: f64, oy: f64, dx: f64, dy: f64, r: f64) -> Option<(f64, f64)> {
    let b = ox * dx + oy * dy;
    let c = ox * ox + oy * oy - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = libm::sqrt(disc);
    Some((-b - s, -b + s))
}

fn first_nonneg(a: f64, b: f64) -> Option<f64> {
    if b < 0.0 {
        None
    } else {
        Some(a.max(0.0))
    }
}

/// Renders the camera-to-surface distance per pixel, clamped to the
/// no-contact reference.
pub fn render_depth(scene: &SensorScene, sensor: &SensorGeometry) -> Result<DepthMap, TactileError> {
    let s = &scene.sensor;
    if !(s.x.is_finite() && s.y.is_finite() && s.heading.is_finite() && scene.object.is_finite()) {
        return Err(TactileError::NonFinitePose);
    }
    let (nx, ny) = s.normal();
    let (tx, ty) = s.lateral();
    let cam_x = s.x - sensor.standoff * nx;
    let cam_y = s.y - sensor.standoff * ny;
    let dir = scene.object.rotate_to_local(nx, ny);
    let profile: Vec<f64> = (0..sensor.cols)
        .map(|c| {
            let u = sensor.u(c);
            let origin = scene.object.to_local(cam_x + u * tx, cam_y + u * ty);
            ray_entry(&scene.shape, origin, dir).map_or(sensor.standoff, |t| t.min(sensor.standoff))
        })
        .collect();
    let mut values = Vec::with_capacity(sensor.rows * sensor.cols);
    for r in 0..sensor.rows {
        if sensor.row_in_band(r) {
            values.extend_from_slice(&profile);
        } else {
            values.extend(core::iter::repeat_n(sensor.standoff, sensor.cols));
        }
    }
    Ok(DepthMap { rows: sensor.rows, cols: sensor.cols, values })
}

pub fn contact_depth(current: &DepthMap, reference: &DepthMap, d_max: f64) -> Result<ContactDepthImage, TactileError> {
    if (current.rows, current.cols) != (reference.rows, reference.cols) {
        return Err(TactileError::ResolutionMismatch((current.rows, current.cols), (reference.rows, reference.cols)));
    }
    if !(d_max > 0.0) {
        return Err(TactileError::InvalidGeometry("d_max must be positive"));
    }
    let values = current
        .values
        .iter()
        .zip(&reference.values)
        .map(|(&c, &r)| ((r - c) / d_max).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(ContactDepthImage { rows: current.rows, cols: current.cols, values })
}

/// `render_depth` followed by `contact_depth` against the reference.
pub fn render_contact(scene: &SensorScene, sensor: &SensorGeometry) -> Result<ContactDepthImage, TactileError> {
    let current = render_depth(scene, sensor)?;
    contact_depth(&current, &reference_depth(sensor), sensor.d_max)
}
