//! Pushable rigid primitives and planar poses.

use core::f64::consts::PI;

use super::WorldError;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum ShapeKind {
    Disc { radius: f64 },
    Box { half_x: f64, half_y: f64 },
    Annulus { inner: f64, outer: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectShape {
    pub kind: ShapeKind,
    pub mass: f64,
    /// Viscous ground damping rate, 1/s. Applied to linear and angular velocity.
    pub ground_friction: f64,
}

impl ObjectShape {
    pub fn new(kind: ShapeKind, mass: f64, ground_friction: f64) -> Result<Self, WorldError> {
        let s = Self { kind, mass, ground_friction };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let dims_ok = match self.kind {
            ShapeKind::Disc { radius } => radius > 0.0,
            ShapeKind::Box { half_x, half_y } => half_x > 0.0 && half_y > 0.0,
            ShapeKind::Annulus { inner, outer } => inner > 0.0 && inner < outer,
        };
        let finite = self.mass.is_finite() && self.ground_friction.is_finite();
        if !dims_ok || !(self.mass > 0.0) || !(self.ground_friction >= 0.0) || !finite {
            return Err(WorldError::InvalidShape(self.kind));
        }
        Ok(())
    }

    pub fn moment_of_inertia(&self) -> f64 {
        let m = self.mass;
        match self.kind {
            ShapeKind::Disc { radius } => 0.5 * m * radius * radius,
            ShapeKind::Box { half_x, half_y } => m * (half_x * half_x + half_y * half_y) / 3.0,
            ShapeKind::Annulus { inner, outer } => 0.5 * m * (inner * inner + outer * outer),
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.kind.bounding_radius()
    }
}

impl ShapeKind {
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            ShapeKind::Disc { radius } => radius,
            ShapeKind::Box { half_x, half_y } => libm::hypot(half_x, half_y),
            ShapeKind::Annulus { outer, .. } => outer,
        }
    }

    /// Signed distance from a point in the object frame, negative inside.
    pub fn sdf(&self, x: f64, y: f64) -> f64 {
        match *self {
            ShapeKind::Disc { radius } => libm::hypot(x, y) - radius,
            ShapeKind::Box { half_x, half_y } => {
                let qx = x.abs() - half_x;
                let qy = y.abs() - half_y;
                let outside = libm::hypot(qx.max(0.0), qy.max(0.0));
                outside + qx.max(qy).min(0.0)
            }
            ShapeKind::Annulus { inner, outer } => {
                let r = libm::hypot(x, y);
                (r - outer).max(inner - r)
            }
        }
    }

    /// Outward unit normal of the nearest boundary, in the object frame.
    pub fn normal(&self, x: f64, y: f64) -> (f64, f64) {
        let radial = |sign: f64| {
            let r = libm::hypot(x, y);
            if r > 0.0 {
                (sign * x / r, sign * y / r)
            } else {
                (sign, 0.0)
            }
        };
        match *self {
            ShapeKind::Disc { .. } => radial(1.0),
            ShapeKind::Box { half_x, half_y } => {
                let qx = x.abs() - half_x;
                let qy = y.abs() - half_y;
                let sx = if x < 0.0 { -1.0 } else { 1.0 };
                let sy = if y < 0.0 { -1.0 } else { 1.0 };
                if qx > 0.0 && qy > 0.0 {
                    let d = libm::hypot(qx, qy);
                    (sx * qx / d, sy * qy / d)
                } else if qx >= qy {
                    (sx, 0.0)
                } else {
                    (0.0, sy)
                }
            }
            ShapeKind::Annulus { inner, outer } => {
                let r = libm::hypot(x, y);
                if r - outer >= inner - r {
                    radial(1.0)
                } else {
                    radial(-1.0)
                }
            }
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.sdf(x, y) <= 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// World point into this pose's local frame.
    pub fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = libm::sincos(self.theta);
        let (dx, dy) = (px - self.x, py - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = libm::sincos(self.theta);
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    pub fn rotate_to_world(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = libm::sincos(self.theta);
        (c * vx - s * vy, s * vx + c * vy)
    }

    pub fn rotate_to_local(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = libm::sincos(self.theta);
        (c * vx + s * vy, -s * vx + c * vy)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - 2.0 * PI * libm::floor((a + PI) / (2.0 * PI));
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SHAPES: [ShapeKind; 3] = [
        ShapeKind::Disc { radius: 0.04 },
        ShapeKind::Box { half_x: 0.05, half_y: 0.03 },
        ShapeKind::Annulus { inner: 0.02, outer: 0.045 },
    ];

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(ObjectShape::new(ShapeKind::Disc { radius: 0.0 }, 1.0, 1.0).is_err());
        assert!(ObjectShape::new(ShapeKind::Annulus { inner: 0.05, outer: 0.04 }, 1.0, 1.0).is_err());
        assert!(ObjectShape::new(ShapeKind::Box { half_x: 0.1, half_y: 0.1 }, -1.0, 1.0).is_err());
        assert!(ObjectShape::new(ShapeKind::Box { half_x: 0.1, half_y: 0.1 }, 0.3, 10.0).is_ok());
    }

    #[test]
    fn box_moment_matches_rectangle_formula() {
        let s = ObjectShape::new(ShapeKind::Box { half_x: 0.05, half_y: 0.03 }, 0.3, 1.0).unwrap();
        let (w, h) = (0.1, 0.06);
        assert!((s.moment_of_inertia() - 0.3 * (w * w + h * h) / 12.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn sdf_sign_agrees_with_normal_step(x in -0.08f64..0.08, y in -0.08f64..0.08, k in 0usize..3) {
            let s = SHAPES[k];
            let d = s.sdf(x, y);
            prop_assume!(d.abs() > 1e-4);
            let (nx, ny) = s.normal(x, y);
            prop_assert!((libm::hypot(nx, ny) - 1.0).abs() < 1e-12);
            // stepping back along the normal by the distance lands on the boundary
            let (bx, by) = (x - d * nx, y - d * ny);
            prop_assert!(s.sdf(bx, by).abs() < 1e-9, "boundary miss {}", s.sdf(bx, by));
        }

        #[test]
        fn local_world_round_trip(px in -1.0f64..1.0, py in -1.0f64..1.0, th in -4.0f64..4.0) {
            let pose = Pose2::new(0.1, -0.2, th);
            let (lx, ly) = pose.to_local(px, py);
            let (wx, wy) = pose.to_world(lx, ly);
            prop_assert!((wx - px).abs() < 1e-12 && (wy - py).abs() < 1e-12);
        }

        #[test]
        fn wrapped_angles_are_half_open(a in -50.0f64..50.0) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert!((libm::sin(w) - libm::sin(a)).abs() < 1e-9);
        }
    }
}
