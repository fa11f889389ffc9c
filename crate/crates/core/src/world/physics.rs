//! Penalty-contact pushing with viscous ground friction.
//!
//! The pusher is a kinematic disc. Where it overlaps the object a spring-damper
//! force acts along the contact normal; the object integrates it with
//! semi-implicit Euler and loses velocity to the ground at a fixed rate.

use super::shape::{wrap_angle, ObjectShape, Pose2};
use super::Workspace;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct PhysicsParams {
    pub pusher_radius: f64,
    /// N/m.
    pub contact_stiffness: f64,
    /// N s/m.
    pub contact_damping: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self { pusher_radius: 0.015, contact_stiffness: 750.0, contact_damping: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

/// Object and pusher state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub pose: Pose2,
    pub twist: Twist,
    pub tcp: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub penetration: f64,
    /// Unit normal pointing out of the object, toward the pusher.
    pub normal: (f64, f64),
    /// Point on the object boundary nearest the pusher center.
    pub point: (f64, f64),
    /// Force on the object.
    pub force: (f64, f64),
    /// Torque on the object about its center, counter-clockwise positive.
    pub torque: f64,
}

pub fn kinetic_energy(shape: &ObjectShape, twist: &Twist) -> f64 {
    0.5 * shape.mass * (twist.vx * twist.vx + twist.vy * twist.vy) + 0.5 * shape.moment_of_inertia() * twist.omega * twist.omega
}

/// Penalty contact between the pusher disc and the object, if they overlap.
pub fn contact(shape: &ObjectShape, body: &Body, tcp_velocity: (f64, f64), params: &PhysicsParams) -> Option<Contact> {
    let (lx, ly) = body.pose.to_local(body.tcp.0, body.tcp.1);
    let d = shape.kind.sdf(lx, ly);
    let penetration = params.pusher_radius - d;
    if penetration <= 0.0 {
        return None;
    }
    let (nlx, nly) = shape.kind.normal(lx, ly);
    let normal = body.pose.rotate_to_world(nlx, nly);
    let point = (body.tcp.0 - d * normal.0, body.tcp.1 - d * normal.1);
    let r = (point.0 - body.pose.x, point.1 - body.pose.y);
    // Velocity of the object material at the contact point.
    let vp = (body.twist.vx - body.twist.omega * r.1, body.twist.vy + body.twist.omega * r.0);
    let approach = -((tcp_velocity.0 - vp.0) * normal.0 + (tcp_velocity.1 - vp.1) * normal.1);
    let magnitude = (params.contact_stiffness * penetration + params.contact_damping * approach).max(0.0);
    let force = (-magnitude * normal.0, -magnitude * normal.1);
    let torque = r.0 * force.1 - r.1 * force.0;
    Some(Contact { penetration, normal, point, force, torque })
}

/// Advances one substep: the pusher moves by `displacement` (clipped to the
/// workspace), then the object integrates contact and ground forces.
pub fn physics_step(
    body: &mut Body,
    shape: &ObjectShape,
    displacement: (f64, f64),
    dt: f64,
    params: &PhysicsParams,
    workspace: &Workspace,
) -> Option<Contact> {
    let sane = |v: f64| if v.is_finite() { v } else { 0.0 };
    let target = (body.tcp.0 + sane(displacement.0), body.tcp.1 + sane(displacement.1));
    let clipped = workspace.clamp(target.0, target.1, 0.0);
    let tcp_velocity = ((clipped.0 - body.tcp.0) / dt, (clipped.1 - body.tcp.1) / dt);
    body.tcp = clipped;

    let c = contact(shape, body, tcp_velocity, params);
    let (fx, fy, tau) = c.map_or((0.0, 0.0, 0.0), |c| (c.force.0, c.force.1, c.torque));
    let keep = 1.0 - shape.ground_friction * dt;
    let t = &mut body.twist;
    t.vx = t.vx * keep + fx / shape.mass * dt;
    t.vy = t.vy * keep + fy / shape.mass * dt;
    t.omega = t.omega * keep + tau / shape.moment_of_inertia() * dt;
    body.pose.x += t.vx * dt;
    body.pose.y += t.vy * dt;
    body.pose.theta = wrap_angle(body.pose.theta + t.omega * dt);

    let margin = shape.bounding_radius();
    let (cx, cy) = workspace.clamp(body.pose.x, body.pose.y, margin);
    if cx != body.pose.x {
        body.pose.x = cx;
        t.vx = 0.0;
    }
    if cy != body.pose.y {
        body.pose.y = cy;
        t.vy = 0.0;
    }
    c
}
