//! Scripted pushing controller: get behind the object, then push it along
//! the object-to-goal bearing with proportional lateral correction.

use crate::world::shape::wrap_angle;
use crate::world::{Action, EpisodeConfig, WorldState};

/// Bearing error, radians, beyond which the pusher walks around the object
/// instead of pushing.
const REPOSITION_ANGLE: f64 = 0.6;
const CLEARANCE: f64 = 0.012;
const LATERAL_GAIN: f64 = 0.8;
const RADIAL_GAIN: f64 = 0.5;

pub fn scripted_expert(state: &WorldState, cfg: &EpisodeConfig) -> Action {
    let a_max = cfg.action_max;
    let pose = state.body.pose;
    let (gx, gy) = state.active_goal();
    let (dx, dy) = (gx - pose.x, gy - pose.y);
    let d_goal = libm::hypot(dx, dy);
    let last = state.goal_index + 1 >= state.goals.len();
    if d_goal < 1e-9 || (last && d_goal < 0.5 * cfg.success_threshold) {
        return Action::default();
    }
    let (ux, uy) = (dx / d_goal, dy / d_goal);
    let r_p = cfg.physics.pusher_radius;
    let reach = state.shape.bounding_radius() + r_p;
    let (tx, ty) = (state.body.tcp.0 - pose.x, state.body.tcp.1 - pose.y);
    let dist = libm::hypot(tx, ty).max(1e-9);
    let behind = libm::atan2(-uy, -ux);
    let here = libm::atan2(ty, tx);
    let off = wrap_angle(behind - here);

    let (mut vx, mut vy);
    if off.abs() > REPOSITION_ANGLE {
        // Walk around the object on a circle just outside contact.
        let sign = if off > 0.0 { 1.0 } else { -1.0 };
        let (nx, ny) = (tx / dist, ty / dist);
        let radial = RADIAL_GAIN * (reach + CLEARANCE - dist) / a_max;
        vx = a_max * (sign * -ny + radial * nx);
        vy = a_max * (sign * nx + radial * ny);
    } else {
        // Track the point on the push line just touching the object.
        let (cx, cy) = (-ux * reach, -uy * reach);
        let (ex, ey) = (cx - tx, cy - ty);
        let along = ex * ux + ey * uy;
        let (lx, ly) = (ex - along * ux, ey - along * uy);
        let speed = if last { a_max.min(0.25 * d_goal + 0.2 * a_max) } else { a_max };
        vx = speed * ux + LATERAL_GAIN * lx;
        vy = speed * uy + LATERAL_GAIN * ly;
        if along > 0.0 {
            vx += along * ux;
            vy += along * uy;
        }
    }
    let n = vx.abs().max(vy.abs());
    if n > a_max {
        vx *= a_max / n;
        vy *= a_max / n;
    }
    Action::new(vx, vy).clamped(a_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{PushEnv, ShapeKind};

    #[test]
    fn actions_stay_in_bounds_and_rest_at_the_goal() {
        let cfg = EpisodeConfig::default();
        let mut env = PushEnv::new(cfg.clone()).unwrap();
        env.reset(1).unwrap();
        let mut s = env.state().unwrap().clone();
        for k in 0..200 {
            s.body.tcp = (0.3 * libm::cos(k as f64), 0.2 * libm::sin(1.7 * k as f64));
            let a = scripted_expert(&s, &cfg);
            assert!(a.dx.abs() <= cfg.action_max && a.dy.abs() <= cfg.action_max);
        }
        s.goal_index = s.goals.len() - 1;
        let g = s.active_goal();
        s.body.pose.x = g.0;
        s.body.pose.y = g.1;
        assert_eq!(scripted_expert(&s, &cfg), Action::default());
    }

    #[test]
    fn pushes_boxes_and_rings_too() {
        for object in [ShapeKind::Box { half_x: 0.04, half_y: 0.03 }, ShapeKind::Annulus { inner: 0.02, outer: 0.04 }] {
            let cfg = EpisodeConfig { object, ..EpisodeConfig::default() };
            let mut env = PushEnv::new(cfg.clone()).unwrap();
            let mut wins = 0;
            for seed in 0..10 {
                env.reset(seed).unwrap();
                loop {
                    let r = env.step(scripted_expert(env.state().unwrap(), &cfg)).unwrap();
                    if r.terminated || r.truncated {
                        wins += r.terminated as usize;
                        break;
                    }
                }
            }
            assert!(wins >= 7, "{object:?}: {wins}/10");
        }
    }
}
