//! Physics-based throwing controller.
//!
//! Release position: on the circle of radius `release_radius` at height
//! `release_height`, on the ray from the base toward the target. Release
//! velocity: 45° upward along the same azimuth, so the only unknown is the
//! planar speed `v_h` (the vertical component equals it).
//!
//! With horizontal distance `D` from release to target and drop
//! `h = r_z - p_z`, drag-free flight gives `p_z = r_z + D - g D² / (2 v_h²)`,
//! hence `v_h² = g D² / (2 (D + h))` and total speed `√(g D² / (D + h))`.
//! See `docs/ballistics.md` for the derivation and the sign check against the
//! integrator in [`simulate_ideal_flight`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Vec3, WorkspaceConfig};

const IDEAL_DT: f64 = 1e-3;
const MAX_FLIGHT_TIME: f64 = 10.0;

/// Release position and velocity for one throw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleasePlan {
    pub release: Vec3,
    pub velocity: Vec3,
    /// ‖v_{x,y}‖ (m/s).
    pub planar_speed: f64,
    /// Direction of the throw in the horizontal plane (rad).
    pub azimuth: f64,
}

impl ReleasePlan {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Release point on the c_d circle facing `target`, and the azimuth.
pub fn release_point(target: Vec3, ws: &WorkspaceConfig) -> Result<(Vec3, f64)> {
    if !target.is_finite() {
        return Err(Error::Unreachable(format!("non-finite target {target}")));
    }
    let radius = target.planar_norm();
    if radius <= ws.release_radius {
        return Err(Error::InsideReleaseCircle { x: target.x, y: target.y, radius: ws.release_radius });
    }
    let azimuth = target.y.atan2(target.x);
    let (s, c) = azimuth.sin_cos();
    Ok((Vec3::new(ws.release_radius * c, ws.release_radius * s, ws.release_height), azimuth))
}

/// Horizontal distance from the release point to `target`.
pub fn throw_distance(target: Vec3, ws: &WorkspaceConfig) -> Result<f64> {
    let (r, _) = release_point(target, ws)?;
    Ok((target.x - r.x).hypot(target.y - r.y))
}

/// Planar speed of a 45° drag-free throw covering `distance` while falling `drop`.
pub fn ballistic_planar_speed(distance: f64, drop: f64, gravity: f64) -> Result<f64> {
    let denom = 2.0 * (distance + drop);
    if !(distance > 0.0) || !(denom > 0.0) {
        return Err(Error::Unreachable(format!(
            "a 45 degree release cannot rise {:.4} m over {distance:.4} m",
            -drop
        )));
    }
    Ok(distance * (gravity / denom).sqrt())
}

/// Velocity vector for a 45° release along `azimuth`.
pub fn release_velocity(azimuth: f64, planar_speed: f64) -> Vec3 {
    let (s, c) = azimuth.sin_cos();
    Vec3::new(planar_speed * c, planar_speed * s, planar_speed)
}

/// Closed-form release plan that lands a point mass on `target`.
pub fn solve_release(target: Vec3, ws: &WorkspaceConfig) -> Result<ReleasePlan> {
    let (release, azimuth) = release_point(target, ws)?;
    let distance = (target.x - release.x).hypot(target.y - release.y);
    let planar_speed = ballistic_planar_speed(distance, release.z - target.z, ws.gravity)?;
    Ok(ReleasePlan { release, velocity: release_velocity(azimuth, planar_speed), planar_speed, azimuth })
}

/// Plan aimed at `target` but released with the given planar speed.
pub fn plan_with_speed(target: Vec3, ws: &WorkspaceConfig, planar_speed: f64) -> Result<ReleasePlan> {
    let (release, azimuth) = release_point(target, ws)?;
    Ok(ReleasePlan { release, velocity: release_velocity(azimuth, planar_speed), planar_speed, azimuth })
}

/// Ballistic planar speed that would land exactly at `landing`.
pub fn speed_for_landing(landing: Vec3, ws: &WorkspaceConfig) -> Result<f64> {
    solve_release(landing, ws).map(|plan| plan.planar_speed)
}

/// Drag-free RK4 flight from the plan's release state to the landing plane.
pub fn simulate_ideal_flight(plan: &ReleasePlan, ws: &WorkspaceConfig) -> Result<Vec3> {
    ideal_flight(plan, ws).map(|(p, _)| p)
}

/// Landing point and time of flight for a drag-free throw.
///
/// The crossing inside the final step is refined with Newton iterations on
/// partial RK4 steps, so the result carries no interpolation error.
pub fn ideal_flight(plan: &ReleasePlan, ws: &WorkspaceConfig) -> Result<(Vec3, f64)> {
    let plane = ws.landing_height;
    let g = Vec3::new(0.0, 0.0, -ws.gravity);
    let step = |pos: Vec3, vel: Vec3, dt: f64| -> (Vec3, Vec3) {
        // RK4 on (x' = v, v' = g); written out so it matches the general form.
        let (k1x, k1v) = (vel, g);
        let (k2x, k2v) = (vel + k1v * (dt / 2.0), g);
        let (k3x, k3v) = (vel + k2v * (dt / 2.0), g);
        let (k4x, k4v) = (vel + k3v * dt, g);
        (
            pos + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0),
            vel + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
        )
    };

    let (mut pos, mut vel, mut t) = (plan.release, plan.velocity, 0.0);
    if pos.z < plane {
        return Err(Error::Unreachable(format!("release height {:.4} below landing plane {plane:.4}", pos.z)));
    }
    while t < MAX_FLIGHT_TIME {
        let (next_pos, next_vel) = step(pos, vel, IDEAL_DT);
        if next_pos.z < plane && next_vel.z < 0.0 {
            let mut tau = IDEAL_DT * (pos.z - plane) / (pos.z - next_pos.z);
            for _ in 0..20 {
                let (p, v) = step(pos, vel, tau);
                let correction = (p.z - plane) / v.z;
                tau -= correction;
                if correction.abs() < 1e-15 {
                    break;
                }
            }
            let (p, _) = step(pos, vel, tau);
            return Ok((Vec3::new(p.x, p.y, plane), t + tau));
        }
        pos = next_pos;
        vel = next_vel;
        t += IDEAL_DT;
    }
    Err(Error::FlightTimeout(MAX_FLIGHT_TIME))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn level_ws() -> WorkspaceConfig {
        WorkspaceConfig { landing_height: 0.04, ..Default::default() }
    }

    #[test]
    fn equal_height_range_identity() {
        let ws = level_ws();
        let target = Vec3::new(ws.release_radius + 1.0, 0.0, ws.release_height);
        let plan = solve_release(target, &ws).unwrap();
        assert!((plan.speed() - 9.8f64.sqrt()).abs() < 1e-12);
        assert!((plan.speed() - 3.1305).abs() < 1e-4);
    }

    #[test]
    fn axis_aligned_target() {
        let ws = WorkspaceConfig::default();
        let plan = solve_release(Vec3::new(1.5, 0.0, 0.0), &ws).unwrap();
        assert_eq!(plan.azimuth, 0.0);
        assert_eq!(plan.release, Vec3::new(0.7, 0.0, 0.04));
    }

    #[test]
    fn plan_invariants_hold() {
        let ws = WorkspaceConfig::default();
        let p = Vec3::new(-0.9, 1.3, 0.0);
        let plan = solve_release(p, &ws).unwrap();
        assert!((plan.release.planar_norm() - ws.release_radius).abs() < 1e-9);
        assert_eq!(plan.release.z, ws.release_height);
        assert!((plan.velocity.planar_norm() - plan.velocity.z).abs() < 1e-12);
        assert!((plan.release - p).cross_z(plan.velocity).abs() < 1e-12);
        // Pointing toward, not away from, the target.
        assert!((p - plan.release).dot(plan.velocity) > 0.0);
    }

    #[test]
    fn targets_inside_circle_or_too_high_are_rejected() {
        let ws = WorkspaceConfig::default();
        assert!(matches!(solve_release(Vec3::new(0.5, 0.1, 0.0), &ws), Err(Error::InsideReleaseCircle { .. })));
        let err = solve_release(Vec3::new(0.8, 0.0, 0.5), &ws).unwrap_err();
        assert!(matches!(err, Error::Unreachable(_)));
        assert!(err.to_string().contains("45 degree"));
    }

    #[test]
    fn free_fall_lands_below_release() {
        let ws = WorkspaceConfig::default();
        let plan = ReleasePlan {
            release: Vec3::new(0.7, 0.0, 0.04),
            velocity: Vec3::ZERO,
            planar_speed: 0.0,
            azimuth: 0.0,
        };
        let p = simulate_ideal_flight(&plan, &ws).unwrap();
        assert!((p.x - 0.7).abs() < 1e-15 && p.y.abs() < 1e-15);
    }

    #[test]
    fn doubling_speed_quadruples_level_range() {
        let ws = level_ws();
        let plan = plan_with_speed(Vec3::new(1.5, 0.0, 0.04), &ws, 1.5).unwrap();
        let fast = plan_with_speed(Vec3::new(1.5, 0.0, 0.04), &ws, 3.0).unwrap();
        let r1 = simulate_ideal_flight(&plan, &ws).unwrap().x - 0.7;
        let r2 = simulate_ideal_flight(&fast, &ws).unwrap().x - 0.7;
        assert!((r2 / r1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn flight_time_matches_quadratic_root() {
        let ws = WorkspaceConfig::default();
        let plan = solve_release(Vec3::new(1.6, 0.4, 0.0), &ws).unwrap();
        let (_, t) = ideal_flight(&plan, &ws).unwrap();
        // ½ g t² − v_z t + (p_z − r_z) = 0, positive root.
        let (a, b, c) = (0.5 * ws.gravity, -plan.velocity.z, ws.landing_height - plan.release.z);
        let root = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        assert!((t - root).abs() < 1e-6, "{t} vs {root}");
    }

    #[test]
    fn random_targets_land_on_target() {
        let ws = WorkspaceConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let radius = ws.release_radius + rng.gen_range(0.2..1.0);
            let angle = rng.gen_range(-3.1..3.1f64);
            let p = Vec3::new(radius * angle.cos(), radius * angle.sin(), ws.landing_height);
            let plan = solve_release(p, &ws).unwrap();
            let landed = simulate_ideal_flight(&plan, &ws).unwrap();
            assert!((landed - p).norm() < 1e-3);
        }
    }

    #[test]
    fn landing_speed_is_monotone_in_distance() {
        let ws = WorkspaceConfig::default();
        let near = speed_for_landing(Vec3::new(1.2, 0.0, 0.0), &ws).unwrap();
        let far = speed_for_landing(Vec3::new(1.4, 0.0, 0.0), &ws).unwrap();
        assert!(far > near);
    }

    proptest! {
        #[test]
        fn speed_for_landing_round_trips(radius in 0.75f64..3.0, angle in -3.14f64..3.14) {
            let ws = WorkspaceConfig::default();
            let p = Vec3::new(radius * angle.cos(), radius * angle.sin(), ws.landing_height);
            let plan = solve_release(p, &ws).unwrap();
            let back = speed_for_landing(p, &ws).unwrap();
            prop_assert!((back - plan.planar_speed).abs() <= 1e-9 * plan.planar_speed);
        }
    }
}
