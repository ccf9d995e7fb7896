//! Ground-truth world state and kinematics.
//!
//! The base station (BS) sits at the origin with its planar array at height
//! `h`; the vehicle drives along a straight road parallel to the y-axis.  The
//! vehicle carries the communication receiver (CR) at its body center and a
//! rigid set of radar-visible scatterers placed on a grid over its footprint.
//!
//! Two descriptions of the same motion coexist:
//!
//! - **Cartesian truth** ([`propagate_truth`]): exact constant-acceleration
//!   kinematics along the road.  This is what "really" happens and serves as
//!   the oracle for everything else.
//! - **Polar evolution model** ([`evolve_state`]): the first-order update of
//!   the state (θ, φ, d, v) that trackers use, obtained by one Euler step of
//!   the exact polar-coordinate flow.  Its error per step is O((v·dt/d)²).
//!
//! Elevation θ is measured from the horizon at the array, negative looking
//! down; azimuth φ is measured in the ground plane from the x-axis.  Range d
//! is the slant range from the array to the target.

use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

// ── Types ───────────────────────────────────────────────────────────────────

/// Kinematic state of a down-range target in the array's polar chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarState {
    /// Elevation, rad; negative below the array horizon.
    pub theta: f64,
    /// Azimuth, rad; measured from the x-axis in the ground plane.
    pub phi: f64,
    /// Slant range from the array, m.
    pub d: f64,
    /// Speed along the road (+y), m/s.
    pub v: f64,
}

impl PolarState {
    /// State as a `[θ, φ, d, v]` vector for filter algebra.
    pub fn to_vector(self) -> [f64; 4] {
        [self.theta, self.phi, self.d, self.v]
    }

    /// State from a `[θ, φ, d, v]` vector.
    pub fn from_vector(x: [f64; 4]) -> Self {
        Self {
            theta: x[0],
            phi: x[1],
            d: x[2],
            v: x[3],
        }
    }
}

/// Ground-truth world: BS placement, vehicle pose, and rigid scatterer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    /// Base-station position, m; the array phase center.
    pub bs_position: [f64; 3],
    /// CR antenna position, m (vehicle body center).
    pub cr_position: [f64; 3],
    /// CR speed along +y, m/s.
    pub cr_velocity: f64,
    /// CR acceleration along +y, m/s².
    pub cr_acceleration: f64,
    /// Scatterer offsets (Δx, Δy) from the CR, m; rigid, z equal to the CR's.
    pub scatterer_offsets: Vec<(f64, f64)>,
    /// Elapsed time, s.
    pub time: f64,
}

impl WorldState {
    /// Builds a world with scatterers on a cell-centered `grid_x × grid_y`
    /// grid over the `width × length` vehicle footprint.
    ///
    /// `min_separation` is the smallest admissible pairwise scatterer
    /// distance (callers pass the radar range resolution): scatterers closer
    /// than one resolution cell would merge in delay processing, so such a
    /// layout is rejected.  Offsets beyond the half-footprint are rejected
    /// too.
    // The nine scalars mirror the configuration file one for one; the single
    // production caller reads them straight out of its validated blocks.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bs_position: [f64; 3],
        cr_position: [f64; 3],
        cr_velocity: f64,
        cr_acceleration: f64,
        vehicle_width: f64,
        vehicle_length: f64,
        grid_x: usize,
        grid_y: usize,
        min_separation: f64,
    ) -> Result<Self> {
        if grid_x * grid_y == 0 {
            return Err(Error::InvalidInput {
                name: "scatterer_grid",
                reason: "need at least one scatterer".into(),
            });
        }
        let mut scatterer_offsets = Vec::with_capacity(grid_x * grid_y);
        for i in 0..grid_x {
            let dx = vehicle_width * ((i as f64 + 0.5) / grid_x as f64 - 0.5);
            for j in 0..grid_y {
                let dy = vehicle_length * ((j as f64 + 0.5) / grid_y as f64 - 0.5);
                scatterer_offsets.push((dx, dy));
            }
        }
        let world = Self {
            bs_position,
            cr_position,
            cr_velocity,
            cr_acceleration,
            scatterer_offsets,
            time: 0.0,
        };
        world.validate(vehicle_width, vehicle_length, min_separation)?;
        Ok(world)
    }

    fn validate(&self, width: f64, length: f64, min_separation: f64) -> Result<()> {
        for &(dx, dy) in &self.scatterer_offsets {
            if dx.abs() > width / 2.0 + 1e-12 || dy.abs() > length / 2.0 + 1e-12 {
                return Err(Error::InvalidInput {
                    name: "scatterer_offsets",
                    reason: format!("offset ({dx}, {dy}) outside the vehicle footprint"),
                });
            }
        }
        for (i, &(xi, yi)) in self.scatterer_offsets.iter().enumerate() {
            for &(xj, yj) in &self.scatterer_offsets[i + 1..] {
                let sep = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                if sep <= min_separation {
                    return Err(Error::InvalidInput {
                        name: "scatterer_offsets",
                        reason: format!(
                            "pair separated by {sep:.3} m, below the resolution {min_separation} m"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Absolute scatterer positions, m.
    pub fn scatterer_positions(&self) -> Vec<[f64; 3]> {
        self.scatterer_offsets
            .iter()
            .map(|&(dx, dy)| {
                [
                    self.cr_position[0] + dx,
                    self.cr_position[1] + dy,
                    self.cr_position[2],
                ]
            })
            .collect()
    }
}

// ── Cartesian truth ─────────────────────────────────────────────────────────

/// Advances the world by `dt` seconds of exact constant-acceleration motion
/// along +y.  Scatterers ride rigidly with the vehicle; x and z never change.
pub fn propagate_truth(world: &WorldState, dt: f64) -> WorldState {
    let mut next = world.clone();
    next.cr_position[1] += world.cr_velocity * dt + 0.5 * world.cr_acceleration * dt * dt;
    next.cr_velocity += world.cr_acceleration * dt;
    next.time += dt;
    next
}

/// Converts a Cartesian point to the array's polar chart.
///
/// With `h_eff = bs_z − point_z` (the height of the array above the target)
/// and ρ the ground-plane distance from the array:
///
/// - d = √(x² + y² + h_eff²)
/// - θ = −arctan(h_eff / ρ)   (negative when the target is below the array)
/// - φ = arctan(y / x)
///
/// The returned state carries `v = 0`: a single position fixes angles and
/// range only; callers supply the speed.  Fails when the target is exactly on
/// the array's vertical axis, where azimuth is undefined.
pub fn cartesian_to_polar(point: [f64; 3], bs_position: [f64; 3]) -> Result<PolarState> {
    let x = point[0] - bs_position[0];
    let y = point[1] - bs_position[1];
    let h_eff = bs_position[2] - point[2];
    let rho = x.hypot(y);
    if rho == 0.0 {
        return Err(Error::BeneathArray);
    }
    Ok(PolarState {
        theta: -(h_eff / rho).atan(),
        phi: y.atan2(x),
        d: (rho * rho + h_eff * h_eff).sqrt(),
        v: 0.0,
    })
}

/// Inverse of [`cartesian_to_polar`]: the Cartesian point at (θ, φ, d) as
/// seen from `bs_position`.
pub fn polar_to_cartesian(theta: f64, phi: f64, d: f64, bs_position: [f64; 3]) -> [f64; 3] {
    [
        bs_position[0] + d * theta.cos() * phi.cos(),
        bs_position[1] + d * theta.cos() * phi.sin(),
        bs_position[2] + d * theta.sin(),
    ]
}

// ── Polar evolution model ───────────────────────────────────────────────────

/// Per-component standard deviations of the evolution noise, in the state's
/// own units (rad, rad, m, m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionNoise {
    /// Elevation noise σ, rad.
    pub theta: f64,
    /// Azimuth noise σ, rad.
    pub phi: f64,
    /// Range noise σ, m.
    pub d: f64,
    /// Speed noise σ, m/s.
    pub v: f64,
}

/// One step of the polar evolution model.
///
/// For road motion along +y the exact polar flow is
/// θ̇ = −(v/d)·sinφ·sinθ, φ̇ = (v/d)·cosφ/cosθ, ḋ = v·cosθ·sinφ, v̇ = 0,
/// and this function applies its Euler step:
///
/// - θ' = θ − (v·dt/d)·sinφ·sinθ
/// - φ' = φ + (v·dt/d)·cosφ/cosθ
/// - d' = d + v·dt·cosθ·sinφ
/// - v' = v
///
/// plus optional zero-mean Gaussian noise.  The step error against the exact
/// Cartesian motion is O((v·dt/d)²) — negligible at slot timescales.
/// Fails at grazing elevation where the azimuth rate blows up.
pub fn evolve_state<R: Rng + ?Sized>(
    s: &PolarState,
    dt: f64,
    noise: Option<&EvolutionNoise>,
    rng: &mut R,
) -> Result<PolarState> {
    if s.theta.cos().abs() < 1e-9 {
        return Err(Error::SingularAngle {
            context: "evolution model",
            theta: s.theta,
            phi: s.phi,
        });
    }
    let k = s.v * dt / s.d;
    let mut next = PolarState {
        theta: s.theta - k * s.phi.sin() * s.theta.sin(),
        phi: s.phi + k * s.phi.cos() / s.theta.cos(),
        d: s.d + s.v * dt * s.theta.cos() * s.phi.sin(),
        v: s.v,
    };
    if let Some(n) = noise {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        next.theta += n.theta * std_normal.sample(rng);
        next.phi += n.phi * std_normal.sample(rng);
        next.d += n.d * std_normal.sample(rng);
        next.v += n.v * std_normal.sample(rng);
    }
    Ok(next)
}

// ── Tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn test_world() -> WorldState {
        WorldState::new([0.0, 0.0, 8.0], [10.0, -38.0, 1.0], 0.0, 10.0, 2.0, 5.0, 2, 3, 0.375)
            .expect("default layout is valid")
    }

    #[test]
    fn propagate_constant_velocity() {
        let mut w = test_world();
        w.cr_velocity = 20.0;
        w.cr_acceleration = 0.0;
        let next = propagate_truth(&w, 0.125e-3);
        assert!((next.cr_position[1] - (-38.0 + 2.5e-3)).abs() < 1e-12);
        assert_eq!(next.cr_velocity, 20.0);
    }

    #[test]
    fn propagate_rest_plus_acceleration() {
        let w = test_world(); // v = 0, a = 10
        let next = propagate_truth(&w, 1.0);
        assert!((next.cr_position[1] - (-38.0 + 5.0)).abs() < 1e-12);
        assert!((next.cr_velocity - 10.0).abs() < 1e-12);
    }

    #[test]
    fn propagate_stationary() {
        let mut w = test_world();
        w.cr_acceleration = 0.0;
        let next = propagate_truth(&w, 3.7);
        assert_eq!(next.cr_position, w.cr_position);
        assert_eq!(next.cr_velocity, 0.0);
    }

    #[test]
    fn propagate_preserves_rigid_scatterer_geometry() {
        let mut w = test_world();
        w.cr_velocity = 13.0;
        let before = w.scatterer_positions();
        let after = propagate_truth(&propagate_truth(&w, 0.5), 0.25).scatterer_positions();
        for i in 0..before.len() {
            for j in i + 1..before.len() {
                let dist = |p: &[[f64; 3]]| {
                    ((p[i][0] - p[j][0]).powi(2)
                        + (p[i][1] - p[j][1]).powi(2)
                        + (p[i][2] - p[j][2]).powi(2))
                    .sqrt()
                };
                assert!((dist(&before) - dist(&after)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn polar_on_x_axis() {
        let p = cartesian_to_polar([10.0, 0.0, 1.0], [0.0, 0.0, 8.0]).unwrap();
        assert!((p.phi - 0.0).abs() < 1e-15);
        assert!((p.theta - (-(7.0f64 / 10.0).atan())).abs() < 1e-15);
        assert!((p.d - 149.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn polar_initial_cr_position() {
        let p = cartesian_to_polar([10.0, -38.0, 1.0], [0.0, 0.0, 8.0]).unwrap();
        assert!((p.phi - (-3.8f64).atan()).abs() < 1e-12);
        assert!((p.phi - (-1.3134)).abs() < 1e-4);
    }

    #[test]
    fn polar_round_trip() {
        let bs = [0.0, 0.0, 8.0];
        for &point in &[[10.0, -38.0, 1.0], [3.0, 7.0, 1.5], [25.0, 0.1, 0.0]] {
            let p = cartesian_to_polar(point, bs).unwrap();
            let back = polar_to_cartesian(p.theta, p.phi, p.d, bs);
            for k in 0..3 {
                assert!((back[k] - point[k]).abs() < 1e-12, "component {k}");
            }
        }
    }

    #[test]
    fn polar_degenerate_beneath_array() {
        let err = cartesian_to_polar([0.0, 0.0, 1.0], [0.0, 0.0, 8.0]).unwrap_err();
        assert!(matches!(err, Error::BeneathArray));
    }

    #[test]
    fn evolve_zero_velocity_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = PolarState { theta: -0.6, phi: -1.3, d: 40.0, v: 0.0 };
        let next = evolve_state(&s, 0.125e-3, None, &mut rng).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn evolve_broadside_crossing_keeps_range_and_elevation() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = PolarState { theta: -0.35, phi: 0.0, d: 22.0, v: 18.0 };
        let next = evolve_state(&s, 1e-3, None, &mut rng).unwrap();
        assert_eq!(next.d, s.d);
        assert_eq!(next.theta, s.theta);
        assert!(next.phi > s.phi);
    }

    /// One evolution step must agree with exact Cartesian propagation to the
    /// step's own second-order error.
    #[test]
    fn evolve_matches_cartesian_oracle_single_step() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let bs = [0.0, 0.0, 8.0];
        let s = PolarState { theta: -0.6, phi: -1.3, d: 40.0, v: 20.0 };
        let dt = 0.125e-3;

        let stepped = evolve_state(&s, dt, None, &mut rng).unwrap();

        let mut p = polar_to_cartesian(s.theta, s.phi, s.d, bs);
        p[1] += s.v * dt;
        let exact = cartesian_to_polar(p, bs).unwrap();

        let eps = (s.v * dt / s.d).powi(2); // per-step truncation scale
        assert!((stepped.theta - exact.theta).abs() < 10.0 * eps);
        assert!((stepped.phi - exact.phi).abs() < 10.0 * eps);
        assert!((stepped.d - exact.d).abs() < 10.0 * eps * s.d);
    }

    /// Fixed horizon, shrinking step: the accumulated error against the
    /// Cartesian trajectory must shrink at least linearly in dt.
    #[test]
    fn evolve_converges_linearly_to_cartesian_trajectory() {
        let bs = [0.0, 0.0, 8.0];
        let start = [10.0, -20.0, 1.0];
        let v = 25.0;
        let horizon = 0.4;

        let error_at = |n_steps: usize| -> f64 {
            let mut rng = ChaCha12Rng::seed_from_u64(1);
            let dt = horizon / n_steps as f64;
            let mut s = cartesian_to_polar(start, bs).unwrap();
            s.v = v;
            for _ in 0..n_steps {
                s = evolve_state(&s, dt, None, &mut rng).unwrap();
            }
            let mut exact_p = start;
            exact_p[1] += v * horizon;
            let exact = cartesian_to_polar(exact_p, bs).unwrap();
            (s.theta - exact.theta).abs() + (s.phi - exact.phi).abs() + (s.d - exact.d).abs() / 10.0
        };

        let coarse = error_at(200);
        let fine = error_at(400);
        assert!(fine < coarse, "refinement must not worsen the trajectory");
        assert!(coarse / fine > 1.5, "convergence slower than linear: {coarse} vs {fine}");
    }

    #[test]
    fn evolve_rejects_grazing_elevation() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = PolarState { theta: std::f64::consts::FRAC_PI_2, phi: 0.0, d: 10.0, v: 5.0 };
        assert!(evolve_state(&s, 1e-3, None, &mut rng).is_err());
    }

    #[test]
    fn evolution_noise_perturbs_every_component() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let s = PolarState { theta: -0.5, phi: 0.3, d: 30.0, v: 10.0 };
        let noise = EvolutionNoise { theta: 1e-3, phi: 1e-3, d: 0.4, v: 0.5 };
        let next = evolve_state(&s, 1e-3, Some(&noise), &mut rng).unwrap();
        let clean = evolve_state(&s, 1e-3, None, &mut rng).unwrap();
        assert!(next.theta != clean.theta);
        assert!(next.phi != clean.phi);
        assert!(next.d != clean.d);
        assert!(next.v != clean.v);
    }

    #[test]
    fn scatterer_grid_is_cell_centered_and_inside_footprint() {
        let w = test_world();
        assert_eq!(w.scatterer_offsets.len(), 6);
        let expect_dx = [-0.5, 0.5];
        let expect_dy = [-5.0 / 3.0, 0.0, 5.0 / 3.0];
        for (i, &(dx, dy)) in w.scatterer_offsets.iter().enumerate() {
            assert!((dx - expect_dx[i / 3]).abs() < 1e-12);
            assert!((dy - expect_dy[i % 3]).abs() < 1e-12);
            assert!(dx.abs() <= 1.0 && dy.abs() <= 2.5);
        }
    }

    #[test]
    fn scatterer_layout_below_resolution_is_rejected() {
        let err = WorldState::new(
            [0.0, 0.0, 8.0],
            [10.0, -38.0, 1.0],
            0.0,
            10.0,
            0.2, // 0.1 m pairwise x-separation < 0.375 m resolution
            5.0,
            2,
            3,
            0.375,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput { .. }));
    }
}
