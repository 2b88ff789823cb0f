//! Vehicle kinematics and actuator-noise quantization.
//!
//! The vehicle is a unicycle with unit forward speed: `x' = cos θ`,
//! `y' = sin θ`, `θ' = w`, where the applied angular velocity `w = u + ε`
//! (commanded control plus actuator noise) is constant over each stage of
//! duration `Δt`. Stages are propagated in closed form (circular arc or
//! straight segment); no numeric integration is used outside of test oracles.

use crate::geometry::Point2;
use std::f64::consts::TAU;
use thiserror::Error;

/// Applied controls with |w| below this are propagated as straight lines to
/// avoid catastrophic cancellation in the arc formulas.
pub const STRAIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{name} must be positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be at least 1")]
    ZeroCount { name: &'static str },
    #[error("noise value {value} lies outside the support [-{eps_max}, {eps_max}]")]
    NoiseOutOfRange { value: f64, eps_max: f64 },
}

/// Vehicle configuration `[x, y, θ]` with the heading normalized into `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Normalize an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can round up to TAU for tiny negative inputs
    if t >= TAU { 0.0 } else { t }
}

/// Minimum-turn-radius vehicle with its stage duration and the three-input
/// control set `{-1/ρ, 0, +1/ρ}`. Forward speed is normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    rho: f64,
    dt: f64,
    controls: Vec<f64>,
}

impl VehicleParams {
    pub fn new(rho: f64, dt: f64) -> Result<Self, DynamicsError> {
        if !(rho > 0.0) {
            return Err(DynamicsError::NonPositive { name: "rho", value: rho });
        }
        if !(dt > 0.0) {
            return Err(DynamicsError::NonPositive { name: "dt", value: dt });
        }
        Ok(Self { rho, dt, controls: vec![-1.0 / rho, 0.0, 1.0 / rho] })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The control set, ordered `-1/ρ, 0, +1/ρ`. Action indices throughout the
    /// crate refer to positions in this slice.
    pub fn controls(&self) -> &[f64] {
        &self.controls
    }
}

/// Even partition of the noise support `[-ε_max, ε_max]` into `n` closed bins
/// with midpoint representatives; each bin carries probability mass `1/n`
/// under the uniform noise distribution.
///
/// Bin edges and midpoints are computed as `ε_max · k / n` with small integer
/// `k`, which keeps shared edges bitwise identical and lands midpoints on the
/// exact decimal values for round parameter choices.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePartition {
    eps_max: f64,
    n: usize,
    edges: Vec<f64>,
    mids: Vec<f64>,
}

impl NoisePartition {
    pub fn new(eps_max: f64, n: usize) -> Result<Self, DynamicsError> {
        if !(eps_max > 0.0) {
            return Err(DynamicsError::NonPositive { name: "eps_max", value: eps_max });
        }
        if n == 0 {
            return Err(DynamicsError::ZeroCount { name: "n" });
        }
        let nf = n as f64;
        let edges = (0..=n)
            .map(|i| {
                if i == 0 {
                    -eps_max
                } else if i == n {
                    eps_max
                } else {
                    eps_max * (2.0 * i as f64 - nf) / nf
                }
            })
            .collect();
        let mids = (0..n).map(|i| eps_max * (2.0 * i as f64 + 1.0 - nf) / nf).collect();
        Ok(Self { eps_max, n, edges, mids })
    }

    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Probability mass of every bin: exactly `1/n`.
    pub fn mass(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Measurement resolution `Δε = 2 ε_max / n`.
    pub fn delta(&self) -> f64 {
        2.0 * self.eps_max / self.n as f64
    }

    /// Lower endpoint of bin `i` (0-based).
    pub fn lower(&self, i: usize) -> f64 {
        self.edges[i]
    }

    /// Upper endpoint of bin `i` (0-based).
    pub fn upper(&self, i: usize) -> f64 {
        self.edges[i + 1]
    }

    /// Midpoint representative of bin `i` (0-based).
    pub fn mid(&self, i: usize) -> f64 {
        self.mids[i]
    }

    /// All midpoint representatives, in bin order.
    pub fn mids(&self) -> &[f64] {
        &self.mids
    }

    /// Index of the bin containing `eps`. Shared endpoints resolve to the
    /// lower-index bin; values outside the support are rejected.
    pub fn bin_of(&self, eps: f64) -> Result<usize, DynamicsError> {
        if !(eps >= self.edges[0] && eps <= self.edges[self.n]) {
            return Err(DynamicsError::NoiseOutOfRange { value: eps, eps_max: self.eps_max });
        }
        let uppers = &self.edges[1..];
        let i = uppers.partition_point(|&u| u < eps);
        Ok(i.min(self.n - 1))
    }
}

/// One stage of motion: constant applied control `w` from `start` over
/// `duration` seconds. A circular arc of radius `1/|w|` when `w ≠ 0`, a
/// straight segment otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTrajectory {
    pub start: Pose,
    pub w: f64,
    pub duration: f64,
    pub end: Pose,
}

impl StageTrajectory {
    pub fn new(start: Pose, w: f64, duration: f64) -> Self {
        Self { start, w, duration, end: propagate(start, w, duration) }
    }

    /// Pose at elapsed time `t ∈ [0, duration]` along this stage.
    pub fn pose_at(&self, t: f64) -> Pose {
        propagate(self.start, self.w, t)
    }
}

/// Exact propagation of the unit-speed unicycle under constant applied
/// control `w` for `tau` seconds.
pub fn propagate(q: Pose, w: f64, tau: f64) -> Pose {
    debug_assert!(tau >= 0.0);
    if w.abs() < STRAIGHT_TOL {
        Pose::new(q.x + tau * q.theta.cos(), q.y + tau * q.theta.sin(), q.theta + w * tau)
    } else {
        let th = q.theta + w * tau;
        Pose::new(
            q.x + (th.sin() - q.theta.sin()) / w,
            q.y - (th.cos() - q.theta.cos()) / w,
            th,
        )
    }
}

/// The quantized system's response to commanding `u` from `q`: one stage
/// trajectory per noise representative, each with probability `1/n`.
pub fn quantized_successors(
    q: Pose,
    u: f64,
    part: &NoisePartition,
    dt: f64,
) -> Vec<(StageTrajectory, f64)> {
    part.mids()
        .iter()
        .map(|&eps| (StageTrajectory::new(q, u + eps, dt), part.mass()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn straight_stage() {
        let q = propagate(Pose::new(0.0, 0.0, 0.0), 0.0, 1.2);
        assert_eq!(q, Pose::new(1.2, 0.0, 0.0));
    }

    #[test]
    fn half_circle_by_symmetry() {
        // w = pi/3 for 3 s turns through pi: a half-circle of radius 3/pi.
        let q = propagate(Pose::new(0.0, 0.0, 0.0), PI / 3.0, 3.0);
        assert!(q.x.abs() < 1e-12);
        assert!((q.y - 6.0 / PI).abs() < 1e-12);
        assert!((q.theta - PI).abs() < 1e-12);
    }

    #[test]
    fn matches_frozen_integration_oracle() {
        // Endpoint computed with a 4th-order integrator at step 1e-4 for
        // start (0.3, -0.7, 1.1), w = pi/3 + 0.04, tau = 1.2.
        let q = propagate(Pose::new(0.3, -0.7, 1.1), PI / 3.0 + 0.04, 1.2);
        assert!((q.x - 0.09840759484521193).abs() < 1e-9);
        assert!((q.y - 0.3983413831856584).abs() < 1e-9);
        assert!((q.theta - 2.40463706143586).abs() < 1e-9);
    }

    #[test]
    fn partition_reproduces_case_study_values() {
        let part = NoisePartition::new(0.06, 3).unwrap();
        assert_eq!(part.delta(), 0.04);
        assert_eq!(part.mids(), &[-0.04, 0.0, 0.04]);
        assert_eq!(
            (0..=3).map(|i| part.edges[i]).collect::<Vec<_>>(),
            vec![-0.06, -0.02, 0.02, 0.06]
        );
        assert_eq!(part.mass(), 1.0 / 3.0);
        // mass accumulates back to 1 exactly as n * (1/n)
        assert_eq!(part.mass() * 3.0, 1.0);
    }

    #[test]
    fn single_bin_partition() {
        let part = NoisePartition::new(0.1, 1).unwrap();
        assert_eq!(part.lower(0), -0.1);
        assert_eq!(part.upper(0), 0.1);
        assert_eq!(part.mids(), &[0.0]);
        assert_eq!(part.mass(), 1.0);
    }

    #[test]
    fn partition_rejects_bad_inputs() {
        assert!(NoisePartition::new(0.0, 3).is_err());
        assert!(NoisePartition::new(-0.1, 3).is_err());
        assert!(NoisePartition::new(0.06, 0).is_err());
    }

    #[test]
    fn bin_lookup() {
        let part = NoisePartition::new(0.06, 3).unwrap();
        assert_eq!(part.bin_of(-0.05).unwrap(), 0);
        // shared endpoint resolves to the lower-index bin
        assert_eq!(part.bin_of(-0.02).unwrap(), 0);
        assert_eq!(part.bin_of(0.02).unwrap(), 1);
        assert_eq!(part.bin_of(0.06).unwrap(), 2);
        assert_eq!(part.bin_of(-0.06).unwrap(), 0);
        assert!(part.bin_of(0.0601).is_err());
        assert!(part.bin_of(-0.0601).is_err());
    }

    #[test]
    fn quantized_successor_set() {
        let part = NoisePartition::new(0.06, 3).unwrap();
        let succ = quantized_successors(Pose::new(0.0, 0.0, 0.0), 0.0, &part, 1.2);
        assert_eq!(succ.len(), 3);
        let ws: Vec<f64> = succ.iter().map(|(t, _)| t.w).collect();
        assert_eq!(ws, vec![-0.04, 0.0, 0.04]);
        for (_, p) in &succ {
            assert_eq!(*p, 1.0 / 3.0);
        }

        let u = PI / 3.0;
        let succ = quantized_successors(Pose::new(0.0, 0.0, 0.0), u, &part, 1.2);
        let ws: Vec<f64> = succ.iter().map(|(t, _)| t.w).collect();
        assert_eq!(ws, vec![u - 0.04, u, u + 0.04]);

        let single = NoisePartition::new(1e-9, 1).unwrap();
        let succ = quantized_successors(Pose::new(0.0, 0.0, 0.0), u, &single, 1.2);
        assert_eq!(succ.len(), 1);
        assert_eq!(succ[0].0.w, u);
        assert_eq!(succ[0].1, 1.0);
    }

    #[test]
    fn vehicle_params_control_order() {
        let params = VehicleParams::new(3.0 / PI, 1.2).unwrap();
        let u = params.controls();
        assert_eq!(u.len(), 3);
        assert!((u[0] + PI / 3.0).abs() < 1e-15);
        assert_eq!(u[1], 0.0);
        assert!((u[2] - PI / 3.0).abs() < 1e-15);
        assert!(VehicleParams::new(0.0, 1.2).is_err());
        assert!(VehicleParams::new(1.0, 0.0).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose::new(x, y, t))
    }

    proptest! {
        #[test]
        fn heading_stays_normalized(q in arb_pose(), w in -1.2..1.2f64, tau in 0.0..3.0f64) {
            let out = propagate(q, w, tau);
            prop_assert!(out.theta >= 0.0 && out.theta < TAU);
        }

        #[test]
        fn semigroup(q in arb_pose(), w in -1.2..1.2f64, a in 0.0..2.0f64, b in 0.0..2.0f64) {
            let two = propagate(propagate(q, w, a), w, b);
            let one = propagate(q, w, a + b);
            prop_assert!((two.x - one.x).abs() < 1e-12);
            prop_assert!((two.y - one.y).abs() < 1e-12);
            let dth = (two.theta - one.theta).abs();
            prop_assert!(dth < 1e-12 || (dth - TAU).abs() < 1e-12);
        }

        #[test]
        fn unit_speed_chord_length(q in arb_pose(), w in -1.2..1.2f64, tau in 0.01..3.0f64) {
            let out = propagate(q, w, tau);
            let chord = q.position().dist(out.position());
            if w.abs() < STRAIGHT_TOL {
                prop_assert!((chord - tau).abs() < 1e-9);
            } else {
                let expect = (2.0 * (w * tau / 2.0).sin() / w).abs();
                prop_assert!((chord - expect).abs() < 1e-9);
                prop_assert!(chord <= tau + 1e-12);
            }
        }

        #[test]
        fn rotational_equivariance(q in arb_pose(), w in -1.2..1.2f64, tau in 0.0..3.0f64, alpha in -3.0..3.0f64) {
            let base = propagate(q, w, tau);
            let rotated = propagate(Pose::new(q.x, q.y, q.theta + alpha), w, tau);
            // endpoint rotates by alpha about the start position
            let (dx, dy) = (base.x - q.x, base.y - q.y);
            let ex = q.x + dx * alpha.cos() - dy * alpha.sin();
            let ey = q.y + dx * alpha.sin() + dy * alpha.cos();
            prop_assert!((rotated.x - ex).abs() < 1e-9);
            prop_assert!((rotated.y - ey).abs() < 1e-9);
            let dth = normalize_angle(rotated.theta - base.theta - alpha);
            prop_assert!(dth < 1e-9 || TAU - dth < 1e-9);
        }

        #[test]
        fn bins_tile_support(eps_max in 0.001..1.0f64, n in 1usize..12) {
            let part = NoisePartition::new(eps_max, n).unwrap();
            prop_assert_eq!(part.lower(0), -eps_max);
            prop_assert_eq!(part.upper(n - 1), eps_max);
            for i in 1..n {
                // adjacent bins share the edge value bitwise
                prop_assert_eq!(part.upper(i - 1), part.lower(i));
            }
            for i in 0..n {
                let mid = part.mid(i);
                prop_assert!((mid - 0.5 * (part.lower(i) + part.upper(i))).abs() < 1e-15);
                prop_assert_eq!(part.bin_of(mid).unwrap(), i);
            }
        }
    }
}
