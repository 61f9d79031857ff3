//! Discrete-time kinematic bicycle model.
//!
//! Shared motion substrate for ego rollouts and all simulated vehicles. All
//! operations are pure functions over value types and safe to evaluate
//! concurrently across MPPI samples.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pose and speed of one vehicle at one time step: `[x, y, psi, v]`.
///
/// Heading is *not* wrapped to `(-pi, pi]`; merge headings stay near zero and
/// the lateral cost terms rely on continuity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m).
    pub y: f64,
    /// Heading (rad), unwrapped.
    pub psi: f64,
    /// Speed (m/s), non-negative after every simulator step.
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        Self { x, y, psi, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite() && self.v.is_finite()
    }

    /// Euclidean distance between vehicle centers.
    pub fn distance_to(&self, other: &VehicleState) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Control input `[delta, a]`: steering angle (rad) and acceleration (m/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta: f64,
    pub a: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { delta: 0.0, a: 0.0 };

    pub fn new(delta: f64, a: f64) -> Self {
        Self { delta, a }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.a.is_finite()
    }
}

/// Axle offsets and bounding box of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    /// Center-to-front-axle distance (m).
    pub l_f: f64,
    /// Center-to-rear-axle distance (m).
    pub l_r: f64,
    /// Overall length (m); at least `l_f + l_r`.
    pub length: f64,
    /// Overall width (m).
    pub width: f64,
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_f > 0.0 && self.l_r > 0.0 && self.length > 0.0 && self.width > 0.0) {
            return Err(Error::config("vehicle geometry fields must be positive"));
        }
        if self.length < self.l_f + self.l_r {
            return Err(Error::config("vehicle length must cover both axle offsets"));
        }
        Ok(())
    }
}

impl Default for VehicleGeometry {
    /// Compact low-speed vehicle. The published control bounds cap curvature
    /// at tan(delta_max) over the wheelbase; at the scenario's 2.5 m/s
    /// reference speed a short wheelbase is what makes a lane change fit the
    /// planning horizon.
    fn default() -> Self {
        Self {
            l_f: 0.7,
            l_r: 0.7,
            length: 2.5,
            width: 1.2,
        }
    }
}

/// Box constraints on the control input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    /// `(min, max)` steering angle (rad).
    pub steer: (f64, f64),
    /// `(min, max)` acceleration (m/s^2).
    pub accel: (f64, f64),
}

impl ControlBounds {
    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            delta: u.delta.clamp(self.steer.0, self.steer.1),
            a: u.a.clamp(self.accel.0, self.accel.1),
        }
    }

    pub fn contains(&self, u: ControlInput) -> bool {
        u.delta >= self.steer.0
            && u.delta <= self.steer.1
            && u.a >= self.accel.0
            && u.a <= self.accel.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.steer.0 > self.steer.1 || self.accel.0 > self.accel.1 {
            return Err(Error::config("control bounds must satisfy min <= max"));
        }
        Ok(())
    }
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            steer: (-0.1, 0.1),
            accel: (-0.5, 0.5),
        }
    }
}

/// Slip angle `beta = atan(l_r / (l_f + l_r) * tan(delta))`.
pub fn slip_angle(delta: f64, geom: &VehicleGeometry) -> f64 {
    (geom.l_r / (geom.l_f + geom.l_r) * delta.tan()).atan()
}

/// Advance one vehicle one step with the kinematic bicycle model.
///
/// Speed is clamped at zero from below: vehicles in this scenario do not
/// reverse. The caller is expected to have clamped `control` to its bounds.
pub fn step(
    state: &VehicleState,
    control: &ControlInput,
    geom: &VehicleGeometry,
    dt: f64,
) -> Result<VehicleState> {
    if !state.is_finite() || !control.is_finite() {
        return Err(Error::invalid_input("non-finite state or control"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid_input("dt must be positive"));
    }
    let beta = slip_angle(control.delta, geom);
    let (sin_pb, cos_pb) = (state.psi + beta).sin_cos();
    Ok(VehicleState {
        x: state.x + state.v * cos_pb * dt,
        y: state.y + state.v * sin_pb * dt,
        psi: state.psi + state.v / geom.l_r * beta.sin() * dt,
        v: (state.v + control.a * dt).max(0.0),
    })
}

/// Roll out a control sequence from an initial state.
///
/// Element `k` of the result equals `step` applied `k + 1` times; the output
/// is bit-for-bit identical to composing single steps.
pub fn rollout(
    initial: &VehicleState,
    controls: &[ControlInput],
    geom: &VehicleGeometry,
    dt: f64,
) -> Result<Vec<VehicleState>> {
    if controls.is_empty() {
        return Err(Error::invalid_input("rollout needs at least one control"));
    }
    let mut states = Vec::with_capacity(controls.len());
    let mut current = *initial;
    for u in controls {
        current = step(&current, u, geom, dt)?;
        states.push(current);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_axle_geom() -> VehicleGeometry {
        VehicleGeometry {
            l_f: 1.0,
            l_r: 1.0,
            length: 4.5,
            width: 1.8,
        }
    }

    /// Independent scalar transcription of the five bicycle equations, kept
    /// structurally separate from the implementation path it checks.
    fn step_oracle(s: [f64; 4], u: [f64; 2], l_f: f64, l_r: f64, dt: f64) -> [f64; 4] {
        let beta = (l_r / (l_f + l_r) * u[0].tan()).atan();
        [
            s[0] + s[3] * (s[2] + beta).cos() * dt,
            s[1] + s[3] * (s[2] + beta).sin() * dt,
            s[2] + s[3] / l_r * beta.sin() * dt,
            (s[3] + u[1] * dt).max(0.0),
        ]
    }

    #[test]
    fn rest_stays_at_rest() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let next = step(&s, &ControlInput::ZERO, &unit_axle_geom(), 0.3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn straight_coasting() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let next = step(&s, &ControlInput::ZERO, &unit_axle_geom(), 0.3).unwrap();
        assert_eq!(next, VehicleState::new(0.3, 0.0, 0.0, 1.0));
    }

    #[test]
    fn curved_step_matches_scalar_oracle() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 2.0);
        let u = ControlInput::new(0.1, 0.5);
        let next = step(&s, &u, &unit_axle_geom(), 0.3).unwrap();
        let expect = step_oracle([0.0, 0.0, 0.0, 2.0], [0.1, 0.5], 1.0, 1.0, 0.3);
        assert!((next.x - expect[0]).abs() < 1e-15);
        assert!((next.y - expect[1]).abs() < 1e-15);
        assert!((next.psi - expect[2]).abs() < 1e-15);
        assert!((next.v - expect[3]).abs() < 1e-15);
        // frozen values from an independent evaluation of the same equations
        assert!((next.x - 0.59925).abs() < 1e-5);
        assert!((next.y - 0.030063).abs() < 1e-6);
        assert!((next.psi - 0.030063).abs() < 1e-6);
        assert!((next.v - 2.15).abs() < 1e-12);
    }

    #[test]
    fn randomized_steps_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let geom = VehicleGeometry::default();
        for _ in 0..1000 {
            let s = VehicleState::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..10.0),
            );
            let u = ControlInput::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.5..0.5));
            let got = step(&s, &u, &geom, 0.3).unwrap();
            let want = step_oracle([s.x, s.y, s.psi, s.v], [u.delta, u.a], geom.l_f, geom.l_r, 0.3);
            for (g, w) in [got.x, got.y, got.psi, got.v].iter().zip(want.iter()) {
                let denom = w.abs().max(1.0);
                assert!((g - w).abs() / denom < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let geom = unit_axle_geom();
        let bad = VehicleState::new(f64::NAN, 0.0, 0.0, 1.0);
        assert!(matches!(
            step(&bad, &ControlInput::ZERO, &geom, 0.3),
            Err(Error::InvalidInput(_))
        ));
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let bad_u = ControlInput::new(f64::INFINITY, 0.0);
        assert!(step(&s, &bad_u, &geom, 0.3).is_err());
    }

    #[test]
    fn zero_rollout_stays_at_origin() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let controls = vec![ControlInput::ZERO; 17];
        let traj = rollout(&s, &controls, &unit_axle_geom(), 0.3).unwrap();
        assert_eq!(traj.len(), 17);
        for st in traj {
            assert_eq!(st, s);
        }
    }

    #[test]
    fn coasting_rollout_advances_linearly() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let controls = vec![ControlInput::ZERO; 3];
        let traj = rollout(&s, &controls, &unit_axle_geom(), 0.3).unwrap();
        for (k, t) in traj.iter().enumerate() {
            assert!((t.x - 0.3 * (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_rollout_is_invalid() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        assert!(rollout(&s, &[], &unit_axle_geom(), 0.3).is_err());
    }

    proptest! {
        #[test]
        fn rollout_equals_composed_steps(
            x in -100.0..100.0f64,
            v in 0.0..15.0f64,
            psi in -1.0..1.0f64,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let geom = VehicleGeometry::default();
            let initial = VehicleState::new(x, 0.0, psi, v);
            let controls: Vec<ControlInput> = (0..17)
                .map(|_| ControlInput::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.5..0.5)))
                .collect();
            let traj = rollout(&initial, &controls, &geom, 0.3).unwrap();
            let mut cur = initial;
            for (k, u) in controls.iter().enumerate() {
                cur = step(&cur, u, &geom, 0.3).unwrap();
                // bit-for-bit
                prop_assert_eq!(cur, traj[k]);
            }
        }

        #[test]
        fn zero_steer_keeps_lateral_state(
            v in 0.0..15.0f64,
            a in -0.5..0.5f64,
            y in -5.0..5.0f64,
        ) {
            let geom = VehicleGeometry::default();
            let initial = VehicleState::new(0.0, y, 0.0, v);
            let controls = vec![ControlInput::new(0.0, a); 20];
            let traj = rollout(&initial, &controls, &geom, 0.3).unwrap();
            for st in traj {
                prop_assert_eq!(st.y, y);
                prop_assert_eq!(st.psi, 0.0);
                prop_assert!(st.v >= 0.0);
            }
        }

        #[test]
        fn slip_angle_bounded_and_sign_matched(delta in -0.5..0.5f64) {
            let geom = VehicleGeometry::default();
            let beta = slip_angle(delta, &geom);
            prop_assert!(beta.abs() <= delta.tan().atan().abs() + 1e-15);
            if delta != 0.0 {
                prop_assert_eq!(beta.signum(), delta.signum());
            }
        }
    }
}
