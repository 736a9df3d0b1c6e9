//! Kinematic single-track (bicycle) vehicle model.
//!
//! The continuous model with slip angle `beta = atan(l_r / (l_f + l_r) * tan(delta))`
//! is discretized with one explicit Euler step:
//!
//! ```text
//! x'   = x   + dt * v * cos(phi + beta)
//! y'   = y   + dt * v * sin(phi + beta)
//! phi' = phi + dt * v / l_r * sin(beta)
//! v'   = v   + dt * a
//! ```

use std::fmt;

use crate::error::{Error, Result};

/// Pose and speed of one vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m).
    pub y: f64,
    /// Heading (rad).
    pub phi: f64,
    /// Speed (m/s).
    pub v: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, phi: f64, v: f64) -> Self {
        Self { x, y, phi, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.phi.is_finite() && self.v.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.phi, self.v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Acceleration and front steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Acceleration (m/s^2).
    pub a: f64,
    /// Front steering angle (rad).
    pub delta: f64,
}

impl ControlInput {
    pub const fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.delta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleGeometry {
    /// Center of mass to front axle (m).
    pub l_f: f64,
    /// Center of mass to rear axle (m).
    pub l_r: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("length", self.length),
            ("width", self.width),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "vehicle {name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn is_well_formed(&self) -> bool {
        self.min <= self.max
    }
}

/// Admissible state and input sets. The longitudinal position is unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateInputBounds {
    pub y: Interval,
    pub phi: Interval,
    pub v: Interval,
    pub a: Interval,
    pub delta: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundViolation {
    Lateral,
    Heading,
    Speed,
    Acceleration,
    Steering,
}

impl BoundViolation {
    pub fn id(&self) -> &'static str {
        match self {
            BoundViolation::Lateral => "lateral-bound",
            BoundViolation::Heading => "heading-bound",
            BoundViolation::Speed => "speed-bound",
            BoundViolation::Acceleration => "acceleration-bound",
            BoundViolation::Steering => "steering-bound",
        }
    }
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[inline]
fn slip_angle(delta: f64, geom: &VehicleGeometry) -> f64 {
    (geom.l_r / (geom.l_f + geom.l_r) * delta.tan()).atan()
}

/// Advance one Euler step of length `dt`.
pub fn step(
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
    geom: &VehicleGeometry,
) -> Result<VehicleState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!(
            "dt must be finite and > 0, got {dt}"
        )));
    }
    if !state.is_finite() || !input.is_finite() {
        return Err(Error::invalid("non-finite state or input"));
    }
    Ok(advance(state, input, dt, geom))
}

/// Unchecked Euler step used inside solver loops.
#[inline]
pub(crate) fn advance(
    s: &VehicleState,
    u: &ControlInput,
    dt: f64,
    geom: &VehicleGeometry,
) -> VehicleState {
    let beta = slip_angle(u.delta, geom);
    let heading = s.phi + beta;
    VehicleState {
        x: s.x + dt * s.v * heading.cos(),
        y: s.y + dt * s.v * heading.sin(),
        phi: s.phi + dt * (s.v / geom.l_r) * beta.sin(),
        v: s.v + dt * u.a,
    }
}

/// Partial derivatives of [`advance`]: `(d next / d state, d next / d input)`,
/// row-major with rows ordered `[x, y, phi, v]`.
pub(crate) fn advance_jacobians(
    s: &VehicleState,
    u: &ControlInput,
    dt: f64,
    geom: &VehicleGeometry,
) -> ([[f64; 4]; 4], [[f64; 2]; 4]) {
    let k = geom.l_r / (geom.l_f + geom.l_r);
    let tan_d = u.delta.tan();
    let beta = (k * tan_d).atan();
    let dbeta = k * (1.0 + tan_d * tan_d) / (1.0 + k * k * tan_d * tan_d);
    let (sh, ch) = (s.phi + beta).sin_cos();
    let (sb, cb) = beta.sin_cos();

    let a = [
        [1.0, 0.0, -dt * s.v * sh, dt * ch],
        [0.0, 1.0, dt * s.v * ch, dt * sh],
        [0.0, 0.0, 1.0, dt * sb / geom.l_r],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let b = [
        [0.0, -dt * s.v * sh * dbeta],
        [0.0, dt * s.v * ch * dbeta],
        [0.0, dt * (s.v / geom.l_r) * cb * dbeta],
        [dt, 0.0],
    ];
    (a, b)
}

/// Bounds violated by `state`/`input`; empty when both are admissible.
pub fn check_admissible(
    state: &VehicleState,
    input: &ControlInput,
    bounds: &StateInputBounds,
) -> Vec<BoundViolation> {
    let checks = [
        (bounds.y.contains(state.y), BoundViolation::Lateral),
        (bounds.phi.contains(state.phi), BoundViolation::Heading),
        (bounds.v.contains(state.v), BoundViolation::Speed),
        (bounds.a.contains(input.a), BoundViolation::Acceleration),
        (bounds.delta.contains(input.delta), BoundViolation::Steering),
    ];
    checks
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, v)| v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEOM: VehicleGeometry = VehicleGeometry {
        l_f: 2.0,
        l_r: 2.0,
        length: 5.0,
        width: 2.0,
    };

    fn scenario_bounds() -> StateInputBounds {
        StateInputBounds {
            y: Interval::new(2.0, 13.75),
            phi: Interval::new(-0.05, 0.05),
            v: Interval::new(0.0, 70.0),
            a: Interval::new(-9.0, 6.0),
            delta: Interval::new(-0.05, 0.05),
        }
    }

    /// Continuous model integrated with many small Euler substeps.
    fn fine_oracle(s: VehicleState, u: ControlInput, dt: f64, substeps: usize) -> VehicleState {
        let h = dt / substeps as f64;
        let mut cur = s;
        for _ in 0..substeps {
            let beta = (GEOM.l_r / (GEOM.l_f + GEOM.l_r) * u.delta.tan()).atan();
            cur = VehicleState {
                x: cur.x + h * cur.v * (cur.phi + beta).cos(),
                y: cur.y + h * cur.v * (cur.phi + beta).sin(),
                phi: cur.phi + h * cur.v / GEOM.l_r * beta.sin(),
                v: cur.v + h * u.a,
            };
        }
        cur
    }

    #[test]
    fn straight_coast() {
        let s = step(
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            &ControlInput::new(0.0, 0.0),
            0.2,
            &GEOM,
        )
        .unwrap();
        assert_eq!(s, VehicleState::new(2.0, 0.0, 0.0, 10.0));
    }

    #[test]
    fn euler_uses_current_speed_for_position() {
        let s = step(
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            &ControlInput::new(1.0, 0.0),
            0.2,
            &GEOM,
        )
        .unwrap();
        assert_eq!(s.x, 2.0);
        assert_eq!(s.y, 0.0);
        assert!((s.v - 10.2).abs() < 1e-12);
    }

    #[test]
    fn heading_change_matches_fine_integration() {
        let s0 = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let u = ControlInput::new(0.0, 0.05);
        let s = step(&s0, &u, 0.2, &GEOM).unwrap();
        let oracle = fine_oracle(s0, u, 0.2, 1000);
        assert!((s.phi - 0.0250).abs() < 1e-4, "dphi = {}", s.phi);
        assert!((s.phi - oracle.phi).abs() < 1e-3);
    }

    #[test]
    fn rejects_non_finite() {
        let bad = VehicleState::new(f64::NAN, 0.0, 0.0, 1.0);
        assert!(matches!(
            step(&bad, &ControlInput::default(), 0.2, &GEOM),
            Err(Error::InvalidArgument(_))
        ));
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        assert!(step(&s, &ControlInput::new(f64::INFINITY, 0.0), 0.2, &GEOM).is_err());
        assert!(step(&s, &ControlInput::default(), 0.0, &GEOM).is_err());
    }

    #[test]
    fn admissibility() {
        let b = scenario_bounds();
        let ok = VehicleState::new(80.0, 2.625, 0.0, 25.0);
        assert!(check_admissible(&ok, &ControlInput::default(), &b).is_empty());

        let fast = VehicleState { v: 71.0, ..ok };
        assert_eq!(
            check_admissible(&fast, &ControlInput::default(), &b),
            vec![BoundViolation::Speed]
        );
        assert_eq!(
            check_admissible(&ok, &ControlInput::new(0.0, -0.06), &b),
            vec![BoundViolation::Steering]
        );
        assert_eq!(BoundViolation::Steering.to_string(), "steering-bound");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let s = VehicleState::new(10.0, 3.0, 0.03, 24.0);
        let u = ControlInput::new(0.7, -0.02);
        let (a, b) = advance_jacobians(&s, &u, 0.2, &GEOM);
        let h = 1e-6;
        for col in 0..4 {
            let mut p = s.to_array();
            let mut m = s.to_array();
            p[col] += h;
            m[col] -= h;
            let fp = advance(&VehicleState::from_array(p), &u, 0.2, &GEOM).to_array();
            let fm = advance(&VehicleState::from_array(m), &u, 0.2, &GEOM).to_array();
            for row in 0..4 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert!((fd - a[row][col]).abs() < 1e-7, "A[{row}][{col}]");
            }
        }
        for col in 0..2 {
            let mut up = [u.a, u.delta];
            let mut um = [u.a, u.delta];
            up[col] += h;
            um[col] -= h;
            let fp = advance(&s, &ControlInput::new(up[0], up[1]), 0.2, &GEOM).to_array();
            let fm = advance(&s, &ControlInput::new(um[0], um[1]), 0.2, &GEOM).to_array();
            for row in 0..4 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert!((fd - b[row][col]).abs() < 1e-6, "B[{row}][{col}]");
            }
        }
    }

    #[test]
    fn single_step_error_reaches_decimeters_at_bound_corners() {
        // One 0.2 s Euler step is not within 1e-2 m of the continuous model
        // everywhere in the admissible set; the a * dt^2 / 2 term alone is 0.12 m here.
        let s0 = VehicleState::new(0.0, 5.0, 0.0, 70.0);
        let u = ControlInput::new(6.0, 0.05);
        let e = step(&s0, &u, 0.2, &GEOM).unwrap();
        let o = fine_oracle(s0, u, 0.2, 1000);
        let err = ((e.x - o.x).powi(2) + (e.y - o.y).powi(2)).sqrt();
        assert!(err > 0.1, "err = {err}");

        // At the nominal lane-change operating point it is centimeter level.
        let s0 = VehicleState::new(0.0, 5.0, 0.05, 25.0);
        let u = ControlInput::new(0.5, 0.0);
        let e = step(&s0, &u, 0.2, &GEOM).unwrap();
        let o = fine_oracle(s0, u, 0.2, 1000);
        let err = ((e.x - o.x).powi(2) + (e.y - o.y).powi(2)).sqrt();
        assert!(err < 1e-2, "err = {err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coasting_preserves_speed_and_heading(
                x in -1e3..1e3f64, y in -20.0..20.0f64, phi in -0.05..0.05f64,
                v in 0.0..70.0f64, dt in 0.01..1.0f64,
            ) {
                let s = VehicleState::new(x, y, phi, v);
                let n = step(&s, &ControlInput::default(), dt, &GEOM).unwrap();
                prop_assert_eq!(n.v, v);
                prop_assert_eq!(n.phi, phi);
                prop_assert!((n.x - (x + dt * v * phi.cos())).abs() < 1e-9);
                prop_assert!((n.y - (y + dt * v * phi.sin())).abs() < 1e-9);
            }

            #[test]
            fn deterministic(
                phi in -0.05..0.05f64, v in 0.0..70.0f64,
                a in -9.0..6.0f64, d in -0.05..0.05f64,
            ) {
                let s = VehicleState::new(1.0, 2.0, phi, v);
                let u = ControlInput::new(a, d);
                let n1 = step(&s, &u, 0.2, &GEOM).unwrap();
                let n2 = step(&s, &u, 0.2, &GEOM).unwrap();
                prop_assert_eq!(n1.to_array().map(f64::to_bits), n2.to_array().map(f64::to_bits));
            }

            #[test]
            fn euler_position_error_within_truncation_bound(
                phi in -0.05..0.05f64, v in 0.0..70.0f64,
                a in -9.0..6.0f64, d in -0.05..0.05f64,
            ) {
                let dt = 0.2;
                let s = VehicleState::new(0.0, 5.0, phi, v);
                let u = ControlInput::new(a, d);
                let e = step(&s, &u, dt, &GEOM).unwrap();
                let o = fine_oracle(s, u, dt, 1000);
                let err = ((e.x - o.x).powi(2) + (e.y - o.y).powi(2)).sqrt();
                // |r''| <= |a| + v * |phi'| with v bounded over the step.
                let beta = slip_angle(d, &GEOM);
                let v_max = v + a.abs() * dt;
                let bound = 0.5 * dt * dt * (a.abs() + v_max * v_max * beta.sin().abs() / GEOM.l_r);
                prop_assert!(err <= bound * (1.0 + 1e-6) + 1e-9, "err = {}, bound = {}", err, bound);
                if a == 0.0 && d == 0.0 {
                    prop_assert!(err < 1e-9);
                }
            }
        }
    }
}
