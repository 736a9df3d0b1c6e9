//! Piecewise quintic trajectories parameterized by control points.
//!
//! Each segment is the unique quintic per axis that matches position, velocity
//! and acceleration at both of its knots, so adjacent segments sharing a
//! control point join with C2 continuity. Coefficients are stored in ascending
//! powers of the local time `u = t - t_j`.

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};

/// Position, velocity and acceleration along both axes at one knot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlPoint {
    pub rx: f64,
    pub vx: f64,
    pub ax: f64,
    pub ry: f64,
    pub vy: f64,
    pub ay: f64,
}

impl ControlPoint {
    pub fn to_array(self) -> [f64; 6] {
        [self.rx, self.vx, self.ax, self.ry, self.vy, self.ay]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            rx: a[0],
            vx: a[1],
            ax: a[2],
            ry: a[3],
            vy: a[4],
            ay: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Value of one axis for a derivative order (0 position, 1 velocity, 2 acceleration).
    pub fn axis(&self, order: usize) -> (f64, f64) {
        match order {
            0 => (self.rx, self.ry),
            1 => (self.vx, self.vy),
            _ => (self.ax, self.ay),
        }
    }
}

/// Quintic polynomial coefficients `c[0] + c[1] u + ... + c[5] u^5`.
pub type Quintic = [f64; 6];

/// Twelve coefficients of one 2D segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Segment {
    pub x: Quintic,
    pub y: Quintic,
}

impl Segment {
    #[inline]
    pub fn eval(&self, u: f64, order: usize) -> (f64, f64) {
        (poly_eval(&self.x, u, order), poly_eval(&self.y, u, order))
    }

    #[inline]
    pub fn eval_y(&self, u: f64) -> f64 {
        poly_eval(&self.y, u, 0)
    }
}

/// Evaluate the `order`-th derivative (0..=2) of a quintic at `u`.
#[inline]
pub fn poly_eval(c: &Quintic, u: f64, order: usize) -> f64 {
    match order {
        0 => c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5])))),
        1 => c[1] + u * (2.0 * c[2] + u * (3.0 * c[3] + u * (4.0 * c[4] + u * 5.0 * c[5]))),
        2 => 2.0 * c[2] + u * (6.0 * c[3] + u * (12.0 * c[4] + u * 20.0 * c[5])),
        _ => panic!("derivative order {order} not supported"),
    }
}

/// Closed-form quintic Hermite interpolant over an interval of length `h`.
#[inline]
pub fn hermite_quintic(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, h: f64) -> Quintic {
    let h2 = h * h;
    let h3 = h2 * h;
    let dp = p1 - p0;
    [
        p0,
        v0,
        0.5 * a0,
        (20.0 * dp - (8.0 * v1 + 12.0 * v0) * h - (3.0 * a0 - a1) * h2) / (2.0 * h3),
        (-30.0 * dp + (14.0 * v1 + 16.0 * v0) * h + (3.0 * a0 - 2.0 * a1) * h2) / (2.0 * h3 * h),
        (12.0 * dp - 6.0 * (v1 + v0) * h - (a0 - a1) * h2) / (2.0 * h3 * h2),
    ]
}

#[inline]
pub(crate) fn segment_between(c0: &ControlPoint, c1: &ControlPoint, h: f64) -> Segment {
    Segment {
        x: hermite_quintic(c0.rx, c0.vx, c0.ax, c1.rx, c1.vx, c1.ax, h),
        y: hermite_quintic(c0.ry, c0.vy, c0.ay, c1.ry, c1.vy, c1.ay, h),
    }
}

/// Coefficients of the segment joining `cj` at `tj` to `cj1` at `tj1`.
pub fn fit_segment(cj: &ControlPoint, cj1: &ControlPoint, tj: f64, tj1: f64) -> Result<Segment> {
    if !(tj.is_finite() && tj1.is_finite() && tj1 > tj) {
        return Err(Error::invalid(format!(
            "segment needs t_j < t_j+1, got [{tj}, {tj1}]"
        )));
    }
    Ok(segment_between(cj, cj1, tj1 - tj))
}

/// C2 piecewise quintic `r(t)` over `[t_0, t_S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTrajectory {
    knots: Vec<f64>,
    points: Vec<ControlPoint>,
    segments: Vec<Segment>,
}

impl SplineTrajectory {
    pub fn new(knots: Vec<f64>, points: Vec<ControlPoint>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a spline needs at least two knots"));
        }
        if knots.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} knots but {} control points",
                knots.len(),
                points.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "knot times must be finite and strictly increasing",
            ));
        }
        if let Some(i) = points.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("control point {i} is not finite")));
        }
        let segments = (0..knots.len() - 1)
            .map(|j| segment_between(&points[j], &points[j + 1], knots[j + 1] - knots[j]))
            .collect();
        Ok(Self {
            knots,
            points,
            segments,
        })
    }

    /// Uniform knots `t_0 + j * dt`.
    pub fn uniform(t0: f64, dt: f64, points: Vec<ControlPoint>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!(
                "knot spacing must be > 0, got {dt}"
            )));
        }
        let knots = (0..points.len()).map(|j| t0 + j as f64 * dt).collect();
        Self::new(knots, points)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_points(&self) -> &[ControlPoint] {
        &self.points
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Number of segments `S`.
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Index of the segment owning `t` (the right one at interior knots).
    pub fn segment_index(&self, t: f64) -> usize {
        self.view().segment_index(t)
    }

    /// Value (`order` 0), velocity (1) or acceleration (2) at `t`.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<(f64, f64)> {
        if order > 2 {
            return Err(Error::invalid(format!(
                "derivative order {order} not supported"
            )));
        }
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::OutOfDomain {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        Ok(self.eval_unchecked(t, order))
    }

    /// Like [`evaluate`](Self::evaluate) but clamps `t` into the domain.
    pub(crate) fn eval_unchecked(&self, t: f64, order: usize) -> (f64, f64) {
        self.view().eval(t, order)
    }

    pub(crate) fn view(&self) -> SplineView<'_> {
        SplineView {
            knots: &self.knots,
            points: &self.points,
            segments: &self.segments,
        }
    }

    /// Replace control points, keeping the knots.
    pub fn with_control_points(&self, points: Vec<ControlPoint>) -> Result<Self> {
        Self::new(self.knots.clone(), points)
    }

    /// Heading and speed recovered from velocity at every knot.
    pub fn knot_states(&self) -> Vec<VehicleState> {
        self.points
            .iter()
            .map(|c| VehicleState::new(c.rx, c.ry, c.vy.atan2(c.vx), c.vx.hypot(c.vy)))
            .collect()
    }
}

/// Borrowed knots, control points and segments; lets solvers evaluate
/// trajectories held in scratch buffers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SplineView<'a> {
    pub knots: &'a [f64],
    pub points: &'a [ControlPoint],
    pub segments: &'a [Segment],
}

impl SplineView<'_> {
    pub fn segment_index(&self, t: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= t);
        idx.saturating_sub(1).min(self.segments.len() - 1)
    }

    pub fn eval(&self, t: f64, order: usize) -> (f64, f64) {
        let j = self.segment_index(t);
        if t == self.knots[j] {
            return self.points[j].axis(order);
        }
        if t == self.knots[j + 1] {
            return self.points[j + 1].axis(order);
        }
        self.segments[j].eval(t - self.knots[j], order)
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }
}

/// Convert uniformly sampled vehicle states into a spline with one control
/// point per sample.
///
/// Velocities are the heading projections of the speed. Accelerations use the
/// central difference of speed projected on the heading; the first and last
/// samples use one-sided differences.
pub fn states_to_control_points(states: &[VehicleState], ts: f64) -> Result<SplineTrajectory> {
    if states.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 states, got {}",
            states.len()
        )));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::invalid(format!(
            "sampling time must be > 0, got {ts}"
        )));
    }
    let n = states.len();
    let points = states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let dv = if i == 0 {
                (states[1].v - states[0].v) / ts
            } else if i == n - 1 {
                (states[n - 1].v - states[n - 2].v) / ts
            } else {
                (states[i + 1].v - states[i - 1].v) / (2.0 * ts)
            };
            let (sin, cos) = s.phi.sin_cos();
            ControlPoint {
                rx: s.x,
                vx: s.v * cos,
                ax: dv * cos,
                ry: s.y,
                vy: s.v * sin,
                ay: dv * sin,
            }
        })
        .collect();
    SplineTrajectory::uniform(0.0, ts, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cp(r: f64, v: f64, a: f64) -> ControlPoint {
        ControlPoint {
            rx: r,
            vx: v,
            ax: a,
            ry: r,
            vy: v,
            ay: a,
        }
    }

    /// Generic dense solve of the 6x6 Hermite conditions.
    fn linear_system_oracle(
        p0: f64,
        v0: f64,
        a0: f64,
        p1: f64,
        v1: f64,
        a1: f64,
        h: f64,
    ) -> [f64; 6] {
        use nalgebra::{Matrix6, Vector6};
        let mut m = Matrix6::zeros();
        for k in 0..6 {
            let kf = k as f64;
            m[(0, k)] = if k == 0 { 1.0 } else { 0.0 };
            m[(1, k)] = if k == 1 { 1.0 } else { 0.0 };
            m[(2, k)] = if k == 2 { 2.0 } else { 0.0 };
            m[(3, k)] = h.powi(k as i32);
            m[(4, k)] = if k >= 1 {
                kf * h.powi(k as i32 - 1)
            } else {
                0.0
            };
            m[(5, k)] = if k >= 2 {
                kf * (kf - 1.0) * h.powi(k as i32 - 2)
            } else {
                0.0
            };
        }
        let rhs = Vector6::new(p0, v0, a0, p1, v1, a1);
        let sol = m.lu().solve(&rhs).expect("nonsingular");
        [sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]]
    }

    #[test]
    fn uniform_motion_is_linear() {
        let s = fit_segment(&cp(0.0, 1.0, 0.0), &cp(1.0, 1.0, 0.0), 0.0, 1.0).unwrap();
        for (i, c) in s.x.iter().enumerate() {
            let expect = if i == 1 { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-12);
        }
        assert!((s.eval(0.5, 0).0 - 0.5).abs() < 1e-12);
        assert!((s.eval(0.25, 1).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rest_to_rest_is_constant() {
        let s = fit_segment(&cp(5.0, 0.0, 0.0), &cp(5.0, 0.0, 0.0), 2.0, 2.2).unwrap();
        assert_eq!(s.x, [5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_degenerate_interval() {
        let c = cp(0.0, 0.0, 0.0);
        assert!(fit_segment(&c, &c, 1.0, 1.0).is_err());
        assert!(fit_segment(&c, &c, 1.0, 0.5).is_err());
    }

    #[test]
    fn evaluate_out_of_domain() {
        let traj = SplineTrajectory::uniform(0.0, 1.0, vec![cp(0.0, 1.0, 0.0), cp(1.0, 1.0, 0.0)])
            .unwrap();
        assert!(matches!(
            traj.evaluate(1.5, 0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            traj.evaluate(-0.1, 0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(traj.evaluate(f64::NAN, 0).is_err());
        assert!(traj.evaluate(0.5, 3).is_err());
        assert_eq!(traj.evaluate(0.25, 1).unwrap().0, 1.0);
    }

    #[test]
    fn conversion_examples() {
        let s = |v: f64, phi: f64, x: f64| VehicleState::new(x, 0.0, phi, v);
        let constant = [s(10.0, 0.0, 0.0), s(10.0, 0.0, 2.0), s(10.0, 0.0, 4.0)];
        let traj = states_to_control_points(&constant, 0.2).unwrap();
        for c in traj.control_points() {
            assert_eq!((c.vx, c.vy, c.ax, c.ay), (10.0, 0.0, 0.0, 0.0));
        }

        let accel = [s(10.0, 0.0, 0.0), s(10.2, 0.0, 2.0), s(10.4, 0.0, 4.04)];
        let traj = states_to_control_points(&accel, 0.2).unwrap();
        assert!((traj.control_points()[1].ax - 1.0).abs() < 1e-12);
        // one-sided at the ends
        assert!((traj.control_points()[0].ax - 1.0).abs() < 1e-12);
        assert!((traj.control_points()[2].ax - 1.0).abs() < 1e-12);

        let up = [
            s(10.0, std::f64::consts::FRAC_PI_2, 0.0),
            s(10.0, std::f64::consts::FRAC_PI_2, 0.0),
            s(10.0, std::f64::consts::FRAC_PI_2, 0.0),
        ];
        let c = states_to_control_points(&up, 0.2).unwrap().control_points()[0];
        assert!(c.vx.abs() < 1e-12);
        assert!((c.vy - 10.0).abs() < 1e-12);

        assert!(states_to_control_points(&constant[..2], 0.2).is_err());
    }

    fn arb_point() -> impl Strategy<Value = ControlPoint> {
        (
            -100.0..100.0f64,
            -30.0..30.0f64,
            -10.0..10.0f64,
            -10.0..10.0f64,
            -5.0..5.0f64,
            -5.0..5.0f64,
        )
            .prop_map(|(rx, vx, ax, ry, vy, ay)| ControlPoint {
                rx,
                vx,
                ax,
                ry,
                vy,
                ay,
            })
    }

    proptest! {
        #[test]
        fn closed_form_matches_linear_solve(
            a in arb_point(), b in arb_point(), h in 0.05..0.5f64,
        ) {
            let seg = fit_segment(&a, &b, 0.0, h).unwrap();
            let ox = linear_system_oracle(a.rx, a.vx, a.ax, b.rx, b.vx, b.ax, h);
            let oy = linear_system_oracle(a.ry, a.vy, a.ay, b.ry, b.vy, b.ay, h);
            for k in 0..6 {
                let sx = 1e-9 * ox[k].abs().max(1.0);
                let sy = 1e-9 * oy[k].abs().max(1.0);
                prop_assert!((seg.x[k] - ox[k]).abs() <= sx, "x coeff {}: {} vs {}", k, seg.x[k], ox[k]);
                prop_assert!((seg.y[k] - oy[k]).abs() <= sy, "y coeff {}", k);
            }
        }

        #[test]
        fn segment_matches_boundary_values(
            a in arb_point(), b in arb_point(), t0 in -5.0..5.0f64, h in 0.05..2.0f64,
        ) {
            let seg = fit_segment(&a, &b, t0, t0 + h).unwrap();
            for order in 0..3 {
                let (x0, y0) = seg.eval(0.0, order);
                let (x1, y1) = seg.eval(h, order);
                let (ex0, ey0) = a.axis(order);
                let (ex1, ey1) = b.axis(order);
                // Size of the boundary data in units of this derivative order.
                let scale = (0..3)
                    .flat_map(|m| {
                        let (pa, qa) = a.axis(m);
                        let (pb, qb) = b.axis(m);
                        [pa, qa, pb, qb].map(|v| v.abs() * h.powi(m as i32 - order as i32))
                    })
                    .fold(1.0, f64::max);
                for (got, want) in [(x0, ex0), (y0, ey0), (x1, ex1), (y1, ey1)] {
                    prop_assert!((got - want).abs() <= 1e-12 * scale,
                        "order {}: {} vs {}", order, got, want);
                }
            }
        }

        #[test]
        fn recovers_true_quintic(
            coeffs in proptest::array::uniform6(-3.0..3.0f64), h in 0.1..1.0f64,
        ) {
            let truth = |u: f64, order: usize| poly_eval(&coeffs, u, order);
            let a = cp(truth(0.0, 0), truth(0.0, 1), truth(0.0, 2));
            let b = cp(truth(h, 0), truth(h, 1), truth(h, 2));
            let seg = fit_segment(&a, &b, 0.0, h).unwrap();
            for i in 0..=20 {
                let u = h * i as f64 / 20.0;
                for order in 0..3 {
                    let want = truth(u, order);
                    let got = seg.eval(u, order).0;
                    prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
                }
            }
        }

        #[test]
        fn round_trip_knot_positions(
            ys in proptest::collection::vec(-5.0..15.0f64, 3..40),
            v in 0.0..40.0f64, ts in 0.05..0.5f64,
        ) {
            let states: Vec<_> = ys.iter().enumerate()
                .map(|(i, y)| VehicleState::new(80.0 + i as f64 * v * ts, *y, 0.01 * i as f64, v))
                .collect();
            let traj = states_to_control_points(&states, ts).unwrap();
            prop_assert_eq!(traj.segment_count(), states.len() - 1);
            for (j, s) in states.iter().enumerate() {
                let (x, y) = traj.evaluate(traj.knots()[j], 0).unwrap();
                prop_assert!((x - s.x).abs() <= 1e-12 && (y - s.y).abs() <= 1e-12);
            }
        }

        #[test]
        fn c2_continuity_at_interior_knots(
            pts in proptest::collection::vec(arb_point(), 3..20), ts in 0.05..0.5f64,
        ) {
            let traj = SplineTrajectory::uniform(0.0, ts, pts).unwrap();
            let segs = traj.segments();
            for j in 1..traj.segment_count() {
                let h = traj.knots()[j] - traj.knots()[j - 1];
                let pts = &traj.control_points()[j - 1..=j + 1];
                for order in 0..3 {
                    // Roundoff grows with the data magnitude divided by h^order.
                    let mut scale = 1.0f64;
                    for c in pts {
                        for k in 0..3 {
                            let (x, y) = c.axis(k);
                            let w = h.powi(k as i32 - order as i32);
                            scale = scale.max(x.abs() * w).max(y.abs() * w);
                        }
                    }
                    let (lx, ly) = segs[j - 1].eval(h, order);
                    let (rx, ry) = segs[j].eval(0.0, order);
                    prop_assert!((lx - rx).abs() <= 1e-11 * scale, "{} vs {}", lx, rx);
                    prop_assert!((ly - ry).abs() <= 1e-11 * scale, "{} vs {}", ly, ry);
                }
            }
        }
    }
}
