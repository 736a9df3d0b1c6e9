//! Chance-constrained receding-horizon control of the EV against a
//! constant-velocity TV.
//!
//! The OCP is solved by single shooting over the input sequence. Inputs are
//! box constrained directly; the tightened safety ellipse and the state bounds
//! enter through an augmented Lagrangian whose subproblems are minimized by the
//! projected L-BFGS in [`crate::optim`], with gradients from a backward
//! (adjoint) sweep through the Euler dynamics.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::{
    advance, advance_jacobians, step, ControlInput, StateInputBounds, VehicleGeometry, VehicleState,
};
use crate::error::{Error, Result};
use crate::optim::{self, Bounds, Objective};
use crate::scenario::{ScenarioConfig, SmpcConfig};
use crate::spline::{states_to_control_points, SplineTrajectory};

/// Diagonal weights of the tracking cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpWeights {
    pub q: [f64; 4],
    pub r: [f64; 2],
    pub q_terminal: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyEllipse {
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Required probability of staying outside the ellipse.
    pub risk: f64,
}

/// Gaussian TV position prediction for steps `k = 1..=N` (index `k - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TvPrediction {
    pub mean: Vec<(f64, f64)>,
    pub sigma: Vec<f64>,
}

impl TvPrediction {
    pub fn horizon(&self) -> usize {
        self.mean.len()
    }
}

/// Straight-line constant-velocity mean with linearly growing spread.
pub fn predict_tv(
    tv: &VehicleState,
    horizon: usize,
    ts: f64,
    sigma0: f64,
    sigma_growth: f64,
) -> Result<TvPrediction> {
    if horizon == 0 {
        return Err(Error::invalid("prediction horizon must be >= 1"));
    }
    let (s, c) = tv.phi.sin_cos();
    let mean = (1..=horizon)
        .map(|k| {
            let d = k as f64 * ts * tv.v;
            (tv.x + d * c, tv.y + d * s)
        })
        .collect();
    let sigma = (1..=horizon)
        .map(|k| sigma0 + k as f64 * sigma_growth)
        .collect();
    Ok(TvPrediction { mean, sigma })
}

/// `dx^2 / l_a^2 + dy^2 / l_b^2 - 1`; non-negative outside the ellipse.
pub fn ellipse_margin(dx: f64, dy: f64, ellipse: &SafetyEllipse) -> f64 {
    dx * dx / (ellipse.semi_major * ellipse.semi_major)
        + dy * dy / (ellipse.semi_minor * ellipse.semi_minor)
        - 1.0
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// Both semi-axes inflated by `z_p * sigma`.
pub fn tightened_ellipse(ellipse: &SafetyEllipse, sigma: f64) -> Result<SafetyEllipse> {
    let z = normal_quantile(ellipse.risk)?;
    Ok(SafetyEllipse {
        semi_major: ellipse.semi_major + z * sigma,
        semi_minor: ellipse.semi_minor + z * sigma,
        ..*ellipse
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No feasible point found; the ellipse constraints were replaced by a penalty.
    InfeasibleRelaxed,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::InfeasibleRelaxed => "infeasible-relaxed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub inputs: Vec<ControlInput>,
    /// Predicted states `k = 0..=N`.
    pub states: Vec<VehicleState>,
    /// Tracking cost without constraint terms.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Merit value trace of each multiplier round.
    pub merit_trace: Vec<Vec<f64>>,
    /// Largest violation of the tightened ellipse margins (0 when satisfied).
    pub ellipse_violation: f64,
}

const PENALTY_WEIGHT: f64 = 1e4;
const MAX_ROUNDS: usize = 30;
const CONSTRAINTS_PER_STEP: usize = 7;

#[derive(Clone, Copy, PartialEq)]
enum EllipseMode {
    Multiplier,
    Penalty,
}

/// Single-shooting objective with augmented-Lagrangian constraint terms.
struct Shooting<'a> {
    x0: VehicleState,
    ts: f64,
    geom: &'a VehicleGeometry,
    weights: &'a OcpWeights,
    bounds: &'a StateInputBounds,
    reference: Vec<[f64; 4]>,
    tv: Vec<(f64, f64)>,
    axes: Vec<(f64, f64)>,
    mu: Vec<f64>,
    rho: f64,
    mode: EllipseMode,
    states: Vec<VehicleState>,
}

impl Shooting<'_> {
    fn horizon(&self) -> usize {
        self.tv.len()
    }

    fn rollout(&mut self, u: &[f64]) {
        self.states.clear();
        self.states.push(self.x0);
        for k in 0..self.horizon() {
            let input = ControlInput::new(u[2 * k], u[2 * k + 1]);
            let next = advance(&self.states[k], &input, self.ts, self.geom);
            self.states.push(next);
        }
    }

    /// Constraint values `g >= 0` at step `k >= 1` and their state gradients.
    /// Bound constraints are normalized by the interval width.
    fn constraints(&self, k: usize, s: &VehicleState) -> [(f64, [f64; 4]); CONSTRAINTS_PER_STEP] {
        let (tx, ty) = self.tv[k - 1];
        let (a, b) = self.axes[k - 1];
        let (dx, dy) = (s.x - tx, s.y - ty);
        let ellipse = (
            dx * dx / (a * a) + dy * dy / (b * b) - 1.0,
            [2.0 * dx / (a * a), 2.0 * dy / (b * b), 0.0, 0.0],
        );
        let lower = |v: f64, iv: crate::dynamics::Interval, i: usize| {
            let w = (iv.max - iv.min).max(1e-9);
            let mut g = [0.0; 4];
            g[i] = 1.0 / w;
            ((v - iv.min) / w, g)
        };
        let upper = |v: f64, iv: crate::dynamics::Interval, i: usize| {
            let w = (iv.max - iv.min).max(1e-9);
            let mut g = [0.0; 4];
            g[i] = -1.0 / w;
            ((iv.max - v) / w, g)
        };
        let bd = self.bounds;
        [
            ellipse,
            lower(s.y, bd.y, 1),
            upper(s.y, bd.y, 1),
            lower(s.phi, bd.phi, 2),
            upper(s.phi, bd.phi, 2),
            lower(s.v, bd.v, 3),
            upper(s.v, bd.v, 3),
        ]
    }

    /// Value and derivative with respect to `g` of one constraint term.
    fn constraint_term(&self, idx: usize, g: f64) -> (f64, f64) {
        if idx.is_multiple_of(CONSTRAINTS_PER_STEP) && self.mode == EllipseMode::Penalty {
            let v = g.min(0.0);
            return (PENALTY_WEIGHT * v * v, 2.0 * PENALTY_WEIGHT * v);
        }
        let mu = self.mu[idx];
        let shifted = mu - self.rho * g;
        if shifted > 0.0 {
            ((shifted * shifted - mu * mu) / (2.0 * self.rho), -shifted)
        } else {
            (-mu * mu / (2.0 * self.rho), 0.0)
        }
    }

    fn tracking_error(&self, k: usize, s: &VehicleState) -> [f64; 4] {
        let r = self.reference[k];
        [s.x - r[0], s.y - r[1], s.phi - r[2], s.v - r[3]]
    }

    fn tracking_cost(&self, u: &[f64]) -> f64 {
        let n = self.horizon();
        let mut j = 0.0;
        for k in 0..n {
            let e = self.tracking_error(k, &self.states[k]);
            j += (0..4).map(|i| self.weights.q[i] * e[i] * e[i]).sum::<f64>();
            j += self.weights.r[0] * u[2 * k] * u[2 * k]
                + self.weights.r[1] * u[2 * k + 1] * u[2 * k + 1];
        }
        let e = self.tracking_error(n, &self.states[n]);
        j + (0..4)
            .map(|i| self.weights.q_terminal[i] * e[i] * e[i])
            .sum::<f64>()
    }

    fn merit(&self, u: &[f64]) -> f64 {
        let mut m = self.tracking_cost(u);
        for k in 1..=self.horizon() {
            for (c, (g, _)) in self.constraints(k, &self.states[k]).iter().enumerate() {
                m += self
                    .constraint_term((k - 1) * CONSTRAINTS_PER_STEP + c, *g)
                    .0;
            }
        }
        m
    }

    /// Largest constraint violation at the current rollout.
    fn max_violation(&self, include_ellipse: bool) -> f64 {
        self.constraint_values()
            .iter()
            .enumerate()
            .filter(|(i, _)| include_ellipse || i % CONSTRAINTS_PER_STEP != 0)
            .fold(0.0f64, |acc, (_, v)| acc.max(-v))
    }

    fn ellipse_violation(&self) -> f64 {
        self.constraint_values()
            .iter()
            .step_by(CONSTRAINTS_PER_STEP)
            .fold(0.0f64, |acc, v| acc.max(-v))
    }

    /// Constraint values at the current rollout, in multiplier order.
    fn constraint_values(&self) -> Vec<f64> {
        (1..=self.horizon())
            .flat_map(|k| self.constraints(k, &self.states[k]).map(|(g, _)| g))
            .collect()
    }
}

impl Objective for Shooting<'_> {
    fn value(&mut self, u: &[f64]) -> f64 {
        self.rollout(u);
        self.merit(u)
    }

    fn value_and_gradient(&mut self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.rollout(u);
        let n = self.horizon();
        let w = self.weights;

        let state_grad = |this: &Self, k: usize, q: &[f64; 4]| -> [f64; 4] {
            let s = &this.states[k];
            let e = this.tracking_error(k, s);
            let mut g = [0.0; 4];
            for i in 0..4 {
                g[i] = 2.0 * q[i] * e[i];
            }
            if k >= 1 {
                for (c, (gv, dg)) in this.constraints(k, s).iter().enumerate() {
                    let (_, d) = this.constraint_term((k - 1) * CONSTRAINTS_PER_STEP + c, *gv);
                    if d != 0.0 {
                        for i in 0..4 {
                            g[i] += d * dg[i];
                        }
                    }
                }
            }
            g
        };

        let mut lambda = state_grad(self, n, &w.q_terminal);
        for k in (0..n).rev() {
            let input = ControlInput::new(u[2 * k], u[2 * k + 1]);
            let (a, b) = advance_jacobians(&self.states[k], &input, self.ts, self.geom);
            for j in 0..2 {
                let mut acc = 2.0 * w.r[j] * u[2 * k + j];
                for i in 0..4 {
                    acc += b[i][j] * lambda[i];
                }
                grad[2 * k + j] = acc;
            }
            if k >= 1 {
                let local = state_grad(self, k, &w.q);
                let mut next = local;
                for j in 0..4 {
                    for i in 0..4 {
                        next[j] += a[i][j] * lambda[i];
                    }
                }
                lambda = next;
            }
        }
        self.merit(u)
    }
}

/// Solve the finite-horizon OCP from `ev`, optionally warm started.
pub fn solve_ocp(
    ev: &VehicleState,
    tv: &TvPrediction,
    cfg: &ScenarioConfig,
    warm: Option<&[ControlInput]>,
) -> Result<OcpSolution> {
    let s = &cfg.smpc;
    let n = tv.horizon();
    if !ev.is_finite() {
        return Err(Error::invalid("non-finite EV state"));
    }
    if tv.sigma.len() != n {
        return Err(Error::invalid(
            "TV prediction mean and sigma lengths differ",
        ));
    }
    let mut axes = Vec::with_capacity(n);
    for sigma in &tv.sigma {
        let e = tightened_ellipse(&s.ellipse, *sigma)?;
        axes.push((e.semi_major, e.semi_minor));
    }
    let v_ref = cfg.lane.v_des;
    let reference = (0..=n)
        .map(|k| {
            [
                ev.x + k as f64 * s.ts * v_ref,
                cfg.lane.l_target,
                0.0,
                v_ref,
            ]
        })
        .collect();

    // Optimize over inputs scaled by their half ranges.
    let scale = [
        0.5 * (s.bounds.a.max - s.bounds.a.min).max(1e-9),
        0.5 * (s.bounds.delta.max - s.bounds.delta.min).max(1e-9),
    ];
    let box_bounds = Bounds {
        lower: (0..n)
            .flat_map(|_| [s.bounds.a.min / scale[0], s.bounds.delta.min / scale[1]])
            .collect(),
        upper: (0..n)
            .flat_map(|_| [s.bounds.a.max / scale[0], s.bounds.delta.max / scale[1]])
            .collect(),
    };
    let mut z: Vec<f64> = match warm {
        Some(w) if w.len() == n => w
            .iter()
            .flat_map(|i| [i.a / scale[0], i.delta / scale[1]])
            .collect(),
        Some(w) => {
            return Err(Error::invalid(format!(
                "warm start has {} inputs, horizon is {n}",
                w.len()
            )))
        }
        None => vec![0.0; 2 * n],
    };

    let mut problem = Shooting {
        x0: *ev,
        ts: s.ts,
        geom: &cfg.vehicle,
        weights: &s.weights,
        bounds: &s.bounds,
        reference,
        tv: tv.mean.clone(),
        axes,
        mu: vec![0.0; n * CONSTRAINTS_PER_STEP],
        rho: 1e3,
        mode: EllipseMode::Multiplier,
        states: Vec::with_capacity(n + 1),
    };
    let unscale = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, v)| v * scale[i % 2])
            .collect()
    };

    let mut iterations = 0;
    let mut merit_trace = Vec::new();
    let converged = multiplier_rounds(
        &mut problem,
        &mut z,
        &box_bounds,
        scale,
        s,
        &mut iterations,
        &mut merit_trace,
    );
    let status = if converged {
        SolveStatus::Converged
    } else if problem.max_violation(true) <= s.tolerance {
        SolveStatus::MaxIterations
    } else {
        // Soften only the ellipse; the state bounds keep their multipliers.
        problem.mode = EllipseMode::Penalty;
        for (i, mu) in problem.mu.iter_mut().enumerate() {
            if i.is_multiple_of(CONSTRAINTS_PER_STEP) {
                *mu = 0.0;
            }
        }
        multiplier_rounds(
            &mut problem,
            &mut z,
            &box_bounds,
            scale,
            s,
            &mut iterations,
            &mut merit_trace,
        );
        SolveStatus::InfeasibleRelaxed
    };
    problem.rollout(&unscale(&z));

    let u = unscale(&z);
    let objective = problem.tracking_cost(&u);
    Ok(OcpSolution {
        inputs: u.chunks(2).map(|c| ControlInput::new(c[0], c[1])).collect(),
        ellipse_violation: problem.ellipse_violation(),
        states: problem.states,
        objective,
        status,
        iterations,
        merit_trace,
    })
}

/// Augmented-Lagrangian rounds; true when a KKT point within tolerance was found.
fn multiplier_rounds(
    problem: &mut Shooting<'_>,
    z: &mut Vec<f64>,
    box_bounds: &Bounds,
    scale: [f64; 2],
    s: &SmpcConfig,
    iterations: &mut usize,
    merit_trace: &mut Vec<Vec<f64>>,
) -> bool {
    let mut prev_violation = f64::INFINITY;
    for _round in 0..MAX_ROUNDS {
        let opts = optim::Options {
            max_iterations: s.max_iterations,
            gradient_tolerance: s.tolerance,
            ..optim::Options::default()
        };
        let m = optim::minimize(&mut Scaled::new(problem, scale), z, Some(box_bounds), &opts);
        *iterations += m.iterations;
        merit_trace.push(m.trace);
        *z = m.x;
        let u: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, v)| v * scale[i % 2])
            .collect();
        problem.rollout(&u);
        let g = problem.constraint_values();
        let soft = problem.mode == EllipseMode::Penalty;
        let hard = |i: usize| !(soft && i.is_multiple_of(CONSTRAINTS_PER_STEP));
        let violation = problem.max_violation(!soft);
        let complementary = g
            .iter()
            .zip(&problem.mu)
            .all(|(gv, mu)| (gv * mu).abs() <= 10.0 * s.tolerance);
        if violation <= s.tolerance && m.termination.converged() && complementary {
            return true;
        }
        let rho = problem.rho;
        for (i, (mu, gv)) in problem.mu.iter_mut().zip(&g).enumerate() {
            if hard(i) {
                *mu = (*mu - rho * gv).max(0.0);
            }
        }
        if violation > 0.25 * prev_violation {
            problem.rho = (problem.rho * 10.0).min(1e10);
        }
        prev_violation = violation;
    }
    false
}

/// Presents the shooting objective in scaled input coordinates.
struct Scaled<'p, 'a> {
    inner: &'p mut Shooting<'a>,
    scale: [f64; 2],
    u: Vec<f64>,
    grad: Vec<f64>,
}

impl<'p, 'a> Scaled<'p, 'a> {
    fn new(inner: &'p mut Shooting<'a>, scale: [f64; 2]) -> Self {
        let n = 2 * inner.horizon();
        Self {
            inner,
            scale,
            u: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    fn load(&mut self, z: &[f64]) {
        for (i, (u, v)) in self.u.iter_mut().zip(z).enumerate() {
            *u = v * self.scale[i % 2];
        }
    }
}

impl Objective for Scaled<'_, '_> {
    fn value(&mut self, z: &[f64]) -> f64 {
        self.load(z);
        self.inner.value(&self.u)
    }

    fn value_and_gradient(&mut self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.load(z);
        let f = self.inner.value_and_gradient(&self.u, &mut self.grad);
        for (i, (g, v)) in grad.iter_mut().zip(&self.grad).enumerate() {
            *g = v * self.scale[i % 2];
        }
        f
    }
}

/// Closed-loop EV demonstration against the scripted TV.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationRecord {
    pub ts: f64,
    pub ev_states: Vec<VehicleState>,
    pub tv_states: Vec<VehicleState>,
    /// Input applied between sample `t` and `t + 1`.
    pub inputs: Vec<ControlInput>,
    pub statuses: Vec<SolveStatus>,
}

impl DemonstrationRecord {
    pub fn times(&self) -> Vec<f64> {
        (0..self.ev_states.len())
            .map(|i| i as f64 * self.ts)
            .collect()
    }

    pub fn ev_spline(&self) -> Result<SplineTrajectory> {
        states_to_control_points(&self.ev_states, self.ts)
    }

    pub fn tv_spline(&self) -> Result<SplineTrajectory> {
        states_to_control_points(&self.tv_states, self.ts)
    }
}

/// Advance the TV by one sample at constant velocity.
pub fn advance_tv(tv: &VehicleState, ts: f64, geom: &VehicleGeometry) -> Result<VehicleState> {
    step(tv, &ControlInput::default(), ts, geom)
}

/// TV states over the configured duration; the TV does not react to the EV.
pub fn scripted_tv(cfg: &ScenarioConfig) -> Result<Vec<VehicleState>> {
    cfg.validate()?;
    let mut states = Vec::with_capacity(cfg.sample_count());
    let mut tv = cfg.tv;
    states.push(tv);
    for _ in 1..cfg.sample_count() {
        tv = advance_tv(&tv, cfg.smpc.ts, &cfg.vehicle)?;
        states.push(tv);
    }
    Ok(states)
}

/// Run the receding-horizon loop for the configured duration.
pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<DemonstrationRecord> {
    cfg.validate()?;
    let s = &cfg.smpc;
    let samples = cfg.sample_count();
    let mut ev = cfg.ev;
    let mut tv = cfg.tv;
    let mut record = DemonstrationRecord {
        ts: s.ts,
        ev_states: vec![ev],
        tv_states: vec![tv],
        inputs: Vec::with_capacity(samples - 1),
        statuses: Vec::with_capacity(samples - 1),
    };
    let mut warm = vec![ControlInput::default(); s.horizon];
    for t in 1..samples {
        let prediction = predict_tv(&tv, s.horizon, s.ts, s.sigma0, s.sigma_growth)?;
        let sol = solve_ocp(&ev, &prediction, cfg, Some(&warm))?;
        let u = sol.inputs[0];
        ev = step(&ev, &u, s.ts, &cfg.vehicle)?;
        if !ev.is_finite() {
            return Err(Error::NonFinite { step: t });
        }
        tv = advance_tv(&tv, s.ts, &cfg.vehicle)?;
        warm.clear();
        warm.extend_from_slice(&sol.inputs[1..]);
        warm.push(*sol.inputs.last().expect("horizon >= 1"));
        record.ev_states.push(ev);
        record.tv_states.push(tv);
        record.inputs.push(u);
        record.statuses.push(sol.status);
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse() -> SafetyEllipse {
        SafetyEllipse {
            semi_major: 15.0,
            semi_minor: 3.0,
            risk: 0.7,
        }
    }

    #[test]
    fn prediction_examples() {
        let tv = VehicleState::new(60.0, 7.875, 0.0, 28.0);
        let p = predict_tv(&tv, 10, 0.2, 0.2, 0.05).unwrap();
        assert!((p.mean[9].0 - 116.0).abs() < 1e-12);
        assert_eq!(p.mean[9].1, 7.875);
        assert!((p.sigma[9] - 0.7).abs() < 1e-12);
        assert!(p.sigma.windows(2).all(|w| w[1] >= w[0]));

        let p = predict_tv(&tv, 10, 0.2, 0.2, 0.0).unwrap();
        assert!(p.sigma.iter().all(|s| *s == 0.2));

        let parked = VehicleState::new(60.0, 7.875, 0.0, 0.0);
        let p = predict_tv(&parked, 10, 0.2, 0.2, 0.05).unwrap();
        assert!(p.mean.iter().all(|m| *m == (60.0, 7.875)));

        assert!(predict_tv(&tv, 0, 0.2, 0.2, 0.05).is_err());
    }

    #[test]
    fn margin_examples() {
        let e = ellipse();
        assert_eq!(ellipse_margin(15.0, 0.0, &e), 0.0);
        assert_eq!(ellipse_margin(0.0, 0.0, &e), -1.0);
        // 400/225 + 9/9 - 1
        assert!((ellipse_margin(20.0, 3.0, &e) - 16.0 / 9.0).abs() < 1e-12);
    }

    /// Standard normal CDF by composite Simpson integration of the density.
    fn simpson_cdf(z: f64) -> f64 {
        let n = 20_000;
        let h = z / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = pdf(0.0) + pdf(z);
        for i in 1..n {
            acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + acc * h / 3.0
    }

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if simpson_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn tightening_examples() {
        let e = ellipse();
        let t = tightened_ellipse(&SafetyEllipse { risk: 0.5, ..e }, 3.0).unwrap();
        assert_eq!((t.semi_major, t.semi_minor), (15.0, 3.0));
        let t = tightened_ellipse(&e, 0.0).unwrap();
        assert_eq!((t.semi_major, t.semi_minor), (15.0, 3.0));

        let z = bisect_quantile(0.7);
        let t = tightened_ellipse(&e, 1.0).unwrap();
        assert!((t.semi_major - (15.0 + z)).abs() < 1e-9);
        assert!((t.semi_minor - (3.0 + z)).abs() < 1e-9);
        assert!((t.semi_major - 15.5244).abs() < 1e-4);

        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(tightened_ellipse(&SafetyEllipse { risk: p, ..e }, 1.0).is_err());
        }
    }

    #[test]
    fn quantile_matches_oracle_across_range() {
        for p in [0.05, 0.3, 0.5, 0.9, 0.99] {
            assert!(
                (normal_quantile(p).unwrap() - bisect_quantile(p)).abs() < 1e-8,
                "p = {p}"
            );
        }
    }

    fn shooting<'a>(cfg: &'a ScenarioConfig, pred: &TvPrediction) -> Shooting<'a> {
        let n = pred.horizon();
        Shooting {
            x0: cfg.ev,
            ts: cfg.smpc.ts,
            geom: &cfg.vehicle,
            weights: &cfg.smpc.weights,
            bounds: &cfg.smpc.bounds,
            reference: (0..=n)
                .map(|k| [cfg.ev.x + k as f64 * 6.0, 7.875, 0.0, 30.0])
                .collect(),
            tv: pred.mean.clone(),
            axes: pred
                .sigma
                .iter()
                .map(|s| {
                    let e = tightened_ellipse(&cfg.smpc.ellipse, *s).unwrap();
                    (e.semi_major, e.semi_minor)
                })
                .collect(),
            mu: (0..n * CONSTRAINTS_PER_STEP)
                .map(|i| 0.1 * (i % 3) as f64)
                .collect(),
            rho: 50.0,
            mode: EllipseMode::Multiplier,
            states: Vec::new(),
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let cfg = ScenarioConfig::bundled();
        let pred = predict_tv(&cfg.tv, 10, 0.2, 0.2, 1.2).unwrap();
        for mode in [EllipseMode::Multiplier, EllipseMode::Penalty] {
            let mut p = shooting(&cfg, &pred);
            p.mode = mode;
            let u: Vec<f64> = (0..20)
                .map(|i| {
                    if i % 2 == 0 {
                        0.3 * (i as f64).sin()
                    } else {
                        0.03 * (i as f64).cos()
                    }
                })
                .collect();
            let mut g = vec![0.0; 20];
            p.value_and_gradient(&u, &mut g);
            for i in 0..20 {
                let h = 1e-6;
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (p.value(&up) - p.value(&dn)) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "component {i}: adjoint {} vs fd {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn tracking_at_reference_without_tv_is_free() {
        let mut cfg = ScenarioConfig::bundled();
        cfg.ev = VehicleState::new(80.0, 7.875, 0.0, 30.0);
        cfg.smpc.sigma0 = 0.0;
        cfg.smpc.sigma_growth = 0.0;
        let far = VehicleState::new(1e6, 7.875, 0.0, 28.0);
        let pred = predict_tv(&far, 10, 0.2, 0.0, 0.0).unwrap();
        let sol = solve_ocp(&cfg.ev, &pred, &cfg, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.objective < 1e-9, "objective {}", sol.objective);
        assert!(sol
            .inputs
            .iter()
            .all(|u| u.a.abs() < 1e-6 && u.delta.abs() < 1e-6));
    }

    #[test]
    fn first_baseline_solve_steers_left_and_is_safe() {
        let cfg = ScenarioConfig::bundled();
        let s = &cfg.smpc;
        let pred = predict_tv(&cfg.tv, s.horizon, s.ts, s.sigma0, s.sigma_growth).unwrap();
        let sol = solve_ocp(&cfg.ev, &pred, &cfg, None).unwrap();
        assert_ne!(sol.status, SolveStatus::InfeasibleRelaxed);
        assert!(sol.inputs[0].delta > 0.0);
        for k in 1..=s.horizon {
            let e = tightened_ellipse(&s.ellipse, pred.sigma[k - 1]).unwrap();
            let st = sol.states[k];
            let (tx, ty) = pred.mean[k - 1];
            let d = (st.x - tx).powi(2) / e.semi_major.powi(2)
                + (st.y - ty).powi(2) / e.semi_minor.powi(2)
                - 1.0;
            assert!(d >= -1e-6, "k = {k}: margin {d}");
        }
        for trace in &sol.merit_trace {
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn predicted_states_follow_dynamics() {
        let cfg = ScenarioConfig::bundled();
        let s = &cfg.smpc;
        let pred = predict_tv(&cfg.tv, s.horizon, s.ts, s.sigma0, s.sigma_growth).unwrap();
        let sol = solve_ocp(&cfg.ev, &pred, &cfg, None).unwrap();
        for k in 0..s.horizon {
            let next = step(&sol.states[k], &sol.inputs[k], s.ts, &cfg.vehicle).unwrap();
            assert_eq!(next, sol.states[k + 1]);
        }
    }

    #[test]
    fn unsatisfiable_ellipse_is_relaxed() {
        // TV parked on the EV with a huge ellipse: no input sequence escapes it.
        let mut cfg = ScenarioConfig::bundled();
        cfg.smpc.ellipse.semi_major = 500.0;
        cfg.smpc.ellipse.semi_minor = 50.0;
        let tv = VehicleState::new(80.0, 2.625, 0.0, 25.0);
        let pred = predict_tv(&tv, 10, 0.2, 0.0, 0.0).unwrap();
        let sol = solve_ocp(&cfg.ev, &pred, &cfg, None).unwrap();
        assert_eq!(sol.status, SolveStatus::InfeasibleRelaxed);
        assert!(sol.ellipse_violation > 0.0);
        assert!(sol
            .inputs
            .iter()
            .all(|u| u.a.is_finite() && u.delta.is_finite()));
    }
}
