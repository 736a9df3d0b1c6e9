//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use drivestyle::features::LaneContext;
use drivestyle::spline::{ControlPoint, SplineTrajectory};
use nalgebra::{Matrix6, Vector6};

pub const TS: f64 = 0.2;

pub fn ctx() -> LaneContext {
    LaneContext {
        v_des: 30.0,
        v_lane: 30.0,
        l_des: 5.25,
        l_initial: 2.625,
        l_target: 7.875,
        lane_width: 5.25,
        turn_time: None,
    }
}

/// Ascending coefficients of the quintic matching value, slope and curvature
/// at both ends, from a dense solve.
pub fn hermite_dense(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, h: f64) -> [f64; 6] {
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
    let c = m.lu().solve(&rhs).unwrap();
    [c[0], c[1], c[2], c[3], c[4], c[5]]
}

pub fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, v)| k as f64 * v)
        .collect()
}

pub fn square(c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * c.len() - 1];
    for (i, a) in c.iter().enumerate() {
        for (j, b) in c.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// Integral of the polynomial over `[0, h]`.
pub fn integrate(c: &[f64], h: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(k, v)| v * h.powi(k as i32 + 1) / (k as f64 + 1.0))
        .sum()
}

pub fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * t + v)
}

/// Exact acceleration and speed-deviation integrals of the spline through `pts`.
pub fn analytic_smooth(pts: &[ControlPoint], v_des: f64) -> (f64, f64, f64) {
    let (mut fax, mut fay, mut fv) = (0.0, 0.0, 0.0);
    for w in pts.windows(2) {
        let (c0, c1) = (w[0], w[1]);
        let qx = hermite_dense(c0.rx, c0.vx, c0.ax, c1.rx, c1.vx, c1.ax, TS);
        let qy = hermite_dense(c0.ry, c0.vy, c0.ay, c1.ry, c1.vy, c1.ay, TS);
        fax += integrate(&square(&derivative(&derivative(&qx))), TS);
        fay += integrate(&square(&derivative(&derivative(&qy))), TS);
        let mut dev = derivative(&qx);
        dev.iter_mut().for_each(|v| *v = -*v);
        dev[0] += v_des;
        fv += integrate(&square(&dev), TS);
    }
    (fax, fay, fv)
}

pub fn dense_trapezoid(t0: f64, t1: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (t1 - t0) / n as f64;
    let mut acc = 0.5 * (f(t0) + f(t1));
    for i in 1..n {
        acc += f(t0 + h * i as f64);
    }
    acc * h
}

pub fn straight_tv(x0: f64, y: f64, v: f64, segments: usize) -> SplineTrajectory {
    let pts = (0..=segments)
        .map(|i| ControlPoint {
            rx: x0 + v * TS * i as f64,
            vx: v,
            ax: 0.0,
            ry: y,
            vy: 0.0,
            ay: 0.0,
        })
        .collect();
    SplineTrajectory::uniform(0.0, TS, pts).unwrap()
}

/// Forward-moving control points from raw `(dx, vx, ax, ry, vy, ay)` draws.
pub fn forward_points(raw: Vec<(f64, f64, f64, f64, f64, f64)>) -> Vec<ControlPoint> {
    let mut x = 0.0;
    raw.into_iter()
        .enumerate()
        .map(|(i, (dx, vx, ax, ry, vy, ay))| {
            if i > 0 {
                x += vx * TS + dx;
            }
            ControlPoint {
                rx: x,
                vx,
                ax,
                ry,
                vy,
                ay,
            }
        })
        .collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
