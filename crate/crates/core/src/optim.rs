//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Directions come from the L-BFGS two-loop recursion restricted to the free
//! variables; steps are projected onto the box and accepted by an Armijo
//! backtracking test, so the objective trace is non-increasing.

use std::collections::VecDeque;

pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the objective value.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop when the infinity norm of the projected gradient is below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step changes f by less than `tol * max(1, |f|)`.
    pub objective_tolerance: f64,
    pub max_backtracks: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            memory: 8,
            gradient_tolerance: 1e-6,
            objective_tolerance: 1e-12,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    /// No step along the current or the steepest-descent direction decreased f.
    LineSearchFailed,
    NonFinite,
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(
            self,
            Termination::GradientTolerance | Termination::ObjectiveTolerance
        )
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value before the first iteration and after each accepted step.
    pub trace: Vec<f64>,
    pub projected_gradient_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: Option<&Bounds>, out: &mut [f64]) {
    out.copy_from_slice(g);
    if let Some(b) = bounds {
        for i in 0..x.len() {
            if (x[i] <= b.lower[i] && g[i] > 0.0) || (x[i] >= b.upper[i] && g[i] < 0.0) {
                out[i] = 0.0;
            }
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimize `f` from `x0`, optionally subject to `bounds`.
pub fn minimize<F: Objective + ?Sized>(
    f: &mut F,
    x0: &[f64],
    bounds: Option<&Bounds>,
    opts: &Options,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let mut g = vec![0.0; n];
    let mut fx = f.value_and_gradient(&x, &mut g);
    let mut trace = vec![fx];
    let mut pg = vec![0.0; n];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory.max(1)];

    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            termination: Termination::NonFinite,
            trace,
            projected_gradient_norm: f64::NAN,
        };
    }

    let mut iterations = 0;
    let termination = loop {
        projected_gradient(&x, &g, bounds, &mut pg);
        if inf_norm(&pg) <= opts.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }

        // Free variables are those not pinned at an active bound.
        let free: Vec<bool> = (0..n).map(|i| pg[i] != 0.0 || g[i] == 0.0).collect();

        let mut accepted = false;
        let mut use_memory = !history.is_empty();
        for _attempt in 0..2 {
            if use_memory {
                two_loop(&history, &pg, &free, &mut alpha, &mut d);
            } else {
                for i in 0..n {
                    d[i] = -pg[i];
                }
            }
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                use_memory = false;
                history.clear();
                continue;
            }
            let mut t = if use_memory {
                1.0
            } else {
                (1.0 / inf_norm(&pg)).min(1.0)
            };
            for _ in 0..opts.max_backtracks {
                for i in 0..n {
                    x_new[i] = x[i] + t * d[i];
                }
                if let Some(b) = bounds {
                    b.project(&mut x_new);
                }
                let mut step_slope = 0.0;
                for i in 0..n {
                    step_slope += g[i] * (x_new[i] - x[i]);
                }
                if step_slope < 0.0 {
                    let f_trial = f.value(&x_new);
                    if f_trial.is_finite() && f_trial <= fx + 1e-4 * step_slope {
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
            if !use_memory {
                break;
            }
            use_memory = false;
            history.clear();
        }
        if !accepted {
            break Termination::LineSearchFailed;
        }

        let f_next = f.value_and_gradient(&x_new, &mut g_new);
        iterations += 1;
        if !f_next.is_finite() {
            break Termination::NonFinite;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).max(f64::MIN_POSITIVE) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_next;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_next;
        trace.push(fx);
        if decrease <= opts.objective_tolerance * fx.abs().max(1.0) {
            break Termination::ObjectiveTolerance;
        }
    };

    projected_gradient(&x, &g, bounds, &mut pg);
    Minimum {
        projected_gradient_norm: inf_norm(&pg),
        x,
        value: fx,
        iterations,
        termination,
        trace,
    }
}

fn two_loop(
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    grad: &[f64],
    free: &[bool],
    alpha: &mut [f64],
    d: &mut [f64],
) {
    let n = grad.len();
    for i in 0..n {
        d[i] = if free[i] { grad[i] } else { 0.0 };
    }
    for (k, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * masked_dot(s, d, free);
        alpha[k] = a;
        for i in 0..n {
            if free[i] {
                d[i] -= a * y[i];
            }
        }
    }
    if let Some((s, y, _)) = history.back() {
        let yy = masked_dot(y, y, free);
        let sy = masked_dot(s, y, free);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            d.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for (k, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * masked_dot(y, d, free);
        for i in 0..n {
            if free[i] {
                d[i] += s[i] * (alpha[k] - b);
            }
        }
    }
    d.iter_mut().for_each(|v| *v = -*v);
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((x, y), _)| x * y)
        .sum()
}
