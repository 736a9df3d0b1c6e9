//! Trajectory features of an EV spline relative to a TV trajectory.
//!
//! Ten features in fixed order: longitudinal and lateral acceleration effort,
//! desired-speed deviation, desired-lane, initial-lane and end-lane deviation,
//! the reciprocal inter-vehicular time, and three reaction features that are
//! only active inside the window opened by the elliptical-index trigger.
//!
//! Polynomial and other smooth integrands use a 5-node Gauss-Legendre rule per
//! segment. Integrands containing `|.|` use a fixed 50-step trapezoid rule per
//! segment (or per partial segment where a window boundary falls inside one).

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre5, trapezoid, TRAPEZOID_STEPS};
use crate::spline::{Segment, SplineTrajectory, SplineView};

pub const FEATURE_COUNT: usize = 10;

/// Smallest longitudinal gap used in the inter-vehicular time integrand (m).
pub const MIN_TIV_GAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    AccelX,
    AccelY,
    Velocity,
    Lane,
    InitialLane,
    EndLane,
    Tiv,
    StartDistance,
    EndDistance,
    IntegralDistance,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::AccelX,
        Feature::AccelY,
        Feature::Velocity,
        Feature::Lane,
        Feature::InitialLane,
        Feature::EndLane,
        Feature::Tiv,
        Feature::StartDistance,
        Feature::EndDistance,
        Feature::IntegralDistance,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FEATURE_NAMES[self.index()]
    }

    /// Gated by the trigger; zero when no trigger occurred.
    pub fn is_reactive(self) -> bool {
        matches!(
            self,
            Feature::StartDistance | Feature::EndDistance | Feature::IntegralDistance
        )
    }
}

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "f_ax", "f_ay", "f_v", "f_l", "f_il", "f_el", "f_tiv", "f_sd", "f_ed", "f_id",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &FeatureVector) -> FeatureVector {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(other.0.iter()) {
            *o -= b;
        }
        out
    }

    pub fn dot(&self, other: &[f64; FEATURE_COUNT]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, omega: &FeatureScaling) -> FeatureVector {
        scale(self, omega)
    }
}

impl Index<Feature> for FeatureVector {
    type Output = f64;
    fn index(&self, f: Feature) -> &f64 {
        &self.0[f.index()]
    }
}

impl IndexMut<Feature> for FeatureVector {
    fn index_mut(&mut self, f: Feature) -> &mut f64 {
        &mut self.0[f.index()]
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in FEATURE_NAMES.iter().zip(self.0.iter()).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={v:.4}")?;
        }
        Ok(())
    }
}

/// Diagonal of the feature scaling matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScaling(pub [f64; FEATURE_COUNT]);

impl FeatureScaling {
    pub fn ones() -> Self {
        Self([1.0; FEATURE_COUNT])
    }

    /// Lane-window and reaction features weighted 10, whole-horizon features 1.
    pub fn standard() -> Self {
        Self([1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 1.0, 10.0, 10.0, 10.0])
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            Some(i) => Err(Error::invalid(format!(
                "scaling for {} must be > 0",
                FEATURE_NAMES[i]
            ))),
            None => Ok(()),
        }
    }
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn scale(fv: &FeatureVector, omega: &FeatureScaling) -> FeatureVector {
    let mut out = *fv;
    for (v, w) in out.0.iter_mut().zip(omega.0.iter()) {
        *v *= w;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerInfo {
    pub triggered: bool,
    /// Trigger time; meaningful only when `triggered`.
    pub time: f64,
    /// End of the reaction window, clamped to the trajectory end.
    pub window_end: f64,
}

impl TriggerInfo {
    pub fn none() -> Self {
        Self {
            triggered: false,
            time: f64::NAN,
            window_end: f64::NAN,
        }
    }

    /// Trigger at `time` with a reaction window clamped to `end`.
    pub fn at(time: f64, reaction_time: f64, end: f64) -> Self {
        Self {
            triggered: true,
            time,
            window_end: (time + reaction_time).min(end),
        }
    }
}

/// Lane targets and speeds the lane and speed features are measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneContext {
    /// Desired longitudinal speed (m/s).
    pub v_des: f64,
    /// Limit speed of the target lane (m/s).
    pub v_lane: f64,
    pub l_des: f64,
    pub l_initial: f64,
    pub l_target: f64,
    pub lane_width: f64,
    /// Fixed end of the initial-lane window. When `None` it is the first knot
    /// where the EV is more than a quarter lane from `l_initial` (or the
    /// trajectory end if that never happens).
    pub turn_time: Option<f64>,
}

/// Elliptical index `dx^2 / l_a^2 + dy^2 / l_b^2`.
#[inline]
pub fn elliptical_index(dx: f64, dy: f64, l_a: f64, l_b: f64) -> f64 {
    dx * dx / (l_a * l_a) + dy * dy / (l_b * l_b)
}

/// Scan the elliptical index on the EV knot grid; trigger at the first knot
/// where it falls below `lambda`.
pub fn detect_trigger(
    ev: &SplineTrajectory,
    tv: &SplineTrajectory,
    l_a: f64,
    l_b: f64,
    lambda: f64,
    reaction_time: f64,
) -> TriggerInfo {
    trigger_on_view(ev.view(), tv, l_a, l_b, lambda, reaction_time)
}

pub(crate) fn trigger_on_view(
    ev: SplineView<'_>,
    tv: &SplineTrajectory,
    l_a: f64,
    l_b: f64,
    lambda: f64,
    reaction_time: f64,
) -> TriggerInfo {
    for (t, c) in ev.knots.iter().zip(ev.points) {
        let (tx, ty) = tv.eval_unchecked(*t, 0);
        if elliptical_index(c.rx - tx, c.ry - ty, l_a, l_b) < lambda {
            let end = snap_to_knot((t + reaction_time).min(ev.end()), ev.knots);
            return TriggerInfo {
                triggered: true,
                time: *t,
                window_end: end,
            };
        }
    }
    TriggerInfo::none()
}

/// Elliptical index at every EV knot.
pub fn elliptical_index_series(
    ev: &SplineTrajectory,
    tv: &SplineTrajectory,
    l_a: f64,
    l_b: f64,
) -> Vec<f64> {
    ev.knots()
        .iter()
        .zip(ev.control_points())
        .map(|(t, c)| {
            let (tx, ty) = tv.eval_unchecked(*t, 0);
            elliptical_index(c.rx - tx, c.ry - ty, l_a, l_b)
        })
        .collect()
}

fn snap_to_knot(t: f64, knots: &[f64]) -> f64 {
    let i = knots.partition_point(|&k| k < t);
    for j in [i.saturating_sub(1), i.min(knots.len() - 1)] {
        if (knots[j] - t).abs() <= 1e-9 * t.abs().max(1.0) {
            return knots[j];
        }
    }
    t
}

/// Integration windows that depend on the trajectory itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Windows {
    pub turn_time: f64,
    pub end_lane_start: f64,
    pub trigger: TriggerInfo,
    /// Knot index of the trigger time, when triggered.
    pub trigger_knot: Option<usize>,
}

pub(crate) fn turn_time(ev: SplineView<'_>, ctx: &LaneContext) -> f64 {
    if let Some(t) = ctx.turn_time {
        return t;
    }
    let threshold = 0.25 * ctx.lane_width;
    ev.knots
        .iter()
        .zip(ev.points)
        .find(|(_, c)| (c.ry - ctx.l_initial).abs() > threshold)
        .map(|(t, _)| *t)
        .unwrap_or_else(|| ev.end())
}

pub(crate) fn windows(ev: SplineView<'_>, ctx: &LaneContext, trigger: TriggerInfo) -> Windows {
    let trigger_knot = if trigger.triggered {
        ev.knots.iter().position(|k| *k == trigger.time)
    } else {
        None
    };
    Windows {
        turn_time: turn_time(ev, ctx),
        end_lane_start: snap_to_knot((ev.end() - 1.0).max(ev.knots[0]), ev.knots),
        trigger,
        trigger_knot,
    }
}

/// Integral contributions of one segment `[t0, t0 + h]`; point features are zero.
/// The flag reports whether the TIV gap clamp was hit.
pub(crate) fn segment_terms(
    seg: &Segment,
    t0: f64,
    t1: f64,
    tv: &SplineTrajectory,
    ctx: &LaneContext,
    win: &Windows,
    trigger_y: f64,
) -> ([f64; FEATURE_COUNT], bool) {
    let h = t1 - t0;
    let mut out = [0.0; FEATURE_COUNT];
    let mut clamped = false;

    out[0] = gauss_legendre5(0.0, h, |u| {
        let a = seg.eval(u, 2).0;
        a * a
    });
    out[1] = gauss_legendre5(0.0, h, |u| {
        let a = seg.eval(u, 2).1;
        a * a
    });
    out[2] = gauss_legendre5(0.0, h, |u| {
        let d = ctx.v_des - seg.eval(u, 1).0;
        d * d
    });
    out[6] = gauss_legendre5(0.0, h, |u| {
        let gap = (tv.eval_unchecked(t0 + u, 0).0 - seg.eval(u, 0).0).abs();
        if gap < MIN_TIV_GAP {
            clamped = true;
        }
        ctx.v_lane / gap.max(MIN_TIV_GAP)
    });

    // Shared trapezoid grid for the |.| integrands over the whole segment.
    let n = TRAPEZOID_STEPS;
    let mut ys = [0.0; TRAPEZOID_STEPS + 1];
    for (i, y) in ys.iter_mut().enumerate() {
        *y = seg.eval_y(h * i as f64 / n as f64);
    }
    let full = |target: f64| -> f64 {
        let mut acc = 0.5 * ((target - ys[0]).abs() + (target - ys[n]).abs());
        for y in &ys[1..n] {
            acc += (target - y).abs();
        }
        acc * h / n as f64
    };
    let window = |a: f64, b: f64, target: f64| -> f64 {
        let lo = a.max(t0);
        let hi = b.min(t1);
        if hi <= lo {
            0.0
        } else if lo == t0 && hi == t1 {
            full(target)
        } else {
            trapezoid(lo - t0, hi - t0, n, |u| (target - seg.eval_y(u)).abs())
        }
    };

    out[3] = full(ctx.l_des);
    out[4] = window(f64::NEG_INFINITY, win.turn_time, ctx.l_initial);
    out[5] = window(win.end_lane_start, f64::INFINITY, ctx.l_target);
    if win.trigger.triggered {
        out[9] = window(win.trigger.time, win.trigger.window_end, trigger_y);
    }
    (out, clamped)
}

/// Start- and end-distance features.
pub(crate) fn point_terms(ev: SplineView<'_>, tv: &SplineTrajectory, win: &Windows) -> (f64, f64) {
    if !win.trigger.triggered {
        return (0.0, 0.0);
    }
    let lateral = |t: f64| (ev.eval(t, 0).1 - tv.eval_unchecked(t, 0).1).abs();
    (
        (-lateral(win.trigger.time)).exp(),
        (-lateral(win.trigger.window_end)).exp(),
    )
}

/// Sum all contributions for an EV view under fixed windows.
pub(crate) fn evaluate_view(
    ev: SplineView<'_>,
    tv: &SplineTrajectory,
    ctx: &LaneContext,
    win: &Windows,
) -> (FeatureVector, bool) {
    let trigger_y = if win.trigger.triggered {
        ev.eval(win.trigger.time, 0).1
    } else {
        0.0
    };
    let mut total = [0.0; FEATURE_COUNT];
    let mut clamped = false;
    for (j, seg) in ev.segments.iter().enumerate() {
        let (terms, c) = segment_terms(seg, ev.knots[j], ev.knots[j + 1], tv, ctx, win, trigger_y);
        clamped |= c;
        for (t, v) in total.iter_mut().zip(terms) {
            *t += v;
        }
    }
    let (sd, ed) = point_terms(ev, tv, win);
    total[7] = sd;
    total[8] = ed;
    (FeatureVector(total), clamped)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureReport {
    /// Unscaled feature values.
    pub values: FeatureVector,
    /// True when the EV/TV longitudinal gap fell below [`MIN_TIV_GAP`].
    pub gap_clamped: bool,
    pub turn_time: f64,
    pub trigger: TriggerInfo,
}

/// Unscaled features of `ev` against `tv` for a given trigger.
pub fn compute_features(
    ev: &SplineTrajectory,
    tv: &SplineTrajectory,
    ctx: &LaneContext,
    trig: &TriggerInfo,
) -> Result<FeatureReport> {
    if ev.start() < tv.start() - 1e-9 || ev.end() > tv.end() + 1e-9 {
        return Err(Error::invalid(format!(
            "TV trajectory [{}, {}] does not cover EV trajectory [{}, {}]",
            tv.start(),
            tv.end(),
            ev.start(),
            ev.end()
        )));
    }
    if trig.triggered && !(trig.time >= ev.start() && trig.time <= ev.end()) {
        return Err(Error::invalid(format!(
            "trigger time {} outside trajectory domain",
            trig.time
        )));
    }
    let mut trigger = *trig;
    if trigger.triggered {
        trigger.window_end = snap_to_knot(trigger.window_end.min(ev.end()), ev.knots());
    }
    let win = windows(ev.view(), ctx, trigger);
    let (values, gap_clamped) = evaluate_view(ev.view(), tv, ctx, &win);
    Ok(FeatureReport {
        values,
        gap_clamped,
        turn_time: win.turn_time,
        trigger,
    })
}

/// TV trajectory together with every parameter the features need.
#[derive(Debug, Clone)]
pub struct FeatureModel {
    pub tv: SplineTrajectory,
    pub lane: LaneContext,
    /// Safety ellipse semi-axes used by the elliptical index (m).
    pub semi_major: f64,
    pub semi_minor: f64,
    pub lambda: f64,
    pub reaction_time: f64,
    pub scaling: FeatureScaling,
}

impl FeatureModel {
    pub fn detect_trigger(&self, ev: &SplineTrajectory) -> TriggerInfo {
        detect_trigger(
            ev,
            &self.tv,
            self.semi_major,
            self.semi_minor,
            self.lambda,
            self.reaction_time,
        )
    }

    pub(crate) fn trigger_for_view(&self, ev: SplineView<'_>) -> TriggerInfo {
        trigger_on_view(
            ev,
            &self.tv,
            self.semi_major,
            self.semi_minor,
            self.lambda,
            self.reaction_time,
        )
    }

    /// Unscaled features with the trigger recomputed from `ev`.
    pub fn evaluate(&self, ev: &SplineTrajectory) -> Result<FeatureReport> {
        compute_features(ev, &self.tv, &self.lane, &self.detect_trigger(ev))
    }

    /// Scaled features with the trigger recomputed from `ev`.
    pub fn scaled(&self, ev: &SplineTrajectory) -> Result<FeatureVector> {
        Ok(self.evaluate(ev)?.values.scaled(&self.scaling))
    }
}
