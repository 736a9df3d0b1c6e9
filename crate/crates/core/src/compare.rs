//! Lateral gap metrics between two trajectories matched at equal `x`.

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::spline::SplineTrajectory;

/// Evaluation points in the common `x` range.
pub const COMPARE_SAMPLES: usize = 1001;

/// Polyline samples per spline segment used to bracket `x(t) = x`.
const BRACKET_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Common `x` range the metrics were computed over.
    pub x_range: (f64, f64),
    pub max_lateral_gap: f64,
    /// `x` where the largest gap occurs.
    pub max_gap_x: f64,
    pub lateral_rmse: f64,
    pub feature_l2: Option<f64>,
}

impl Comparison {
    pub fn with_features(mut self, a: &FeatureVector, b: &FeatureVector) -> Self {
        self.feature_l2 = Some(a.sub(b).norm());
        self
    }
}

/// Lateral position as a function of `x` for a forward-moving trajectory.
struct LateralProfile<'a> {
    traj: &'a SplineTrajectory,
    ts: Vec<f64>,
    xs: Vec<f64>,
}

impl<'a> LateralProfile<'a> {
    fn new(traj: &'a SplineTrajectory, name: &str) -> Result<Self> {
        let knots = traj.knots();
        let mut ts = Vec::with_capacity((knots.len() - 1) * BRACKET_SAMPLES + 1);
        for w in knots.windows(2) {
            for k in 0..BRACKET_SAMPLES {
                ts.push(w[0] + (w[1] - w[0]) * k as f64 / BRACKET_SAMPLES as f64);
            }
        }
        ts.push(traj.end());
        let xs: Vec<f64> = ts
            .iter()
            .map(|t| traj.evaluate(*t, 0).map(|p| p.0))
            .collect::<Result<_>>()?;
        if let Some(i) = xs.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "trajectory {name} does not move forward in x near t = {}",
                ts[i]
            )));
        }
        Ok(Self { traj, ts, xs })
    }

    fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn y_at(&self, x: f64) -> f64 {
        let i = self
            .xs
            .partition_point(|v| *v <= x)
            .clamp(1, self.xs.len() - 1);
        let (mut lo, mut hi) = (self.ts[i - 1], self.ts[i]);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.traj.eval_unchecked(mid, 0).0 < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.traj.eval_unchecked(0.5 * (lo + hi), 0).1
    }
}

/// Compare lateral positions at equal `x`, optionally restricted to `x_window`.
pub fn compare_trajectories(
    a: &SplineTrajectory,
    b: &SplineTrajectory,
    x_window: Option<(f64, f64)>,
) -> Result<Comparison> {
    let pa = LateralProfile::new(a, "a")?;
    let pb = LateralProfile::new(b, "b")?;
    let (a0, a1) = pa.x_range();
    let (b0, b1) = pb.x_range();
    let mut lo = a0.max(b0);
    let mut hi = a1.min(b1);
    if let Some((w0, w1)) = x_window {
        if !(w0 < w1) {
            return Err(Error::invalid(format!("empty x window [{w0}, {w1}]")));
        }
        lo = lo.max(w0);
        hi = hi.min(w1);
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!(
            "x ranges do not overlap: a [{a0}, {a1}], b [{b0}, {b1}]{}",
            x_window
                .map(|(w0, w1)| format!(", window [{w0}, {w1}]"))
                .unwrap_or_default()
        )));
    }
    let mut max_gap = 0.0f64;
    let mut max_x = lo;
    let mut sq = 0.0;
    for k in 0..COMPARE_SAMPLES {
        let x = lo + (hi - lo) * k as f64 / (COMPARE_SAMPLES - 1) as f64;
        let gap = (pa.y_at(x) - pb.y_at(x)).abs();
        if gap > max_gap {
            max_gap = gap;
            max_x = x;
        }
        sq += gap * gap;
    }
    Ok(Comparison {
        x_range: (lo, hi),
        max_lateral_gap: max_gap,
        max_gap_x: max_x,
        lateral_rmse: (sq / COMPARE_SAMPLES as f64).sqrt(),
        feature_l2: None,
    })
}
