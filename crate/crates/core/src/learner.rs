//! Bilevel weight learning.
//!
//! The inner problem reproduces a trajectory by minimizing the weighted scaled
//! feature cost over the control points `c_1..c_S` (the first control point is
//! held at the demonstration's). The outer loop moves the weights by the
//! difference between reproduced and demonstrated scaled features until the
//! learning error stops changing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{
    evaluate_view, point_terms, segment_terms, windows, Feature, FeatureModel, FeatureVector,
    TriggerInfo, Windows, FEATURE_COUNT,
};
use crate::optim::{self, Objective, Termination};
use crate::scenario::{LearnerConfig, ScenarioConfig};
use crate::smpc::DemonstrationRecord;
use crate::spline::{segment_between, ControlPoint, Segment, SplineTrajectory, SplineView};

/// Which features the learner matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// The six features without the TV interaction terms.
    Reduced,
    Full,
}

impl FeatureSet {
    pub fn size(&self) -> usize {
        match self {
            FeatureSet::Reduced => 6,
            FeatureSet::Full => FEATURE_COUNT,
        }
    }

    pub fn contains(&self, f: Feature) -> bool {
        f.index() < self.size()
    }

    /// Zero the components outside the set.
    pub fn restrict(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = *v;
        out.0[self.size()..].iter_mut().for_each(|x| *x = 0.0);
        out
    }
}

/// Nonnegative feature weights, ordered as [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightVector(pub [f64; FEATURE_COUNT]);

impl WeightVector {
    pub fn zeros() -> Self {
        Self([0.0; FEATURE_COUNT])
    }

    pub fn constant(v: f64) -> Self {
        Self([v; FEATURE_COUNT])
    }

    pub fn unit(f: Feature) -> Self {
        let mut w = Self::zeros();
        w.0[f.index()] = 1.0;
        w
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `theta + alpha * step`, projected onto the nonnegative orthant.
    pub fn updated(&self, alpha: f64, step: &FeatureVector) -> Self {
        let mut out = *self;
        for (w, s) in out.0.iter_mut().zip(step.0.iter()) {
            *w = (*w + alpha * s).max(0.0);
        }
        out
    }

    /// Cost `theta . f` of already scaled features.
    pub fn cost(&self, scaled: &FeatureVector) -> f64 {
        scaled.dot(&self.0)
    }
}

/// Demonstrated EV trajectory with the TV trajectory it reacted to.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub ev: SplineTrajectory,
    pub tv: SplineTrajectory,
}

impl Demonstration {
    pub fn from_record(record: &DemonstrationRecord) -> Result<Self> {
        Ok(Self {
            ev: record.ev_spline()?,
            tv: record.tv_spline()?,
        })
    }
}

/// Feature model for a scenario and a TV trajectory.
pub fn feature_model(cfg: &ScenarioConfig, tv: SplineTrajectory) -> FeatureModel {
    FeatureModel {
        tv,
        lane: cfg.lane,
        semi_major: cfg.smpc.ellipse.semi_major,
        semi_minor: cfg.smpc.ellipse.semi_minor,
        lambda: cfg.learner.lambda,
        reaction_time: cfg.learner.reaction_time,
        scaling: cfg.learner.scaling,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOptions {
    pub max_iterations: usize,
    /// Relative objective change below which the search stops.
    pub tolerance: f64,
    /// Trigger used instead of recomputing one from each iterate.
    pub frozen_trigger: Option<TriggerInfo>,
    pub restarts: usize,
    pub seed: u64,
}

impl InnerOptions {
    pub fn from_config(cfg: &LearnerConfig) -> Self {
        Self {
            max_iterations: cfg.max_inner,
            tolerance: cfg.inner_tolerance,
            frozen_trigger: None,
            restarts: cfg.restarts,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub trajectory: SplineTrajectory,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Finite-difference step per unit of scaled variable.
const FD_STEP: f64 = 1e-6;

/// Weighted feature cost over the free control points `c_1..c_S`.
///
/// Variables are the control-point components with velocities multiplied by
/// `h` and accelerations by `h^2`, which balances their effect on a segment.
/// Values recompute the trigger and lane windows; gradients are central
/// differences with the windows of the current iterate held fixed, i.e. the
/// gradient of the active smooth piece.
pub struct InnerObjective<'a> {
    model: &'a FeatureModel,
    /// `theta * omega` per feature.
    weights: [f64; FEATURE_COUNT],
    frozen: Option<TriggerInfo>,
    knots: Vec<f64>,
    points: Vec<ControlPoint>,
    segments: Vec<Segment>,
    scale: [f64; 6],
}

impl<'a> InnerObjective<'a> {
    pub fn new(
        model: &'a FeatureModel,
        theta: &WeightVector,
        init: &SplineTrajectory,
        frozen: Option<TriggerInfo>,
    ) -> Self {
        let mut weights = [0.0; FEATURE_COUNT];
        for (i, w) in weights.iter_mut().enumerate() {
            *w = theta.0[i] * model.scaling.0[i];
        }
        let knots = init.knots().to_vec();
        let h = (knots[knots.len() - 1] - knots[0]) / (knots.len() - 1) as f64;
        Self {
            model,
            weights,
            frozen,
            points: init.control_points().to_vec(),
            segments: init.segments().to_vec(),
            knots,
            scale: [1.0, 1.0 / h, 1.0 / (h * h), 1.0, 1.0 / h, 1.0 / (h * h)],
        }
    }

    /// Number of free variables, six per control point after the first.
    pub fn dim(&self) -> usize {
        6 * (self.points.len() - 1)
    }

    /// Scaled variables of the current control points.
    pub fn encode(&self) -> Vec<f64> {
        self.points[1..]
            .iter()
            .flat_map(|c| {
                let a = c.to_array();
                (0..6).map(move |k| a[k] / self.scale[k])
            })
            .collect()
    }

    fn load(&mut self, z: &[f64]) {
        for (j, chunk) in z.chunks(6).enumerate() {
            let mut a = [0.0; 6];
            for k in 0..6 {
                a[k] = chunk[k] * self.scale[k];
            }
            self.points[j + 1] = ControlPoint::from_array(a);
        }
        for j in 0..self.segments.len() {
            self.refit(j);
        }
    }

    fn refit(&mut self, j: usize) {
        self.segments[j] = segment_between(
            &self.points[j],
            &self.points[j + 1],
            self.knots[j + 1] - self.knots[j],
        );
    }

    fn view(&self) -> SplineView<'_> {
        SplineView {
            knots: &self.knots,
            points: &self.points,
            segments: &self.segments,
        }
    }

    fn current_windows(&self) -> Windows {
        let trigger = match self.frozen {
            Some(t) => t,
            None => self.model.trigger_for_view(self.view()),
        };
        windows(self.view(), &self.model.lane, trigger)
    }

    fn weighted(&self, terms: &[f64; FEATURE_COUNT]) -> f64 {
        terms.iter().zip(&self.weights).map(|(a, b)| a * b).sum()
    }

    fn trigger_y(&self, win: &Windows) -> f64 {
        if win.trigger.triggered {
            self.view().eval(win.trigger.time, 0).1
        } else {
            0.0
        }
    }

    fn segment_cost(&self, j: usize, win: &Windows, trigger_y: f64) -> f64 {
        let (terms, _) = segment_terms(
            &self.segments[j],
            self.knots[j],
            self.knots[j + 1],
            &self.model.tv,
            &self.model.lane,
            win,
            trigger_y,
        );
        self.weighted(&terms)
    }

    fn point_cost(&self, win: &Windows) -> f64 {
        let (sd, ed) = point_terms(self.view(), &self.model.tv, win);
        self.weights[Feature::StartDistance.index()] * sd
            + self.weights[Feature::EndDistance.index()] * ed
    }

    fn full_cost(&self) -> f64 {
        let win = self.current_windows();
        let (f, _) = evaluate_view(self.view(), &self.model.tv, &self.model.lane, &win);
        self.weighted(&f.0)
    }

    pub fn trajectory(&self) -> Result<SplineTrajectory> {
        SplineTrajectory::new(self.knots.clone(), self.points.clone())
    }

    /// Cost after setting component `k` of control point `j` to `value`, with
    /// the windows held at `base` and only the touched terms recomputed.
    #[allow(clippy::too_many_arguments)]
    fn perturbed_cost(
        &mut self,
        j: usize,
        k: usize,
        value: f64,
        base: &Windows,
        seg_costs: &[f64],
        base_total: f64,
        base_points: f64,
        trigger_y: f64,
    ) -> f64 {
        let mut a = self.points[j].to_array();
        let original = a[k];
        a[k] = value;
        self.points[j] = ControlPoint::from_array(a);
        let last = self.segments.len();
        self.refit(j - 1);
        if j < last {
            self.refit(j);
        }

        let cost = if k == 3 && base.trigger_knot == Some(j) {
            // The integral-distance reference moves with this knot.
            let (f, _) = evaluate_view(self.view(), &self.model.tv, &self.model.lane, base);
            self.weighted(&f.0)
        } else {
            let mut c = base_total - base_points - seg_costs[j - 1];
            c += self.segment_cost(j - 1, base, trigger_y);
            if j < last {
                c += self.segment_cost(j, base, trigger_y) - seg_costs[j];
            }
            c + self.point_cost(base)
        };

        a[k] = original;
        self.points[j] = ControlPoint::from_array(a);
        self.refit(j - 1);
        if j < last {
            self.refit(j);
        }
        cost
    }
}

impl Objective for InnerObjective<'_> {
    fn value(&mut self, z: &[f64]) -> f64 {
        self.load(z);
        self.full_cost()
    }

    fn value_and_gradient(&mut self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.load(z);
        let win = self.current_windows();
        let trigger_y = self.trigger_y(&win);
        let seg_costs: Vec<f64> = (0..self.segments.len())
            .map(|j| self.segment_cost(j, &win, trigger_y))
            .collect();
        let base_points = self.point_cost(&win);
        let total = seg_costs.iter().sum::<f64>() + base_points;

        for (i, g) in grad.iter_mut().enumerate() {
            let j = i / 6 + 1;
            let k = i % 6;
            let h = FD_STEP * z[i].abs().max(1.0);
            let x = z[i] * self.scale[k];
            let step = h * self.scale[k];
            let up = self.perturbed_cost(
                j,
                k,
                x + step,
                &win,
                &seg_costs,
                total,
                base_points,
                trigger_y,
            );
            let dn = self.perturbed_cost(
                j,
                k,
                x - step,
                &win,
                &seg_costs,
                total,
                base_points,
                trigger_y,
            );
            *g = (up - dn) / (2.0 * h);
        }
        total
    }
}

/// Minimize `theta . (Omega f(r))` starting from `init`, holding its first
/// control point fixed.
pub fn optimize_trajectory(
    theta: &WeightVector,
    init: &SplineTrajectory,
    model: &FeatureModel,
    opts: &InnerOptions,
) -> Result<InnerResult> {
    if !theta.is_finite() {
        return Err(Error::invalid("weights must be finite"));
    }
    let mut objective = InnerObjective::new(model, theta, init, opts.frozen_trigger);
    let z0 = objective.encode();
    let initial_cost = objective.value(&z0);
    if !initial_cost.is_finite() {
        return Err(Error::NoProgress(format!(
            "initial cost is not finite ({initial_cost})"
        )));
    }
    let lbfgs = optim::Options {
        max_iterations: opts.max_iterations,
        objective_tolerance: opts.tolerance,
        gradient_tolerance: 1e-9,
        ..optim::Options::default()
    };

    let mut best = optim::minimize(&mut objective, &z0, None, &lbfgs);
    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.restarts {
            let start: Vec<f64> = best
                .x
                .iter()
                .map(|v| v + 0.05 * v.abs().max(1.0) * rng.gen_range(-1.0..1.0))
                .collect();
            let m = optim::minimize(&mut objective, &start, None, &lbfgs);
            if m.value < best.value {
                best = m;
            }
        }
    }
    if best.termination == Termination::NonFinite {
        return Err(Error::NoProgress(
            "objective became non-finite during the search".into(),
        ));
    }
    // An unmoved search hands back `init` itself rather than a re-decoded copy.
    let (trajectory, cost) = if best.x == z0 {
        (init.clone(), initial_cost)
    } else {
        let cost = objective.value(&best.x);
        (objective.trajectory()?, cost)
    };
    Ok(InnerResult {
        trajectory,
        initial_cost,
        cost,
        iterations: best.iterations,
        termination: best.termination,
    })
}

/// Outer-loop gradient `Omega f(r*_theta) - Omega f(r_D)` restricted to `set`,
/// together with the inner result and its scaled features.
pub fn outer_gradient(
    theta: &WeightVector,
    demo_features: &FeatureVector,
    init: &SplineTrajectory,
    model: &FeatureModel,
    opts: &InnerOptions,
    set: FeatureSet,
) -> Result<(FeatureVector, InnerResult, FeatureVector)> {
    let inner = optimize_trajectory(theta, init, model, opts)?;
    let features = scaled_features(&inner.trajectory, model, opts.frozen_trigger)?;
    let gradient = set.restrict(&features.sub(demo_features));
    Ok((gradient, inner, features))
}

/// Scaled features with the trigger recomputed unless `frozen` is given.
pub fn scaled_features(
    ev: &SplineTrajectory,
    model: &FeatureModel,
    frozen: Option<TriggerInfo>,
) -> Result<FeatureVector> {
    let trigger = frozen.unwrap_or_else(|| model.detect_trigger(ev));
    let report = crate::features::compute_features(ev, &model.tv, &model.lane, &trigger)?;
    Ok(report.values.scaled(&model.scaling))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// Weights used for this iteration's inner problem.
    pub theta: WeightVector,
    /// Scaled features of the reproduced trajectory.
    pub features: FeatureVector,
    pub epsilon: f64,
    pub inner_iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct LearningOutcome {
    /// Weights with the smallest learning error seen.
    pub theta_star: WeightVector,
    pub history: Vec<HistoryEntry>,
    /// True when the error-increment rule stopped the loop before the cap.
    pub converged: bool,
    /// Trajectory reproduced under `theta_star`.
    pub reproduced: SplineTrajectory,
    pub demo_features: FeatureVector,
    pub best_iteration: usize,
}

impl LearningOutcome {
    pub fn best_epsilon(&self) -> f64 {
        self.history[self.best_iteration - 1].epsilon
    }
}

/// Learn weights whose reproduced trajectory matches the demonstration's
/// scaled features.
pub fn learn(demo: &Demonstration, cfg: &ScenarioConfig) -> Result<LearningOutcome> {
    cfg.validate()?;
    let lc = &cfg.learner;
    let set = lc.feature_set;
    let model = feature_model(cfg, demo.tv.clone());
    let demo_trigger = model.detect_trigger(&demo.ev);
    let mut opts = InnerOptions::from_config(lc);
    if lc.freeze_trigger {
        opts.frozen_trigger = Some(demo_trigger);
    }
    let demo_features = set.restrict(&scaled_features(&demo.ev, &model, Some(demo_trigger))?);

    let mut theta = WeightVector::constant(lc.theta_init);
    for i in set.size()..FEATURE_COUNT {
        theta.0[i] = 0.0;
    }
    let mut alpha = lc.alpha;
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut best: Option<(usize, SplineTrajectory)> = None;
    let mut converged = false;

    for iteration in 1..=lc.max_outer {
        let started = Instant::now();
        let (gradient, inner, features) =
            outer_gradient(&theta, &demo_features, &demo.ev, &model, &opts, set)?;
        let epsilon = gradient.norm();
        history.push(HistoryEntry {
            iteration,
            theta,
            features: set.restrict(&features),
            epsilon,
            inner_iterations: inner.iterations,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        let improved = match &best {
            Some((b, _)) => epsilon < history[b - 1].epsilon,
            None => true,
        };
        if improved {
            best = Some((iteration, inner.trajectory));
        }
        if let Some(prev) = history.iter().rev().nth(1).map(|h| h.epsilon) {
            if (epsilon - prev).abs() < lc.epsilon_bar {
                converged = true;
                break;
            }
            if epsilon > prev {
                alpha *= 0.5;
            }
        }
        theta = theta.updated(alpha, &gradient);
    }

    let (best_iteration, reproduced) = best.expect("at least one iteration");
    Ok(LearningOutcome {
        theta_star: history[best_iteration - 1].theta,
        history,
        converged,
        reproduced,
        demo_features,
        best_iteration,
    })
}
