//! Scenario configuration.
//!
//! The file format is flat `key = value` text with dotted section keys. `#`
//! starts a comment, lists are comma separated, and an empty value selects the
//! default of an optional key. Unknown keys are rejected.
//!
//! ```text
//! smpc.p = 0.7
//! smpc.q = 1e-6, 0.2, 50, 0.2
//! smpc.sigma0 =            # default 0.2
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::dynamics::{Interval, StateInputBounds, VehicleGeometry, VehicleState};
use crate::error::{Error, Result};
use crate::features::{FeatureScaling, LaneContext};
use crate::learner::FeatureSet;
use crate::smpc::{OcpWeights, SafetyEllipse};

const BUNDLED_SCENARIO: &str = include_str!("../../../paper.scenario");

#[derive(Debug, Clone, PartialEq)]
pub struct SmpcConfig {
    pub horizon: usize,
    /// Sampling time (s).
    pub ts: f64,
    /// Total duration (s); the run has `duration / ts` samples.
    pub duration: f64,
    pub weights: OcpWeights,
    pub bounds: StateInputBounds,
    pub ellipse: SafetyEllipse,
    /// TV position standard deviation at the first prediction step offset (m).
    pub sigma0: f64,
    /// Growth of the TV standard deviation per prediction step (m).
    pub sigma_growth: f64,
    /// Cap on quasi-Newton iterations per OCP solve, summed over multiplier rounds.
    pub max_iterations: usize,
    /// Constraint violation and projected-gradient tolerance.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// Elliptical-index trigger threshold.
    pub lambda: f64,
    /// Reaction window length (s).
    pub reaction_time: f64,
    pub scaling: FeatureScaling,
    /// Initial learning rate.
    pub alpha: f64,
    /// Termination threshold on the change of the learning error.
    pub epsilon_bar: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tolerance: f64,
    /// Reuse the demonstration's trigger instead of recomputing it per iterate.
    pub freeze_trigger: bool,
    pub feature_set: FeatureSet,
    /// Initial value of every weight component.
    pub theta_init: f64,
    pub seed: u64,
    /// Randomized restarts of the inner optimizer (0 disables).
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub lane_width: f64,
    pub lane_count: usize,
    pub vehicle: VehicleGeometry,
    pub ev: VehicleState,
    pub tv: VehicleState,
    pub smpc: SmpcConfig,
    /// `turn_time` is always `None` here; it is derived from each trajectory.
    pub lane: LaneContext,
    pub learner: LearnerConfig,
}

impl ScenarioConfig {
    /// The shipped two-vehicle lane-change scenario.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SCENARIO, "paper.scenario").expect("bundled scenario is valid")
    }

    pub fn bundled_text() -> &'static str {
        BUNDLED_SCENARIO
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| crate::io::with_path(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut f = Fields::parse(text, source_name)?;
        let cfg = ScenarioConfig {
            lane_width: f.req("road.lane_width")?,
            lane_count: f.req_usize("road.lane_count")?,
            vehicle: VehicleGeometry {
                l_f: f.req("vehicle.l_f")?,
                l_r: f.req("vehicle.l_r")?,
                length: f.req("vehicle.length")?,
                width: f.req("vehicle.width")?,
            },
            ev: f.state("ev")?,
            tv: f.state("tv")?,
            smpc: SmpcConfig {
                horizon: f.req_usize("smpc.horizon")?,
                ts: f.req("smpc.ts")?,
                duration: f.req("smpc.duration")?,
                weights: OcpWeights {
                    q: f.req_array("smpc.q")?,
                    r: f.req_array("smpc.r")?,
                    q_terminal: f.req_array("smpc.q_terminal")?,
                },
                bounds: StateInputBounds {
                    y: f.interval("bounds.y")?,
                    phi: f.interval("bounds.phi")?,
                    v: f.interval("bounds.v")?,
                    a: f.interval("bounds.a")?,
                    delta: f.interval("bounds.delta")?,
                },
                ellipse: SafetyEllipse {
                    semi_major: f.req("ellipse.semi_major")?,
                    semi_minor: f.req("ellipse.semi_minor")?,
                    risk: f.req("smpc.p")?,
                },
                sigma0: f.opt("smpc.sigma0", 0.2)?,
                sigma_growth: f.opt("smpc.sigma_growth", 1.2)?,
                max_iterations: f.opt_usize("smpc.max_iterations", 200)?,
                tolerance: f.opt("smpc.tolerance", 1e-6)?,
            },
            lane: LaneContext {
                v_des: f.req("lane.v_des")?,
                v_lane: f.opt_or("lane.v_lane", "lane.v_des")?,
                l_des: f.req("lane.l_des")?,
                l_initial: f.req("lane.l_initial")?,
                l_target: f.req("lane.l_target")?,
                lane_width: 0.0,
                turn_time: None,
            },
            learner: LearnerConfig {
                lambda: f.opt("learner.lambda", 1.82)?,
                reaction_time: f.opt("learner.reaction_time", 2.0)?,
                scaling: FeatureScaling(
                    f.opt_array("learner.scaling", FeatureScaling::standard().0)?,
                ),
                alpha: f.opt("learner.alpha", 0.05)?,
                epsilon_bar: f.opt("learner.epsilon_bar", 0.01)?,
                max_outer: f.opt_usize("learner.max_outer", 100)?,
                max_inner: f.opt_usize("learner.max_inner", 300)?,
                inner_tolerance: f.opt("learner.inner_tolerance", 1e-6)?,
                freeze_trigger: f.opt_bool("learner.freeze_trigger", false)?,
                feature_set: match f.opt_usize("learner.features", 10)? {
                    10 => FeatureSet::Full,
                    6 => FeatureSet::Reduced,
                    n => {
                        return Err(Error::config(
                            "learner.features",
                            format!("must be 6 or 10, got {n}"),
                        ))
                    }
                },
                theta_init: f.opt("learner.theta_init", 1.0)?,
                seed: f.opt_usize("learner.seed", 0)? as u64,
                restarts: f.opt_usize("learner.restarts", 0)?,
            },
        };
        f.finish()?;
        let mut cfg = cfg;
        cfg.lane.lane_width = cfg.lane_width;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        };
        positive("road.lane_width", self.lane_width)?;
        if self.lane_count == 0 {
            return Err(Error::config("road.lane_count", "must be >= 1"));
        }
        self.vehicle
            .validate()
            .map_err(|e| Error::config("vehicle", e.to_string()))?;
        for (key, s) in [("ev", &self.ev), ("tv", &self.tv)] {
            if !s.is_finite() {
                return Err(Error::config(key, "initial state must be finite"));
            }
        }
        let s = &self.smpc;
        if s.horizon == 0 {
            return Err(Error::config("smpc.horizon", "N must be >= 1"));
        }
        positive("smpc.ts", s.ts)?;
        positive("smpc.duration", s.duration)?;
        let ratio = s.duration / s.ts;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(
                "smpc.duration",
                format!(
                    "T = {} is not a positive multiple of Ts = {}",
                    s.duration, s.ts
                ),
            ));
        }
        if self.sample_count() < 3 {
            return Err(Error::config("smpc.duration", "need at least 3 samples"));
        }
        let p = s.ellipse.risk;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::config(
                "smpc.p",
                format!("p must lie in (0, 1), got {p}"),
            ));
        }
        positive("ellipse.semi_major", s.ellipse.semi_major)?;
        positive("ellipse.semi_minor", s.ellipse.semi_minor)?;
        for (key, w) in [
            ("smpc.q", &s.weights.q[..]),
            ("smpc.r", &s.weights.r[..]),
            ("smpc.q_terminal", &s.weights.q_terminal[..]),
        ] {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(key, "weights must be finite and >= 0"));
            }
        }
        for (key, iv) in [
            ("bounds.y", s.bounds.y),
            ("bounds.phi", s.bounds.phi),
            ("bounds.v", s.bounds.v),
            ("bounds.a", s.bounds.a),
            ("bounds.delta", s.bounds.delta),
        ] {
            if !iv.is_well_formed() {
                return Err(Error::config(key, "min must not exceed max"));
            }
        }
        if !(s.sigma0 >= 0.0 && s.sigma0.is_finite()) {
            return Err(Error::config("smpc.sigma0", "must be >= 0"));
        }
        if !(s.sigma_growth >= 0.0 && s.sigma_growth.is_finite()) {
            return Err(Error::config("smpc.sigma_growth", "must be >= 0"));
        }
        positive("smpc.tolerance", s.tolerance)?;
        positive("lane.v_lane", self.lane.v_lane)?;
        let l = &self.learner;
        positive("learner.lambda", l.lambda)?;
        positive("learner.reaction_time", l.reaction_time)?;
        positive("learner.alpha", l.alpha)?;
        if !(l.epsilon_bar > 0.0) {
            return Err(Error::config("learner.epsilon_bar", "must be > 0"));
        }
        l.scaling
            .validate()
            .map_err(|e| Error::config("learner.scaling", e.to_string()))?;
        if !(l.theta_init >= 0.0 && l.theta_init.is_finite()) {
            return Err(Error::config("learner.theta_init", "must be >= 0"));
        }
        if l.max_outer == 0 {
            return Err(Error::config("learner.max_outer", "must be >= 1"));
        }
        positive("learner.inner_tolerance", l.inner_tolerance)?;
        Ok(())
    }

    /// Number of closed-loop samples including the initial state.
    pub fn sample_count(&self) -> usize {
        (self.smpc.duration / self.smpc.ts).round() as usize
    }

    /// Lateral coordinate of the center of lane `i` (0 = rightmost).
    pub fn lane_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.lane_width
    }

    /// Set a single key from its textual value, as in a scenario file.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let text = format!("{}\n{key} = {value}\n", self.to_text_without(key));
        Self::parse(&text, "override")
    }

    /// Serialize back to the scenario format; parsing the result yields `self`.
    pub fn to_text(&self) -> String {
        self.to_text_without("")
    }

    fn to_text_without(&self, skip: &str) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let s = &self.smpc;
        let l = &self.learner;
        let entries: Vec<(&str, String)> = vec![
            ("road.lane_width", format!("{:e}", self.lane_width)),
            ("road.lane_count", self.lane_count.to_string()),
            ("vehicle.l_f", format!("{:e}", self.vehicle.l_f)),
            ("vehicle.l_r", format!("{:e}", self.vehicle.l_r)),
            ("vehicle.length", format!("{:e}", self.vehicle.length)),
            ("vehicle.width", format!("{:e}", self.vehicle.width)),
            ("ev.x", format!("{:e}", self.ev.x)),
            ("ev.y", format!("{:e}", self.ev.y)),
            ("ev.phi", format!("{:e}", self.ev.phi)),
            ("ev.v", format!("{:e}", self.ev.v)),
            ("tv.x", format!("{:e}", self.tv.x)),
            ("tv.y", format!("{:e}", self.tv.y)),
            ("tv.phi", format!("{:e}", self.tv.phi)),
            ("tv.v", format!("{:e}", self.tv.v)),
            ("smpc.horizon", s.horizon.to_string()),
            ("smpc.ts", format!("{:e}", s.ts)),
            ("smpc.duration", format!("{:e}", s.duration)),
            ("smpc.p", format!("{:e}", s.ellipse.risk)),
            ("smpc.q", list(&s.weights.q)),
            ("smpc.r", list(&s.weights.r)),
            ("smpc.q_terminal", list(&s.weights.q_terminal)),
            ("bounds.y", list(&[s.bounds.y.min, s.bounds.y.max])),
            ("bounds.phi", list(&[s.bounds.phi.min, s.bounds.phi.max])),
            ("bounds.v", list(&[s.bounds.v.min, s.bounds.v.max])),
            ("bounds.a", list(&[s.bounds.a.min, s.bounds.a.max])),
            (
                "bounds.delta",
                list(&[s.bounds.delta.min, s.bounds.delta.max]),
            ),
            ("ellipse.semi_major", format!("{:e}", s.ellipse.semi_major)),
            ("ellipse.semi_minor", format!("{:e}", s.ellipse.semi_minor)),
            ("smpc.sigma0", format!("{:e}", s.sigma0)),
            ("smpc.sigma_growth", format!("{:e}", s.sigma_growth)),
            ("smpc.max_iterations", s.max_iterations.to_string()),
            ("smpc.tolerance", format!("{:e}", s.tolerance)),
            ("lane.v_des", format!("{:e}", self.lane.v_des)),
            ("lane.v_lane", format!("{:e}", self.lane.v_lane)),
            ("lane.l_des", format!("{:e}", self.lane.l_des)),
            ("lane.l_initial", format!("{:e}", self.lane.l_initial)),
            ("lane.l_target", format!("{:e}", self.lane.l_target)),
            ("learner.lambda", format!("{:e}", l.lambda)),
            ("learner.reaction_time", format!("{:e}", l.reaction_time)),
            ("learner.scaling", list(&l.scaling.0)),
            ("learner.alpha", format!("{:e}", l.alpha)),
            ("learner.epsilon_bar", format!("{:e}", l.epsilon_bar)),
            ("learner.max_outer", l.max_outer.to_string()),
            ("learner.max_inner", l.max_inner.to_string()),
            (
                "learner.inner_tolerance",
                format!("{:e}", l.inner_tolerance),
            ),
            ("learner.freeze_trigger", l.freeze_trigger.to_string()),
            ("learner.features", l.feature_set.size().to_string()),
            ("learner.theta_init", format!("{:e}", l.theta_init)),
            ("learner.seed", l.seed.to_string()),
            ("learner.restarts", l.restarts.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            if k != skip {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// Parsed key/value pairs; keys are removed as they are consumed.
struct Fields {
    values: BTreeMap<String, String>,
}

impl Fields {
    fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                row: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(parse_err(format!("invalid key `{key}`")));
            }
            if values
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { values })
    }

    /// Remove `key`, mapping an empty value to `None`.
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key).filter(|v| !v.is_empty())
    }

    fn number(key: &str, s: &str) -> Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::config(key, format!("`{s}` is not a number")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::config(key, "must be finite"))
        }
    }

    fn req(&mut self, key: &str) -> Result<f64> {
        match self.take(key) {
            Some(s) => Self::number(key, &s),
            None => Err(Error::config(key, "missing required key")),
        }
    }

    fn opt(&mut self, key: &str, default: f64) -> Result<f64> {
        self.take(key)
            .map_or(Ok(default), |s| Self::number(key, &s))
    }

    fn opt_or(&mut self, key: &str, fallback: &str) -> Result<f64> {
        let default = match self.values.get(fallback) {
            Some(s) if !s.is_empty() => Self::number(fallback, s)?,
            _ => return self.req(key),
        };
        self.opt(key, default)
    }

    fn count(key: &str, s: &str) -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::config(key, format!("`{s}` is not a non-negative integer")))
    }

    fn req_usize(&mut self, key: &str) -> Result<usize> {
        match self.take(key) {
            Some(s) => Self::count(key, &s),
            None => Err(Error::config(key, "missing required key")),
        }
    }

    fn opt_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.take(key).map_or(Ok(default), |s| Self::count(key, &s))
    }

    fn opt_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(Error::config(key, format!("`{s}` is not true/false"))),
        }
    }

    fn list<const N: usize>(key: &str, s: &str) -> Result<[f64; N]> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != N {
            return Err(Error::config(
                key,
                format!("expected {N} comma-separated values, got {}", parts.len()),
            ));
        }
        let mut out = [0.0; N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = Self::number(key, p)?;
        }
        Ok(out)
    }

    fn req_array<const N: usize>(&mut self, key: &str) -> Result<[f64; N]> {
        match self.take(key) {
            Some(s) => Self::list(key, &s),
            None => Err(Error::config(key, "missing required key")),
        }
    }

    fn opt_array<const N: usize>(&mut self, key: &str, default: [f64; N]) -> Result<[f64; N]> {
        self.take(key).map_or(Ok(default), |s| Self::list(key, &s))
    }

    fn interval(&mut self, key: &str) -> Result<Interval> {
        let [min, max] = self.req_array::<2>(key)?;
        Ok(Interval::new(min, max))
    }

    fn state(&mut self, prefix: &str) -> Result<VehicleState> {
        Ok(VehicleState::new(
            self.req(&format!("{prefix}.x"))?,
            self.req(&format!("{prefix}.y"))?,
            self.req(&format!("{prefix}.phi"))?,
            self.req(&format!("{prefix}.v"))?,
        ))
    }

    fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}
