//! CSV series for plotting trajectories, the elliptical index, kinematics
//! and the learning error. Each series is a pure function of its inputs.

use std::fmt::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::elliptical_index_series;
use crate::io::fmt_f64;
use crate::learner::HistoryEntry;
use crate::spline::SplineTrajectory;

/// Samples per segment for the kinematic curves.
pub const KIN_SAMPLES_PER_SEGMENT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    /// EV, TV and optional reproduced positions at the knots.
    Xy,
    /// Elliptical index against EV longitudinal position.
    Se,
    /// Velocities and accelerations on a fine time grid.
    Kin,
    /// Learning error per outer iteration.
    Eps,
}

impl FromStr for Series {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Series::Xy),
            "se" => Ok(Series::Se),
            "kin" => Ok(Series::Kin),
            "eps" => Ok(Series::Eps),
            other => Err(Error::invalid(format!(
                "unknown series `{other}` (expected xy, se, kin or eps)"
            ))),
        }
    }
}

fn push_row(out: &mut String, values: &[f64]) {
    let row: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn check_grid(a: &SplineTrajectory, b: &SplineTrajectory, what: &str) -> Result<()> {
    if a.knots() != b.knots() {
        return Err(Error::invalid(format!(
            "{what} trajectory does not share the demonstration's knots"
        )));
    }
    Ok(())
}

pub fn xy_series(
    demo: &SplineTrajectory,
    tv: &SplineTrajectory,
    reproduced: Option<&SplineTrajectory>,
) -> Result<String> {
    let mut out = String::from("t,ev_x,ev_y,tv_x,tv_y");
    if let Some(r) = reproduced {
        check_grid(demo, r, "reproduced")?;
        out.push_str(",rep_x,rep_y");
    }
    out.push('\n');
    for (j, t) in demo.knots().iter().enumerate() {
        let c = demo.control_points()[j];
        let (tx, ty) = tv.evaluate(*t, 0)?;
        let mut row = vec![*t, c.rx, c.ry, tx, ty];
        if let Some(r) = reproduced {
            let p = r.control_points()[j];
            row.extend([p.rx, p.ry]);
        }
        push_row(&mut out, &row);
    }
    Ok(out)
}

pub fn se_series(
    demo: &SplineTrajectory,
    tv: &SplineTrajectory,
    l_a: f64,
    l_b: f64,
) -> Result<String> {
    if demo.start() < tv.start() || demo.end() > tv.end() {
        return Err(Error::invalid(
            "TV trajectory does not cover the demonstration",
        ));
    }
    let se = elliptical_index_series(demo, tv, l_a, l_b);
    let mut out = String::from("t,x,se\n");
    for ((t, c), s) in demo.knots().iter().zip(demo.control_points()).zip(se) {
        push_row(&mut out, &[*t, c.rx, s]);
    }
    Ok(out)
}

pub fn kin_series(
    demo: &SplineTrajectory,
    reproduced: Option<&SplineTrajectory>,
) -> Result<String> {
    let mut out = String::from("t,vx,vy,ax,ay");
    if let Some(r) = reproduced {
        check_grid(demo, r, "reproduced")?;
        out.push_str(",rep_vx,rep_vy,rep_ax,rep_ay");
    }
    out.push('\n');
    let knots = demo.knots();
    let mut times: Vec<f64> = knots
        .windows(2)
        .flat_map(|w| {
            (0..KIN_SAMPLES_PER_SEGMENT)
                .map(move |k| w[0] + (w[1] - w[0]) * k as f64 / KIN_SAMPLES_PER_SEGMENT as f64)
        })
        .collect();
    times.push(demo.end());
    for t in times {
        let (vx, vy) = demo.evaluate(t, 1)?;
        let (ax, ay) = demo.evaluate(t, 2)?;
        let mut row = vec![t, vx, vy, ax, ay];
        if let Some(r) = reproduced {
            let (rvx, rvy) = r.evaluate(t, 1)?;
            let (rax, ray) = r.evaluate(t, 2)?;
            row.extend([rvx, rvy, rax, ray]);
        }
        push_row(&mut out, &row);
    }
    Ok(out)
}

pub fn eps_series(history: &[HistoryEntry]) -> String {
    let mut out = String::from("iteration,epsilon\n");
    for h in history {
        let _ = writeln!(out, "{},{}", h.iteration, fmt_f64(h.epsilon));
    }
    out
}
