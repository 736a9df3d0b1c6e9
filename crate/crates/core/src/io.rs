//! CSV files for trajectories, features, weights and learning histories.
//!
//! Numbers are written with 17 significant digits so every file reads back
//! bit-exactly. Row numbers in errors are file line numbers (the header is 1).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::learner::{HistoryEntry, WeightVector};
use crate::smpc::DemonstrationRecord;
use crate::spline::{ControlPoint, SplineTrajectory};

pub const TRAJECTORY_COLUMNS: [&str; 9] = ["t", "x", "y", "phi", "v", "vx", "vy", "ax", "ay"];

/// Relative tolerance on sample spacing.
const SPACING_TOLERANCE: f64 = 1e-9;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, source: &str, row: usize, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        source_name: source.to_string(),
        row,
        message: format!("column `{column}`: cannot parse `{field}` as a number"),
    })
}

fn parse_error(source: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        row,
        message: message.into(),
    }
}

pub(crate) fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| with_path(path, e))?;
    Ok(s)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    File::create(path)
        .and_then(|f| {
            let mut w = BufWriter::new(f);
            w.write_all(body.as_bytes())?;
            w.flush()
        })
        .map_err(|e| with_path(path, e))
}

/// Header plus rows, with each row tagged by its line number.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn parse(text: &str, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| parse_error(source, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        if header.iter().all(|h| h.is_empty()) {
            return Err(parse_error(source, 1, "missing header row"));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
                parse_error(source, row, e.to_string())
            })?;
            let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((row, record.iter().map(str::to_string).collect()));
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str, source: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(source, 1, format!("missing column `{name}`")))
    }
}

/// Write a trajectory's knot samples. Heading and speed come from `states`
/// when given, otherwise from the knot velocities.
pub fn write_trajectory<W: Write>(
    mut w: W,
    traj: &SplineTrajectory,
    states: Option<&[VehicleState]>,
) -> Result<()> {
    let derived;
    let states = match states {
        Some(s) if s.len() == traj.knots().len() => s,
        Some(s) => {
            return Err(Error::invalid(format!(
                "{} states for {} knots",
                s.len(),
                traj.knots().len()
            )))
        }
        None => {
            derived = traj.knot_states();
            &derived
        }
    };
    writeln!(w, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for ((t, c), s) in traj.knots().iter().zip(traj.control_points()).zip(states) {
        let row = [*t, c.rx, c.ry, s.phi, s.v, c.vx, c.vy, c.ax, c.ay];
        let fields: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn trajectory_to_string(
    traj: &SplineTrajectory,
    states: Option<&[VehicleState]>,
) -> Result<String> {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, traj, states)?;
    Ok(String::from_utf8(buf).expect("ascii output"))
}

pub fn export_trajectory(
    path: impl AsRef<Path>,
    traj: &SplineTrajectory,
    states: Option<&[VehicleState]>,
) -> Result<()> {
    write_file(path.as_ref(), &trajectory_to_string(traj, states)?)
}

/// Write the EV side of a demonstration.
pub fn export_record(path: impl AsRef<Path>, record: &DemonstrationRecord) -> Result<()> {
    export_trajectory(path, &record.ev_spline()?, Some(&record.ev_states))
}

/// Write the TV side of a demonstration.
pub fn export_tv(path: impl AsRef<Path>, record: &DemonstrationRecord) -> Result<()> {
    export_trajectory(path, &record.tv_spline()?, Some(&record.tv_states))
}

/// Parse a trajectory file. Samples must be strictly increasing in `t` and
/// uniformly spaced.
pub fn parse_trajectory(text: &str, source: &str) -> Result<SplineTrajectory> {
    let table = Table::parse(text, source)?;
    let mut idx = [0usize; 9];
    for (i, name) in TRAJECTORY_COLUMNS.iter().enumerate() {
        idx[i] = table.column(name, source)?;
    }
    if table.rows.len() < 2 {
        return Err(parse_error(
            source,
            table.rows.last().map(|r| r.0).unwrap_or(1),
            format!("need at least 2 samples, got {}", table.rows.len()),
        ));
    }
    let mut knots = Vec::with_capacity(table.rows.len());
    let mut points = Vec::with_capacity(table.rows.len());
    for (row, fields) in &table.rows {
        let mut v = [0.0; 9];
        for (k, &i) in idx.iter().enumerate() {
            v[k] = parse_f64(&fields[i], source, *row, TRAJECTORY_COLUMNS[k])?;
            if !v[k].is_finite() {
                return Err(parse_error(
                    source,
                    *row,
                    format!("column `{}` is not finite", TRAJECTORY_COLUMNS[k]),
                ));
            }
        }
        let t = v[0];
        if let Some(&prev) = knots.last() {
            if t <= prev {
                return Err(parse_error(
                    source,
                    *row,
                    format!("t = {t} does not increase (previous {prev})"),
                ));
            }
            if knots.len() >= 2 {
                let dt0 = knots[1] - knots[0];
                let dt = t - prev;
                if (dt - dt0).abs() > SPACING_TOLERANCE * dt0.abs().max(1.0) {
                    return Err(parse_error(
                        source,
                        *row,
                        format!("spacing {dt} differs from {dt0}"),
                    ));
                }
            }
        }
        knots.push(t);
        points.push(ControlPoint {
            rx: v[1],
            vx: v[5],
            ax: v[7],
            ry: v[2],
            vy: v[6],
            ay: v[8],
        });
    }
    SplineTrajectory::new(knots, points)
}

pub fn import_trajectory(path: impl AsRef<Path>) -> Result<SplineTrajectory> {
    let path = path.as_ref();
    parse_trajectory(&read_text(path)?, &path.display().to_string())
}

fn feature_index(name: &str, source: &str, row: usize) -> Result<usize> {
    FEATURE_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| parse_error(source, row, format!("unknown feature `{name}`")))
}

/// Per-feature table of one or more named value columns.
fn write_named_columns(columns: &[(&str, &[f64; FEATURE_COUNT])]) -> String {
    let mut out = String::from("feature");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        out.push_str(name);
        for (_, values) in columns {
            out.push(',');
            out.push_str(&fmt_f64(values[i]));
        }
        out.push('\n');
    }
    out
}

fn read_named_column(text: &str, source: &str, column: &str) -> Result<[f64; FEATURE_COUNT]> {
    let table = Table::parse(text, source)?;
    let name_col = table.column("feature", source)?;
    let value_col = table.column(column, source)?;
    let mut out = [f64::NAN; FEATURE_COUNT];
    for (row, fields) in &table.rows {
        let i = feature_index(&fields[name_col], source, *row)?;
        if !out[i].is_nan() {
            return Err(parse_error(
                source,
                *row,
                format!("duplicate feature `{}`", FEATURE_NAMES[i]),
            ));
        }
        out[i] = parse_f64(&fields[value_col], source, *row, column)?;
    }
    if let Some(i) = out.iter().position(|v| v.is_nan()) {
        return Err(parse_error(
            source,
            table.rows.last().map(|r| r.0).unwrap_or(1),
            format!("missing feature `{}`", FEATURE_NAMES[i]),
        ));
    }
    Ok(out)
}

/// Feature table with raw and scaled columns.
pub fn features_to_string(raw: &FeatureVector, scaled: &FeatureVector) -> String {
    write_named_columns(&[("value", &raw.0), ("scaled", &scaled.0)])
}

/// Read the `scaled` column of a feature table.
pub fn parse_features(text: &str, source: &str) -> Result<FeatureVector> {
    Ok(FeatureVector(read_named_column(text, source, "scaled")?))
}

pub fn theta_to_string(theta: &WeightVector) -> String {
    write_named_columns(&[("theta", &theta.0)])
}

pub fn parse_theta(text: &str, source: &str) -> Result<WeightVector> {
    let v = read_named_column(text, source, "theta")?;
    if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!(
            "{source}: weight for {} must be finite and >= 0, got {}",
            FEATURE_NAMES[i], v[i]
        )));
    }
    Ok(WeightVector(v))
}

pub fn import_theta(path: impl AsRef<Path>) -> Result<WeightVector> {
    let path = path.as_ref();
    parse_theta(&read_text(path)?, &path.display().to_string())
}

fn history_header() -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "epsilon", "inner_iterations", "wall_time_s"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(FEATURE_NAMES.iter().map(|n| format!("theta_{n}")));
    h.extend(FEATURE_NAMES.iter().map(|n| n.to_string()));
    h
}

pub fn history_to_string(history: &[HistoryEntry]) -> String {
    let mut out = history_header().join(",");
    out.push('\n');
    for h in history {
        let mut fields = vec![
            h.iteration.to_string(),
            fmt_f64(h.epsilon),
            h.inner_iterations.to_string(),
            fmt_f64(h.wall_time_s),
        ];
        fields.extend(h.theta.0.iter().map(|v| fmt_f64(*v)));
        fields.extend(h.features.0.iter().map(|v| fmt_f64(*v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_history(text: &str, source: &str) -> Result<Vec<HistoryEntry>> {
    let table = Table::parse(text, source)?;
    let header = history_header();
    let idx: Vec<usize> = header
        .iter()
        .map(|h| table.column(h, source))
        .collect::<Result<_>>()?;
    let count = |field: &str, row: usize, column: &str| -> Result<usize> {
        field.trim().parse::<usize>().map_err(|_| {
            parse_error(
                source,
                row,
                format!("column `{column}`: expected a count, got `{field}`"),
            )
        })
    };
    let mut out = Vec::with_capacity(table.rows.len());
    for (row, fields) in &table.rows {
        let num = |k: usize| parse_f64(&fields[idx[k]], source, *row, &header[k]);
        let mut theta = [0.0; FEATURE_COUNT];
        let mut features = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            theta[i] = num(4 + i)?;
            features[i] = num(4 + FEATURE_COUNT + i)?;
        }
        out.push(HistoryEntry {
            iteration: count(&fields[idx[0]], *row, "iteration")?,
            epsilon: num(1)?,
            inner_iterations: count(&fields[idx[2]], *row, "inner_iterations")?,
            wall_time_s: num(3)?,
            theta: WeightVector(theta),
            features: FeatureVector(features),
        });
    }
    Ok(out)
}

pub fn import_history(path: impl AsRef<Path>) -> Result<Vec<HistoryEntry>> {
    let path = path.as_ref();
    parse_history(&read_text(path)?, &path.display().to_string())
}

pub fn save(path: impl AsRef<Path>, body: &str) -> Result<()> {
    write_file(path.as_ref(), body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SplineTrajectory {
        let states: Vec<VehicleState> = (0..6)
            .map(|i| {
                let t = i as f64 * 0.2;
                VehicleState::new(
                    80.0 + 25.3 * t,
                    2.625 + 0.1 * t * t,
                    0.013 * t,
                    25.3 + 0.7 * t,
                )
            })
            .collect();
        crate::spline::states_to_control_points(&states, 0.2).unwrap()
    }

    #[test]
    fn trajectory_round_trip_is_bit_exact() {
        let traj = sample();
        let text = trajectory_to_string(&traj, None).unwrap();
        let back = parse_trajectory(&text, "mem").unwrap();
        assert_eq!(back, traj);
        assert_eq!(trajectory_to_string(&back, None).unwrap(), text);
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn decreasing_time_is_rejected_with_row() {
        let text = trajectory_to_string(&sample(), None).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        let err = parse_trajectory(&lines.join("\n"), "swap.csv").unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("row 3"), "{err}");
        assert!(err.to_string().contains("does not increase"), "{err}");
    }

    #[test]
    fn uneven_spacing_is_rejected() {
        let text = "t,x,y,phi,v,vx,vy,ax,ay\n0,0,0,0,1,1,0,0,0\n0.2,0.2,0,0,1,1,0,0,0\n0.5,0.5,0,0,1,1,0,0,0\n";
        let err = parse_trajectory(text, "gap.csv").unwrap_err();
        assert!(err.to_string().contains("row 4"), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let text = "t,x,y,phi,v,vx,ax,ay\n0,0,0,0,1,1,0,0\n0.2,0.2,0,0,1,1,0,0\n";
        let err = parse_trajectory(text, "cols.csv").unwrap_err();
        assert!(err.to_string().contains("`vy`"), "{err}");
    }

    #[test]
    fn malformed_number_reports_row_and_column() {
        let text = "t,x,y,phi,v,vx,vy,ax,ay\n0,0,0,0,1,1,0,0,0\n0.2,abc,0,0,1,1,0,0,0\n";
        let err = parse_trajectory(text, "bad.csv").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("bad.csv: row 3") && msg.contains("`x`"),
            "{msg}"
        );
    }

    #[test]
    fn short_row_is_a_parse_error() {
        let text = "t,x,y,phi,v,vx,vy,ax,ay\n0,0,0,0,1,1,0,0,0\n0.2,0.2,0\n";
        let err = parse_trajectory(text, "short.csv").unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn feature_and_theta_round_trip() {
        let raw = FeatureVector([0.1, 1.0 / 3.0, 2.5, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 1e-17]);
        let scaled = FeatureVector(raw.0.map(|v| v * 10.0));
        let back = parse_features(&features_to_string(&raw, &scaled), "f").unwrap();
        assert_eq!(back, scaled);
        let theta = WeightVector([0.0, 0.5, 1.0 / 7.0, 2.0, 3.0, 0.25, 1.5, 0.0, 0.125, 9.0]);
        assert_eq!(parse_theta(&theta_to_string(&theta), "th").unwrap(), theta);
    }

    #[test]
    fn theta_file_must_list_every_feature() {
        let text = "feature,theta\nf_ax,1\n";
        let err = parse_theta(text, "th.csv").unwrap_err();
        assert!(err.to_string().contains("missing feature `f_ay`"), "{err}");
        let neg =
            theta_to_string(&WeightVector::zeros()).replace("f_v,0.0000000000000000e0", "f_v,-1");
        assert_eq!(
            parse_theta(&neg, "th.csv").unwrap_err().kind(),
            "invalid-argument"
        );
    }

    #[test]
    fn history_round_trip() {
        let h = vec![
            HistoryEntry {
                iteration: 1,
                theta: WeightVector::constant(1.0),
                features: FeatureVector([0.3; FEATURE_COUNT]),
                epsilon: 2.0 / 3.0,
                inner_iterations: 12,
                wall_time_s: 0.0123,
            },
            HistoryEntry {
                iteration: 2,
                theta: WeightVector::constant(0.9),
                features: FeatureVector([0.1; FEATURE_COUNT]),
                epsilon: 0.1,
                inner_iterations: 7,
                wall_time_s: 0.01,
            },
        ];
        assert_eq!(parse_history(&history_to_string(&h), "h").unwrap(), h);
    }
}
