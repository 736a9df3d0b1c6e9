use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drivestyle::compare::compare_trajectories;
use drivestyle::io;
use drivestyle::learner::{feature_model, learn, optimize_trajectory, Demonstration, InnerOptions};
use drivestyle::plot::{self, Series};
use drivestyle::scenario::ScenarioConfig;
use drivestyle::smpc::{run_closed_loop, scripted_tv};
use drivestyle::spline::{states_to_control_points, SplineTrajectory};
use drivestyle::{Error, Result};

#[derive(Parser)]
#[command(
    name = "drivestyle",
    version,
    about = "Reaction-aware driving-style identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file; the bundled scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Override one scenario key, e.g. `--set smpc.p=0.9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::bundled(),
        };
        for o in &self.overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{o}`"))
            })?;
            cfg = cfg.with_override(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the SMPC closed loop and write the EV demonstration.
    Demo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the TV trajectory.
        #[arg(long)]
        tv_out: Option<PathBuf>,
    },
    /// Compute the feature vector of a trajectory.
    Features {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        traj: PathBuf,
        /// TV trajectory; scripted from the scenario when omitted.
        #[arg(long)]
        tv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn weights from a demonstration.
    Learn {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        tv: Option<PathBuf>,
        /// Feature set size, 6 or 10.
        #[arg(long)]
        features: Option<String>,
        /// Directory for theta.csv, history.csv and reproduced.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Reproduce a trajectory from a weight file.
    Reproduce {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        theta: PathBuf,
        /// Demonstration used as the initial guess and fixed first point.
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        tv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lateral gap metrics between two trajectories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, requires = "x_max")]
        x_min: Option<f64>,
        #[arg(long, requires = "x_min")]
        x_max: Option<f64>,
        /// Also report the scaled feature distance.
        #[arg(long)]
        with_features: bool,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        tv: Option<PathBuf>,
    },
    /// Write a plotting series as CSV.
    PlotData {
        /// One of xy, se, kin, eps.
        #[arg(long)]
        series: String,
        #[arg(long)]
        demo: Option<PathBuf>,
        #[arg(long)]
        reproduced: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        tv: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn tv_trajectory(cfg: &ScenarioConfig, path: Option<&Path>) -> Result<SplineTrajectory> {
    match path {
        Some(p) => io::import_trajectory(p),
        None => states_to_control_points(&scripted_tv(cfg)?, cfg.smpc.ts),
    }
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => io::save(p, body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, series: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("series `{series}` needs --{flag}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Demo {
            scenario,
            out,
            tv_out,
        } => {
            let cfg = scenario.load()?;
            let record = run_closed_loop(&cfg)?;
            io::export_record(&out, &record)?;
            if let Some(p) = tv_out {
                io::export_tv(p, &record)?;
            }
            let relaxed = record
                .statuses
                .iter()
                .filter(|s| s.as_str() != "converged")
                .count();
            println!("samples={}", record.ev_states.len());
            println!("unconverged_steps={relaxed}");
        }
        Command::Features {
            scenario,
            traj,
            tv,
            out,
        } => {
            let cfg = scenario.load()?;
            let ev = io::import_trajectory(&traj)?;
            let model = feature_model(&cfg, tv_trajectory(&cfg, tv.as_deref())?);
            let report = model.evaluate(&ev)?;
            let scaled = report.values.scaled(&model.scaling);
            emit(
                out.as_deref(),
                &io::features_to_string(&report.values, &scaled),
            )?;
            if report.trigger.triggered {
                eprintln!("trigger_time={}", report.trigger.time);
            } else {
                eprintln!("trigger_time=none");
            }
        }
        Command::Learn {
            scenario,
            demo,
            tv,
            features,
            out_dir,
        } => {
            let mut cfg = scenario.load()?;
            if let Some(f) = features {
                cfg = cfg.with_override("learner.features", &f)?;
            }
            let demo = Demonstration {
                ev: io::import_trajectory(&demo)?,
                tv: tv_trajectory(&cfg, tv.as_deref())?,
            };
            let outcome = learn(&demo, &cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            io::save(
                out_dir.join("theta.csv"),
                &io::theta_to_string(&outcome.theta_star),
            )?;
            io::save(
                out_dir.join("history.csv"),
                &io::history_to_string(&outcome.history),
            )?;
            io::export_trajectory(out_dir.join("reproduced.csv"), &outcome.reproduced, None)?;
            println!("iterations={}", outcome.history.len());
            println!("converged={}", outcome.converged);
            println!("best_iteration={}", outcome.best_iteration);
            println!("best_epsilon={}", outcome.best_epsilon());
        }
        Command::Reproduce {
            scenario,
            theta,
            demo,
            tv,
            out,
        } => {
            let cfg = scenario.load()?;
            let theta = io::import_theta(&theta)?;
            let init = io::import_trajectory(&demo)?;
            let model = feature_model(&cfg, tv_trajectory(&cfg, tv.as_deref())?);
            let mut opts = InnerOptions::from_config(&cfg.learner);
            if cfg.learner.freeze_trigger {
                opts.frozen_trigger = Some(model.detect_trigger(&init));
            }
            let r = optimize_trajectory(&theta, &init, &model, &opts)?;
            io::export_trajectory(&out, &r.trajectory, None)?;
            println!("cost={}", r.cost);
            println!("inner_iterations={}", r.iterations);
        }
        Command::Compare {
            a,
            b,
            x_min,
            x_max,
            with_features,
            scenario,
            tv,
        } => {
            let ta = io::import_trajectory(&a)?;
            let tb = io::import_trajectory(&b)?;
            let window = x_min.zip(x_max);
            let mut c = compare_trajectories(&ta, &tb, window)?;
            if with_features {
                let cfg = scenario.load()?;
                let model = feature_model(&cfg, tv_trajectory(&cfg, tv.as_deref())?);
                c = c.with_features(&model.scaled(&ta)?, &model.scaled(&tb)?);
            }
            println!("x_min={}", c.x_range.0);
            println!("x_max={}", c.x_range.1);
            println!("max_lateral_gap={}", c.max_lateral_gap);
            println!("max_gap_x={}", c.max_gap_x);
            println!("lateral_rmse={}", c.lateral_rmse);
            if let Some(d) = c.feature_l2 {
                println!("feature_l2={d}");
            }
        }
        Command::PlotData {
            series,
            demo,
            reproduced,
            history,
            tv,
            scenario,
            out,
        } => {
            let series: Series = series.parse()?;
            let body = match series {
                Series::Eps => {
                    plot::eps_series(&io::import_history(require(&history, "history", "eps")?)?)
                }
                _ => {
                    let cfg = scenario.load()?;
                    let ev = io::import_trajectory(require(&demo, "demo", "xy/se/kin")?)?;
                    let rep = reproduced
                        .as_deref()
                        .map(io::import_trajectory)
                        .transpose()?;
                    match series {
                        Series::Xy => plot::xy_series(
                            &ev,
                            &tv_trajectory(&cfg, tv.as_deref())?,
                            rep.as_ref(),
                        )?,
                        Series::Se => plot::se_series(
                            &ev,
                            &tv_trajectory(&cfg, tv.as_deref())?,
                            cfg.smpc.ellipse.semi_major,
                            cfg.smpc.ellipse.semi_minor,
                        )?,
                        _ => plot::kin_series(&ev, rep.as_ref())?,
                    }
                }
            };
            emit(out.as_deref(), &body)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::from(if matches!(e, Error::Io(_)) { 2 } else { 1 })
        }
    }
}
