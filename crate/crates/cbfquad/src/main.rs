//! Batch front end: run scenarios, report on logs, validate configs.
//!
//! Exit codes: 0 run completed with the position inside bounds (+0.05 m),
//! 1 safety violation, 2 bad config or i/o, 3 diverged simulation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cbfquad::cbf::check_initial_set;
use cbfquad::config::ScenarioFile;
use cbfquad::controllers::NominalController;
use cbfquad::report::{quantize_records, read_csv, write_csv, SafetyReport};
use cbfquad::sim::{run_scenario, LogRecord, Scenario, SimError};
use cbfquad::svg::{write_inputs_svg, write_trajectory_svg};

#[derive(Parser)]
#[command(name = "cbfquad", about = "Quadrotor safe-box simulation and CBF safety filtering")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write log.csv (and optional SVG plots).
    Run {
        scenario: PathBuf,
        /// Bypass the safety filter (apply the nominal input directly).
        #[arg(long)]
        no_filter: bool,
        /// Override the configured duration, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory (default: $CBFQUAD_OUT_DIR, the scenario's
        /// [output] dir, or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write trajectory.svg and inputs.svg.
        #[arg(long)]
        svg: bool,
        /// Write log.csv (on by default; kept as an explicit switch).
        #[arg(long)]
        csv: bool,
    },
    /// Recompute the safety report from a previously written log.csv.
    Report {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, String> {
    match cmd {
        Cmd::Run { scenario, no_filter, duration, out, svg, csv: _ } => {
            run(&scenario, no_filter, duration, out, svg)
        }
        Cmd::Report { scenario, out } => report(&scenario, out),
        Cmd::Validate { scenario } => validate(&scenario),
    }
}

fn out_dir(cli: Option<PathBuf>, file: &ScenarioFile) -> PathBuf {
    cli.or_else(|| std::env::var_os("CBFQUAD_OUT_DIR").map(PathBuf::from))
        .or_else(|| file.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(
    path: &Path,
    no_filter: bool,
    duration: Option<f64>,
    out: Option<PathBuf>,
    svg: bool,
) -> Result<ExitCode, String> {
    let file = ScenarioFile::from_path(path).map_err(|e| e.to_string())?;
    let mut cfg = file.to_sim_config().map_err(|e| e.to_string())?;
    if no_filter {
        cfg.filter_enabled = false;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    cfg.validate().map_err(|e| e.to_string())?;

    let first_nominal = match &cfg.scenario {
        Scenario::ConstantInput { u0 } => *u0,
        Scenario::Tracking { gains } => {
            let mut ctrl = NominalController::SpiralTracking(
                cbfquad::controllers::PdTrackingController::new(gains.clone()),
            );
            ctrl.command(0.0, &cfg.initial_state, &cfg.quad)
        }
    };
    let membership = check_initial_set(&cfg.initial_state, &first_nominal, &cfg.cbf, &cfg.quad);
    if !membership.ok {
        eprintln!("warning: initial state violates the barrier chain sets:");
        for v in membership.violations() {
            eprintln!("  {v}");
        }
    }

    let dir = out_dir(out, &file);
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;

    let (records, diverged) = match run_scenario(&cfg) {
        Ok(records) => (records, false),
        Err(SimError::Diverged { t, records }) => {
            eprintln!("simulation diverged at t = {t:.3} s; writing partial log");
            (records, true)
        }
        Err(SimError::InitialSetViolated(_)) => {
            return Err("initial state rejected (strict_initial_set = true)".into())
        }
        Err(e) => return Err(e.to_string()),
    };

    write_outputs(&records, &file, &dir, svg)?;
    let report = SafetyReport::from_records(
        &quantize_records(&records),
        file.cbf.r_min,
        file.cbf.r_max,
    );
    println!("{report}");
    println!("outputs in {}", dir.display());
    Ok(if diverged {
        ExitCode::from(3)
    } else if report.within_bounds {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn write_outputs(
    records: &[LogRecord],
    file: &ScenarioFile,
    dir: &Path,
    svg: bool,
) -> Result<(), String> {
    let csv_path = dir.join("log.csv");
    let f = File::create(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    write_csv(records, BufWriter::new(f)).map_err(|e| e.to_string())?;
    if svg {
        let traj = dir.join("trajectory.svg");
        let f = File::create(&traj).map_err(|e| format!("{}: {e}", traj.display()))?;
        write_trajectory_svg(records, file.cbf.r_min, file.cbf.r_max, BufWriter::new(f))
            .map_err(|e| e.to_string())?;
        let inputs = dir.join("inputs.svg");
        let f = File::create(&inputs).map_err(|e| format!("{}: {e}", inputs.display()))?;
        write_inputs_svg(records, BufWriter::new(f)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn report(path: &Path, out: Option<PathBuf>) -> Result<ExitCode, String> {
    let file = ScenarioFile::from_path(path).map_err(|e| e.to_string())?;
    let dir = out_dir(out, &file);
    let csv_path = dir.join("log.csv");
    let f = File::open(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    let records = read_csv(BufReader::new(f)).map_err(|e| e.to_string())?;
    let report = SafetyReport::from_records(&records, file.cbf.r_min, file.cbf.r_max);
    println!("{report}");
    Ok(if report.within_bounds { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn validate(path: &Path) -> Result<ExitCode, String> {
    let file = ScenarioFile::from_path(path).map_err(|e| e.to_string())?;
    let cfg = file.to_sim_config().map_err(|e| e.to_string())?;
    println!("scenario {:?} is valid", file.name);
    println!("  mass            = {:.3} kg", file.quad.mass);
    println!(
        "  inertia         = ({:.3}, {:.3}, {:.3}) kg*m^2",
        file.quad.inertia[0], file.quad.inertia[1], file.quad.inertia[2]
    );
    println!(
        "  thrust range    = [{:.3}, {:.3}] N",
        file.quad.u_min[0], file.quad.u_max[0]
    );
    println!(
        "  torque range    = [{:.3}, {:.3}] / [{:.3}, {:.3}] / [{:.3}, {:.3}] N*m",
        file.quad.u_min[1], file.quad.u_max[1],
        file.quad.u_min[2], file.quad.u_max[2],
        file.quad.u_min[3], file.quad.u_max[3]
    );
    println!(
        "  safe box        = [{:.3}, {:.3}, {:.3}] .. [{:.3}, {:.3}, {:.3}] m",
        file.cbf.r_min[0], file.cbf.r_min[1], file.cbf.r_min[2],
        file.cbf.r_max[0], file.cbf.r_max[1], file.cbf.r_max[2]
    );
    println!(
        "  poles x/y/z     = {:?} / {:?} / {:?}",
        file.cbf.p_x, file.cbf.p_y, file.cbf.p_z
    );
    println!(
        "  duration        = {:.1} s at {:.0} Hz control, {:.0} Hz physics",
        cfg.duration,
        1.0 / cfg.control_period,
        1.0 / cfg.dt_physics
    );
    Ok(ExitCode::SUCCESS)
}
