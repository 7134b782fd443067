//! CSV logs and the post-run safety report.
//!
//! Numbers are written with 9 significant digits ('.' decimal, no locale),
//! so a log diffs reproducibly across machines. The safety report is always
//! computed from CSV-precision values: the in-memory record stream is
//! quantized through the same formatter before reporting, which makes the
//! report derived from a written file equal the in-memory one exactly.

use std::io::{self, BufRead, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::sim::LogRecord;

/// Column order of the log CSV.
pub const CSV_HEADER: &str = "t,rx,ry,rz,vx,vy,vz,qw,qx,qy,qz,phi,theta,psi,p,q,r,\
fT_nom,taux_nom,tauy_nom,tauz_nom,fT_safe,taux_safe,tauy_safe,tauz_safe,slack,filter_active";

/// Tolerance allowed on top of the box bounds for the sampled-data loop.
pub const BOUNDS_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed CSV at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// 9 significant digits, scientific, locale-independent.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

fn requantize(x: f64) -> f64 {
    fmt_f64(x).parse().expect("formatter output always parses")
}

fn csv_fields(r: &LogRecord) -> [f64; 26] {
    [
        r.t,
        r.position.x,
        r.position.y,
        r.position.z,
        r.velocity.x,
        r.velocity.y,
        r.velocity.z,
        r.quaternion[0],
        r.quaternion[1],
        r.quaternion[2],
        r.quaternion[3],
        r.euler[0],
        r.euler[1],
        r.euler[2],
        r.body_rate.x,
        r.body_rate.y,
        r.body_rate.z,
        r.u_nominal[0],
        r.u_nominal[1],
        r.u_nominal[2],
        r.u_nominal[3],
        r.u_safe[0],
        r.u_safe[1],
        r.u_safe[2],
        r.u_safe[3],
        r.slack_total,
    ]
}

pub fn write_csv<W: Write>(records: &[LogRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let mut line = String::with_capacity(26 * 16);
        for v in csv_fields(r) {
            line.push_str(&fmt_f64(v));
            line.push(',');
        }
        line.push(if r.filter_active { '1' } else { '0' });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Read a log back. The barrier-chain minima are not part of the CSV
/// schema and come back as NaN.
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<LogRecord>, CsvError> {
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == CSV_HEADER => {}
        Some((_, Ok(other))) => {
            return Err(CsvError::Malformed {
                line: 1,
                message: format!("unexpected header {other:?}"),
            })
        }
        Some((_, Err(e))) => return Err(CsvError::Io(e)),
        None => return Err(CsvError::Malformed { line: 1, message: "empty file".into() }),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 27 {
            return Err(CsvError::Malformed {
                line: idx + 1,
                message: format!("expected 27 columns, got {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 26];
        for (i, f) in fields[..26].iter().enumerate() {
            v[i] = f.parse().map_err(|e| CsvError::Malformed {
                line: idx + 1,
                message: format!("column {}: {e}", i + 1),
            })?;
        }
        let filter_active = match fields[26].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(CsvError::Malformed {
                    line: idx + 1,
                    message: format!("filter_active must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push(LogRecord {
            t: v[0],
            position: Vector3::new(v[1], v[2], v[3]),
            velocity: Vector3::new(v[4], v[5], v[6]),
            quaternion: [v[7], v[8], v[9], v[10]],
            euler: [v[11], v[12], v[13]],
            body_rate: Vector3::new(v[14], v[15], v[16]),
            u_nominal: [v[17], v[18], v[19], v[20]],
            u_safe: [v[21], v[22], v[23], v[24]],
            slack_total: v[25],
            filter_active,
            v_chain_min: [f64::NAN; 3],
        });
    }
    Ok(out)
}

/// Records rounded to exactly what the CSV carries.
pub fn quantize_records(records: &[LogRecord]) -> Vec<LogRecord> {
    records
        .iter()
        .map(|r| {
            let v = csv_fields(r).map(requantize);
            LogRecord {
                t: v[0],
                position: Vector3::new(v[1], v[2], v[3]),
                velocity: Vector3::new(v[4], v[5], v[6]),
                quaternion: [v[7], v[8], v[9], v[10]],
                euler: [v[11], v[12], v[13]],
                body_rate: Vector3::new(v[14], v[15], v[16]),
                u_nominal: [v[17], v[18], v[19], v[20]],
                u_safe: [v[21], v[22], v[23], v[24]],
                slack_total: v[25],
                filter_active: r.filter_active,
                v_chain_min: [f64::NAN; 3],
            }
        })
        .collect()
}

/// Summary of one run, derived purely from the log.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub pos_min: [f64; 3],
    pub pos_max: [f64; 3],
    pub first_active: Option<f64>,
    pub last_active: Option<f64>,
    /// Filter-active time, s (active ticks × control period).
    pub active_duration: f64,
    pub max_slack: f64,
    /// Full revolutions of the largest accumulated body-axis rotation.
    pub completed_rolls: u32,
    /// Position stayed within bounds + [`BOUNDS_TOLERANCE`] throughout.
    pub within_bounds: bool,
}

impl SafetyReport {
    pub fn from_records(records: &[LogRecord], bounds_min: [f64; 3], bounds_max: [f64; 3]) -> Self {
        let mut pos_min = [f64::INFINITY; 3];
        let mut pos_max = [f64::NEG_INFINITY; 3];
        let mut first_active = None;
        let mut last_active = None;
        let mut active_ticks = 0usize;
        let mut max_slack = 0.0f64;
        let mut winding = Vector3::<f64>::zeros();
        let mut prev_q: Option<UnitQuaternion<f64>> = None;

        for r in records {
            for i in 0..3 {
                pos_min[i] = pos_min[i].min(r.position[i]);
                pos_max[i] = pos_max[i].max(r.position[i]);
            }
            if r.filter_active {
                first_active.get_or_insert(r.t);
                last_active = Some(r.t);
                active_ticks += 1;
            }
            max_slack = max_slack.max(r.slack_total);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(
                r.quaternion[0],
                r.quaternion[1],
                r.quaternion[2],
                r.quaternion[3],
            ));
            if let Some(prev) = prev_q {
                winding += (prev.inverse() * q).scaled_axis();
            }
            prev_q = Some(q);
        }

        let control_period = if records.len() > 1 {
            records[1].t - records[0].t
        } else {
            0.0
        };
        let within_bounds = (0..3).all(|i| {
            pos_min[i] >= bounds_min[i] - BOUNDS_TOLERANCE
                && pos_max[i] <= bounds_max[i] + BOUNDS_TOLERANCE
        });
        SafetyReport {
            bounds_min,
            bounds_max,
            pos_min,
            pos_max,
            first_active,
            last_active,
            active_duration: active_ticks as f64 * control_period,
            max_slack,
            completed_rolls: (winding.amax() / std::f64::consts::TAU) as u32,
            within_bounds,
        }
    }
}

impl std::fmt::Display for SafetyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "safety report")?;
        for (axis, name) in ["x", "y", "z"].iter().enumerate() {
            writeln!(
                f,
                "  {name}: position in [{:+.3}, {:+.3}] m, bounds [{:+.3}, {:+.3}] m",
                self.pos_min[axis], self.pos_max[axis],
                self.bounds_min[axis], self.bounds_max[axis],
            )?;
        }
        match (self.first_active, self.last_active) {
            (Some(a), Some(b)) => writeln!(
                f,
                "  filter active: first {a:.2} s, last {b:.2} s, total {:.2} s",
                self.active_duration
            )?,
            _ => writeln!(f, "  filter active: never")?,
        }
        writeln!(f, "  max slack: {:.3e}", self.max_slack)?;
        writeln!(f, "  completed rolls: {}", self.completed_rolls)?;
        write!(
            f,
            "  within bounds (+{BOUNDS_TOLERANCE} m): {}",
            if self.within_bounds { "yes" } else { "NO" }
        )
    }
}
