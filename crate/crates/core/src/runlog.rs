//! Run logs: a CSV time series plus a line-delimited JSON event table.
//!
//! The simulation is NED / FRD internally. Logs are written in the
//! conventional world NWU (z up) / body FLU frames, i.e. rotated by 180°
//! about x: y and z components flip sign, and the attitude quaternion
//! becomes (w, x, −y, −z).

use std::io::{BufRead, Write};

use crate::dynamics::{RigidBodyState, Sample};
use crate::mission::MissionEvent;
use crate::perch::LogRow;

pub const SCHEMA_VERSION: &str = "1";
pub const AXES: &str = "world NWU z-up / body FLU";
/// Phase column for runs without a mission.
pub const NO_PHASE: &str = "none";

pub const COLUMNS: [&str; 21] = [
    "t",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "qw",
    "qx",
    "qy",
    "qz",
    "wx",
    "wy",
    "wz",
    "f1",
    "f2",
    "f3",
    "f4",
    "contact_force",
    "grasper_mode",
    "phase",
];

#[derive(Debug, thiserror::Error)]
pub enum RunLogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("time not strictly increasing at row {row} (t = {t})")]
    NonMonotonic { row: usize, t: f64 },
    #[error("malformed log: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunHeader {
    pub version: String,
    pub config_sha256: String,
    pub axes: String,
}

impl RunHeader {
    pub fn new(config_sha256: &str) -> Self {
        RunHeader { version: SCHEMA_VERSION.into(), config_sha256: config_sha256.into(), axes: AXES.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub state: RigidBodyState,
    pub motor_thrusts: [f64; 4],
    pub contact_force: f64,
    pub grasper_mode: String,
    pub phase: String,
}

impl From<&LogRow> for RunRow {
    fn from(r: &LogRow) -> Self {
        RunRow {
            t: r.t,
            state: r.state,
            motor_thrusts: r.motor_thrusts,
            contact_force: r.contact_force,
            grasper_mode: r.grasper.label().into(),
            phase: r.phase.label().into(),
        }
    }
}

impl RunRow {
    /// Row for a run without grasper or mission.
    pub fn from_sample(s: &Sample) -> Self {
        RunRow {
            t: s.t,
            state: s.state,
            motor_thrusts: s.motor_thrusts,
            contact_force: s.contact_force,
            grasper_mode: crate::grasper::GrasperMode::Straight.label().into(),
            phase: NO_PHASE.into(),
        }
    }

    fn record(&self) -> Vec<String> {
        let s = &self.state;
        let q = s.attitude.quaternion();
        let nums = [
            self.t,
            s.position.x,
            -s.position.y,
            -s.position.z,
            s.velocity.x,
            -s.velocity.y,
            -s.velocity.z,
            q[0],
            q[1],
            -q[2],
            -q[3],
            s.angular_rate.x,
            -s.angular_rate.y,
            -s.angular_rate.z,
            self.motor_thrusts[0],
            self.motor_thrusts[1],
            self.motor_thrusts[2],
            self.motor_thrusts[3],
            self.contact_force,
        ];
        // `+ 0.0` folds −0 into 0.
        let mut rec: Vec<String> = nums.iter().map(|v| format!("{}", v + 0.0)).collect();
        rec.push(self.grasper_mode.clone());
        rec.push(self.phase.clone());
        rec
    }
}

pub fn write_csv<W: Write>(mut w: W, header: &RunHeader, rows: &[RunRow]) -> Result<(), RunLogError> {
    for (i, pair) in rows.windows(2).enumerate() {
        if !(pair[1].t > pair[0].t) {
            return Err(RunLogError::NonMonotonic { row: i + 1, t: pair[1].t });
        }
    }
    writeln!(w, "# version: {}", header.version)?;
    writeln!(w, "# config_sha256: {}", header.config_sha256)?;
    writeln!(w, "# axes: {}", header.axes)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps rows at least `interval` apart, plus the last one.
pub fn decimate(rows: &[RunRow], interval: f64) -> Vec<RunRow> {
    let mut out: Vec<RunRow> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let due = out.last().map_or(true, |l| r.t - l.t >= interval - 1e-12);
        if due || i + 1 == rows.len() {
            out.push(r.clone());
        }
    }
    out
}

pub fn write_events<W: Write>(mut w: W, events: &[MissionEvent]) -> Result<(), RunLogError> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<MissionEvent>, RunLogError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// A parsed log: header, column names and raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub header: RunHeader,
    pub columns: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl ParsedLog {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        self.records.iter().map(|r| r[i].parse().ok()).collect()
    }
}

pub fn read_csv(text: &str) -> Result<ParsedLog, RunLogError> {
    let mut fields = std::collections::HashMap::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once(": ") {
                fields.insert(k.to_string(), v.to_string());
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut get = |k: &str| fields.remove(k).ok_or_else(|| RunLogError::Malformed(format!("missing header `{k}`")));
    let header = RunHeader { version: get("version")?, config_sha256: get("config_sha256")?, axes: get("axes")? };
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let columns = rdr.headers()?.iter().map(String::from).collect();
    let records = rdr.records().map(|r| r.map(|r| r.iter().map(String::from).collect())).collect::<Result<_, _>>()?;
    Ok(ParsedLog { header, columns, records })
}

/// Body of a log without its header lines.
pub fn body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Rot3, Vec3};

    fn row(t: f64) -> RunRow {
        let mut state = RigidBodyState::at_rest(Vec3::new(1.0, 2.0, -3.0));
        state.velocity = Vec3::new(0.1, 0.2, 0.3);
        state.attitude = Rot3::from_euler(0.1, 0.2, 0.3);
        state.angular_rate = Vec3::new(0.4, 0.5, 0.6);
        RunRow {
            t,
            state,
            motor_thrusts: [1.0, 2.0, 3.0, 4.0],
            contact_force: 0.5,
            grasper_mode: "straight".into(),
            phase: "hover".into(),
        }
    }

    fn written(rows: &[RunRow]) -> String {
        let mut buf = Vec::new();
        write_csv(&mut buf, &RunHeader::new("abc"), rows).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_and_columns_round_trip() {
        let log = read_csv(&written(&[row(0.0), row(0.1)])).unwrap();
        assert_eq!(log.header, RunHeader::new("abc"));
        assert_eq!(log.columns, COLUMNS);
        assert_eq!(log.records.len(), 2);
        assert!(log.records.iter().all(|r| r.len() == COLUMNS.len()));
    }

    #[test]
    fn axes_are_flipped_to_z_up() {
        let log = read_csv(&written(&[row(0.0)])).unwrap();
        assert_eq!(log.column("y").unwrap(), [-2.0]);
        assert_eq!(log.column("z").unwrap(), [3.0]);
        assert_eq!(log.column("vz").unwrap(), [-0.3]);
        assert_eq!(log.column("wy").unwrap(), [-0.5]);
        // The flipped quaternion still describes R' = T R T with T = diag(1, −1, −1).
        let q: Vec<f64> = ["qw", "qx", "qy", "qz"].iter().map(|c| log.column(c).unwrap()[0]).collect();
        let r = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let t = crate::math::Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        let expect = t * row(0.0).state.attitude.matrix() * t;
        assert!((r.to_rotation_matrix().matrix() - expect).norm() < 1e-12);
    }

    #[test]
    fn decimation_keeps_spacing_and_endpoints() {
        let rows: Vec<RunRow> = (0..=1000).map(|i| row(i as f64 * 1e-5)).collect();
        let d = decimate(&rows, 1e-3);
        assert_eq!(d.len(), 11);
        assert_eq!(d[0].t, 0.0);
        assert_eq!(d.last().unwrap().t, rows.last().unwrap().t);
    }

    #[test]
    fn no_negative_zero() {
        let mut r = row(0.0);
        r.state.position = Vec3::new(0.0, 0.0, 0.0);
        assert!(!written(&[r]).contains("-0,"));
    }

    #[test]
    fn time_must_increase() {
        let mut buf = Vec::new();
        let err = write_csv(&mut buf, &RunHeader::new("x"), &[row(0.1), row(0.1)]).unwrap_err();
        assert!(matches!(err, RunLogError::NonMonotonic { row: 1, .. }));
    }

    #[test]
    fn body_strips_header() {
        let a = written(&[row(0.0)]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &RunHeader::new("other"), &[row(0.0)]).unwrap();
        assert_ne!(a, String::from_utf8(buf.clone()).unwrap());
        assert_eq!(body(&a), body(&String::from_utf8(buf).unwrap()));
    }
}
