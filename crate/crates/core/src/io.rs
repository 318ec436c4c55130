//! Text formats: track stream, trajectories, landmark table and run timelines.
//!
//! Track stream, one record per line:
//! `U <t> <id> <u> <v>` and `D <t> <id>[,<id>...]`.
//! Trajectory, one sample per line: `<t> <px> <py> <pz> <qx> <qy> <qz> <qw>`.
//! Blank lines and lines starting with `#` are ignored on input.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::eskf::{Message, TrackDeletion, TrackUpdate};
use crate::evaluation::Trajectory;
use crate::geometry::{canonicalize, Pose};
use crate::odometry::EstimateRecord;
use crate::simulator::LandmarkRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String, IoError>)> + '_, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(BufReader::new(file).lines().enumerate().map(move |(i, l)| (i + 1, l.map_err(io_err(path)))))
}

fn is_skipped(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

pub fn format_message(m: &Message) -> String {
    match m {
        Message::Update(u) => format!("U {:.6} {} {} {}", u.t, u.feature_id, u.u, u.v),
        Message::Deletion(d) => {
            let ids: Vec<String> = d.feature_ids.iter().map(|id| id.to_string()).collect();
            format!("D {:.6} {}", d.t, ids.join(","))
        }
    }
}

pub fn parse_message(line: &str) -> Result<Message, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str, what: &str| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("invalid {what} `{s}`"));
    let id = |s: &str| s.parse::<u64>().map_err(|_| format!("invalid feature id `{s}`"));
    match fields.as_slice() {
        ["U", t, i, u, v] => Ok(Message::Update(TrackUpdate { feature_id: id(i)?, t: num(t, "time")?, u: num(u, "u")?, v: num(v, "v")? })),
        ["D", t, ids] => Ok(Message::Deletion(TrackDeletion {
            t: num(t, "time")?,
            feature_ids: ids.split(',').map(id).collect::<Result<_, _>>()?,
        })),
        [kind, ..] if *kind != "U" && *kind != "D" => Err(format!("unknown record type `{kind}`")),
        _ => Err(format!("malformed record `{}`", line.trim())),
    }
}

pub fn write_tracks(path: &Path, messages: &[Message]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for m in messages {
        writeln!(w, "{}", format_message(m)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a track file; records must be in non-decreasing time order.
pub fn read_tracks(path: &Path) -> Result<Vec<Message>, IoError> {
    let mut out: Vec<Message> = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if is_skipped(&line) {
            continue;
        }
        let parse_err = |reason| IoError::Parse { path: path.display().to_string(), line: n, reason };
        let m = parse_message(&line).map_err(parse_err)?;
        if let Some(prev) = out.last() {
            if m.t() < prev.t() {
                return Err(parse_err(format!("time {} precedes previous record at {}", m.t(), prev.t())));
            }
        }
        out.push(m);
    }
    Ok(out)
}

pub fn format_pose_line(t: f64, pose: &Pose) -> String {
    let q = pose.q.quaternion();
    format!("{t:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}", pose.p.x, pose.p.y, pose.p.z, q.i, q.j, q.k, q.w)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let mut w = create(path)?;
    for (t, pose) in &traj.samples {
        writeln!(w, "{}", format_pose_line(*t, pose)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let mut samples = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if is_skipped(&line) {
            continue;
        }
        let parse_err = |reason: String| IoError::Parse { path: path.display().to_string(), line: n, reason };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| parse_err(format!("invalid number `{s}`"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, found {}", v.len())));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if q.norm() < 1e-9 {
            return Err(parse_err("zero quaternion".into()));
        }
        // Keep near-unit input as written so that rewriting is byte-identical.
        let q = if (q.norm() - 1.0).abs() < 1e-6 { UnitQuaternion::new_unchecked(q) } else { UnitQuaternion::from_quaternion(q) };
        samples.push((v[0], Pose { p: Vector3::new(v[1], v[2], v[3]), q: canonicalize(q) }));
    }
    Trajectory::from_samples(samples).map_err(|e| IoError::Parse { path: path.display().to_string(), line: 0, reason: e.to_string() })
}

pub fn write_landmarks(path: &Path, landmarks: &[LandmarkRecord]) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "# id x y z birth death").map_err(io_err(path))?;
    for l in landmarks {
        writeln!(w, "{} {:.9} {:.9} {:.9} {:.6} {:.6}", l.id, l.position.x, l.position.y, l.position.z, l.birth, l.death)
            .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_landmarks(path: &Path) -> Result<Vec<LandmarkRecord>, IoError> {
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if is_skipped(&line) {
            continue;
        }
        let parse_err = |reason: String| IoError::Parse { path: path.display().to_string(), line: n, reason };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", f.len())));
        }
        let id = f[0].parse::<u64>().map_err(|_| parse_err(format!("invalid id `{}`", f[0])))?;
        let v: Vec<f64> = f[1..].iter().map(|s| s.parse::<f64>().map_err(|_| parse_err(format!("invalid number `{s}`")))).collect::<Result<_, _>>()?;
        out.push(LandmarkRecord { id, position: Vector3::new(v[0], v[1], v[2]), birth: v[3], death: v[4] });
    }
    Ok(out)
}

/// Per-estimate state size: `t landmarks clones error_dim camera_trace`.
pub fn write_dimensions(path: &Path, records: &[EstimateRecord]) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "# t landmarks clones error_dim camera_trace").map_err(io_err(path))?;
    for r in records {
        let dim = 9 + 3 * r.landmarks + 6 * r.clones;
        writeln!(w, "{:.6} {} {} {} {:.9e}", r.t, r.landmarks, r.clones, dim, r.camera_trace).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), IoError> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
