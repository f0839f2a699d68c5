//! JSON Lines trajectory files.
//!
//! Line 1 is the header `{format_version, config, schedule, sim_params}`.
//! Every further line is one step record with ring positions in mm,
//! velocities in mm/s and forces in N.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BearingState, RigidBody2D, Vec2};
use crate::simulator::{RollerContact, StepRecord, Trajectory, TrajectoryHeader, TRAJECTORY_FORMAT_VERSION};

const MM_PER_M: f64 = 1e3;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyLine {
    position: Vec2,
    velocity: Vec2,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateLine {
    inner: BodyLine,
    outer: BodyLine,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    step: usize,
    time: f64,
    state: StateLine,
    external_force: Vec2,
    rollers: Vec<RollerContact>,
    net_force_inner: Vec2,
    net_force_outer: Vec2,
}

fn body_to_line(b: &RigidBody2D) -> BodyLine {
    BodyLine {
        position: MM_PER_M * b.position,
        velocity: MM_PER_M * b.velocity,
    }
}

fn body_from_line(b: BodyLine) -> RigidBody2D {
    RigidBody2D {
        position: (1.0 / MM_PER_M) * b.position,
        velocity: (1.0 / MM_PER_M) * b.velocity,
    }
}

impl From<&StepRecord> for RecordLine {
    fn from(r: &StepRecord) -> Self {
        RecordLine {
            step: r.step,
            time: r.time,
            state: StateLine {
                inner: body_to_line(&r.state.inner),
                outer: body_to_line(&r.state.outer),
            },
            external_force: r.external_force,
            rollers: r.rollers.clone(),
            net_force_inner: r.net_force_inner,
            net_force_outer: r.net_force_outer,
        }
    }
}

impl From<RecordLine> for StepRecord {
    fn from(r: RecordLine) -> Self {
        StepRecord {
            step: r.step,
            time: r.time,
            state: BearingState {
                inner: body_from_line(r.state.inner),
                outer: body_from_line(r.state.outer),
            },
            external_force: r.external_force,
            rollers: r.rollers,
            net_force_inner: r.net_force_inner,
            net_force_outer: r.net_force_outer,
        }
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let json = |e: serde_json::Error| Error::format(path, e);
    serde_json::to_writer(&mut out, &traj.header).map_err(json)?;
    out.write_all(b"\n").map_err(io)?;
    for record in &traj.records {
        serde_json::to_writer(&mut out, &RecordLine::from(record)).map_err(json)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty trajectory file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: TrajectoryHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format_version != TRAJECTORY_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "trajectory format version {} (expected {TRAJECTORY_FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    let mut records: Vec<StepRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let record: RecordLine =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
        if let Some(prev) = records.last() {
            if record.step <= prev.step {
                return Err(Error::format(path, format!("line {}: steps out of order", i + 2)));
            }
        }
        if record.rollers.len() != header.config.n_rollers {
            return Err(Error::format(
                path,
                format!("line {}: {} rollers, header says {}", i + 2, record.rollers.len(), header.config.n_rollers),
            ));
        }
        records.push(record.into());
    }
    Ok(Trajectory { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BearingConfig, LoadSchedule, SimParams};
    use crate::simulator::simulate;

    #[test]
    fn round_trip_preserves_records() {
        let dir = std::env::temp_dir().join(format!("bearing-traj-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.jsonl");
        let params = SimParams { n_steps: 30, ..SimParams::default() };
        let traj = simulate(&BearingConfig::n209(13), &LoadSchedule::default(), &params).unwrap();
        write_trajectory(&path, &traj).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.header, traj.header);
        assert_eq!(back.records.len(), 31);
        for (a, b) in traj.records.iter().zip(&back.records) {
            assert_eq!(a.rollers, b.rollers);
            assert_eq!(a.net_force_outer, b.net_force_outer);
            let (pa, pb) = (a.state.outer.position, b.state.outer.position);
            assert!((pa - pb).norm() <= 1e-15 * pa.norm().max(1e-300));
        }
        // Positions are written in mm.
        let text = std::fs::read_to_string(&path).unwrap();
        let line: serde_json::Value = serde_json::from_str(text.lines().nth(31).unwrap()).unwrap();
        let y = line["state"]["outer"]["position"][1].as_f64().unwrap();
        assert!((y - 1e3 * traj.records[30].state.outer.position.y).abs() < 1e-15);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_wrong_version() {
        let dir = std::env::temp_dir().join(format!("bearing-traj-v-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.jsonl");
        let header = TrajectoryHeader {
            format_version: 99,
            config: BearingConfig::default(),
            schedule: LoadSchedule::default(),
            sim_params: SimParams::default(),
        };
        std::fs::write(&path, serde_json::to_string(&header).unwrap() + "\n").unwrap();
        let err = read_trajectory(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
