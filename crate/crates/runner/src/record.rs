//! JSONL trajectory records: one header line, then rows in simulation
//! order, closed by an `end` row carrying the row count.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use lunarsim::autonomy::SessionEvent;
use lunarsim::coordination::{CycleMetrics, Site};
use lunarsim::vehicle::ObjectKind;
use lunarsim::world::World;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORD_FORMAT: &str = "lunarsim-record/1";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub kind: ObjectKind,
    pub x: f64,
    pub y: f64,
    pub distance: f64,
}

/// Rover state as streamed live and recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverSnapshot {
    pub time_s: f64,
    pub pose: Pose,
    pub speed: f64,
    pub yaw_rate: f64,
    /// FL, FR, RL, RR.
    pub steer: [f64; 4],
    /// FL, FR, ML, MR, RL, RR, rad/s.
    pub wheel_speeds: [f64; 6],
    pub rocker: [f64; 2],
    pub bogie: [f64; 2],
    pub targets: Vec<TargetState>,
}

impl RoverSnapshot {
    pub fn of(world: &World) -> Self {
        let s = &world.state;
        let targets = world
            .targets
            .iter()
            .map(|t| TargetState {
                kind: t.kind,
                x: t.position[0],
                y: t.position[1],
                distance: world.range_and_bearing(t.kind).map(|(d, _)| d).unwrap_or(f64::NAN),
            })
            .collect();
        RoverSnapshot {
            time_s: s.time,
            pose: Pose { x: s.position[0], y: s.position[1], z: s.position[2], heading: s.heading, pitch: s.pitch, roll: s.roll },
            speed: s.speed(),
            yaw_rate: s.yaw_rate,
            steer: s.steer_angles,
            wheel_speeds: s.wheel_speeds,
            rocker: s.rocker_angles,
            bogie: s.bogie_angles,
            targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSnapshot {
    pub time_s: f64,
    pub excavator: [f64; 3],
    pub bucket_kg: f64,
    pub truck: [f64; 3],
    pub bed_kg: f64,
    pub hauling: bool,
    pub excavated_kg: f64,
    pub dumped_kg: f64,
}

impl MachineSnapshot {
    pub fn of(site: &Site) -> Self {
        let (e, t) = (&site.excavator.pose, &site.truck.pose);
        MachineSnapshot {
            time_s: site.time,
            excavator: [e.position[0], e.position[1], e.heading],
            bucket_kg: site.excavator.load,
            truck: [t.position[0], t.position[1], t.heading],
            bed_kg: site.truck.load,
            hauling: site.truck.hauling,
            excavated_kg: site.excavated,
            dumped_kg: site.dumped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Row {
    Rover(RoverSnapshot),
    Event { event: SessionEvent },
    Machines(MachineSnapshot),
    Cycle(CycleMetrics),
    Summary { summary: serde_json::Value },
    End { rows: usize },
}

impl Row {
    /// Simulation time of state rows.
    pub fn time_s(&self) -> Option<f64> {
        match self {
            Row::Rover(s) => Some(s.time_s),
            Row::Machines(m) => Some(m.time_s),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record version mismatch: file is `{found}`, this build reads `{expected}`")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupt record at line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
}

/// Writes rows as they arrive. Call [`Recorder::finish`] to add the trailer.
pub struct Recorder<W: Write> {
    out: W,
    rows: usize,
}

impl<W: Write> Recorder<W> {
    pub fn new(mut out: W, header: &Header) -> std::io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(Recorder { out, rows: 0 })
    }

    pub fn row(&mut self, row: &Row) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out.write_all(b"\n")?;
        self.rows += 1;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        let n = self.rows;
        self.row(&Row::End { rows: n })?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Reads a whole record, checking the format tag, every line and the
/// trailer. The returned rows exclude the trailer.
pub fn read_record(path: &Path) -> Result<(Header, Vec<Row>), RecordError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let corrupt = |line: usize, message: String| RecordError::CorruptRecord { line, message };
    let first = lines.next().ok_or_else(|| corrupt(1, "empty file".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| corrupt(1, e.to_string()))?;
    if header.format != RECORD_FORMAT {
        return Err(RecordError::VersionMismatch { found: header.format, expected: RECORD_FORMAT.into() });
    }
    let mut rows = Vec::new();
    let mut ended = false;
    for (k, line) in lines.enumerate() {
        let n = k + 2;
        let line = line?;
        if ended {
            return Err(corrupt(n, "data after the end row".into()));
        }
        match serde_json::from_str::<Row>(&line).map_err(|e| corrupt(n, e.to_string()))? {
            Row::End { rows: count } => {
                if count != rows.len() {
                    return Err(corrupt(n, format!("end row counts {count} rows, found {}", rows.len())));
                }
                ended = true;
            }
            row => rows.push(row),
        }
    }
    if !ended {
        return Err(corrupt(rows.len() + 2, "record ends without an end row".into()));
    }
    Ok((header, rows))
}

/// Streams recorded rows. With `speed > 0` rows are paced so simulation
/// time advances `speed` times faster than wall-clock time; `0` replays
/// without pacing.
pub fn replay(path: &Path, speed: f64, mut out: impl FnMut(&Row)) -> Result<Header, RecordError> {
    let (header, rows) = read_record(path)?;
    let start = Instant::now();
    let t0 = rows.iter().find_map(Row::time_s).unwrap_or(0.0);
    for row in &rows {
        if let (Some(t), true) = (row.time_s(), speed > 0.0) {
            let due = Duration::from_secs_f64(((t - t0) / speed).max(0.0));
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        out(row);
    }
    Ok(header)
}
