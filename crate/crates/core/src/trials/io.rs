//! CSV schemas for trial tables and raw traces.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GazeTrace;
use crate::geometry::GazeDisplacement;
use crate::{Error, Result};

const TRIAL_COLUMNS: [&str; 5] = ["trial_id", "dv_deg", "ds_deg", "accepted", "offset_s"];
const TRACE_COLUMNS: [&str; 3] = ["t_s", "left_deg", "right_deg"];

/// One row of a trial table. `ds_deg` keeps its sign (left/right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: u64,
    #[serde(default)]
    pub subject: Option<u32>,
    pub dv_deg: f64,
    pub ds_deg: f64,
    pub accepted: bool,
    pub offset_s: Option<f64>,
    #[serde(default)]
    pub trace_file: Option<String>,
}

impl TrialRow {
    pub fn displacement(&self) -> GazeDisplacement {
        GazeDisplacement::new(self.dv_deg, self.ds_deg)
    }

    /// `(displacement, offset)` for accepted rows.
    pub fn observation(&self) -> Option<(GazeDisplacement, f64)> {
        match (self.accepted, self.offset_s) {
            (true, Some(t)) => Some((self.displacement(), t)),
            _ => None,
        }
    }
}

fn schema(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_headers(path: &Path, headers: &csv::StringRecord, required: &[&str]) -> Result<()> {
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h.trim() == *c))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(schema(
            path,
            format!("missing column(s): {}", missing.join(", ")),
        ))
    }
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trials_from(file, path)
}

pub(crate) fn read_trials_from<R: Read>(reader: R, path: &Path) -> Result<Vec<TrialRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_headers(path, rdr.headers()?, &TRIAL_COLUMNS)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<TrialRow>().enumerate() {
        let row = rec.map_err(|e| schema(path, format!("row {}: {e}", i + 1)))?;
        if row.accepted && !row.offset_s.is_some_and(f64::is_finite) {
            return Err(schema(
                path,
                format!(
                    "row {} (trial {}): accepted trial without an offset",
                    i + 1,
                    row.trial_id
                ),
            ));
        }
        if !(row.dv_deg.is_finite() && row.ds_deg.is_finite()) {
            return Err(schema(
                path,
                format!("row {}: non-finite displacement", i + 1),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_trials(path: impl AsRef<Path>, rows: &[TrialRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trials_to(file, rows)
}

pub(crate) fn write_trials_to<W: Write>(writer: W, rows: &[TrialRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        wtr.write_record([
            "trial_id",
            "subject",
            "dv_deg",
            "ds_deg",
            "accepted",
            "offset_s",
            "trace_file",
        ])?;
    }
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceSample {
    t_s: f64,
    left_deg: f64,
    right_deg: f64,
}

/// Reads a `t_s,left_deg,right_deg` trace. The sample rate is inferred from
/// the timestamps, which must be uniform to within 1%.
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<GazeTrace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    check_headers(path, rdr.headers()?, &TRACE_COLUMNS)?;
    let samples: Vec<TraceSample> = rdr
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| schema(path, format!("row {}: {e}", i + 1))))
        .collect::<Result<_>>()?;
    if samples.len() < 2 {
        return Err(schema(path, "trace needs at least two samples"));
    }
    let span = samples[samples.len() - 1].t_s - samples[0].t_s;
    let dt = span / (samples.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(schema(path, "timestamps must increase"));
    }
    if let Some(w) = samples
        .windows(2)
        .position(|w| ((w[1].t_s - w[0].t_s) - dt).abs() > 0.01 * dt)
    {
        return Err(schema(
            path,
            format!("non-uniform sampling at row {}", w + 2),
        ));
    }
    let (left, right) = samples.iter().map(|s| (s.left_deg, s.right_deg)).unzip();
    GazeTrace::new(1.0 / dt, left, right).map_err(|e| schema(path, e.to_string()))
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &GazeTrace) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    for i in 0..trace.len() {
        wtr.serialize(TraceSample {
            t_s: trace.time_s(i),
            left_deg: trace.left_deg[i],
            right_deg: trace.right_deg[i],
        })?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
