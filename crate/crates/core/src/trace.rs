//! Time-indexed experiment records and their CSV persistence.

use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One experiment step. `pcd`/`pug` are `None` where the metric is
/// undefined (no detections / empty ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub u: [f64; 3],
    pub entropy: f64,
    /// Boundary energy under the ground-truth stiffness.
    pub boundary_energy: f64,
    pub pcd: Option<f64>,
    pub pug: Option<f64>,
    pub event: String,
}

pub const TRACE_HEADER: &str = "t,ux,uy,uz,entropy,boundary_energy,pcd,pug,event";

/// Fixed 9-significant-digit decimal, stable across runs.
fn fmt_sig(v: f64) -> String {
    format!("{:.8e}", v)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

/// Writes a trace as CSV. `comments` go first as `#`-prefixed lines
/// (threshold provenance and the like).
pub fn export_trace(
    records: &[TraceRecord],
    comments: &[String],
    path: &Path,
) -> Result<(), TraceError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        writeln!(f, "# {}", c)?;
    }
    writeln!(f, "{}", TRACE_HEADER)?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            fmt_sig(r.u[0]),
            fmt_sig(r.u[1]),
            fmt_sig(r.u[2]),
            fmt_sig(r.entropy),
            fmt_sig(r.boundary_energy),
            fmt_opt(r.pcd),
            fmt_opt(r.pug),
            r.event
        )?;
    }
    Ok(())
}

pub fn parse_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut saw_header = false;
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if trimmed != TRACE_HEADER {
                return Err(TraceError::Parse {
                    line: i + 1,
                    reason: "unexpected header".into(),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 9 {
            return Err(TraceError::Parse {
                line: i + 1,
                reason: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64, TraceError> {
            s.parse().map_err(|_| TraceError::Parse {
                line: i + 1,
                reason: format!("bad number {:?}", s),
            })
        };
        let opt = |s: &str| -> Result<Option<f64>, TraceError> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        records.push(TraceRecord {
            t: fields[0].parse().map_err(|_| TraceError::Parse {
                line: i + 1,
                reason: "bad t".into(),
            })?,
            u: [num(fields[1])?, num(fields[2])?, num(fields[3])?],
            entropy: num(fields[4])?,
            boundary_energy: num(fields[5])?,
            pcd: opt(fields[6])?,
            pug: opt(fields[7])?,
            event: fields[8].to_string(),
        });
    }
    Ok(records)
}
