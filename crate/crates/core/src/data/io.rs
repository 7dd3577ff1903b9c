use std::collections::HashSet;
use std::path::Path;

use nalgebra::{Matrix2xX, Matrix3xX};
use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose3D};

#[derive(Serialize, Deserialize)]
struct Line {
    sequence_id: String,
    frame_idx: u64,
    points_2d: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points_3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labeled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contact: Option<bool>,
}

fn at_line(line: usize, e: Error) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation { field, message: format!("line {line}: {message}") },
        other => other,
    }
}

fn to_record(l: Line) -> Result<DatasetRecord> {
    let p2: Vec<f64> = l.points_2d.iter().flatten().copied().collect();
    let pose2d = Pose2D::new(Matrix2xX::from_column_slice(&p2))?;
    let pose3d = match &l.points_3d {
        Some(p) => {
            let flat: Vec<f64> = p.iter().flatten().copied().collect();
            Some(Pose3D::new(Matrix3xX::from_column_slice(&flat))?)
        }
        None => None,
    };
    let labeled = l.labeled.unwrap_or(pose3d.is_some());
    if labeled && pose3d.is_none() {
        return Err(Error::validation("points_3d", "labeled record without 3D points"));
    }
    Ok(DatasetRecord {
        sequence_id: l.sequence_id,
        frame_idx: l.frame_idx,
        pose2d,
        pose3d,
        labeled,
        contact: l.contact,
    })
}

/// Parses interchange text. Errors carry the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(raw).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let rec = to_record(parsed).map_err(|e| at_line(line, e))?;
        if !seen.insert((rec.sequence_id.clone(), rec.frame_idx)) {
            return Err(Error::validation(
                "frame_idx",
                format!("line {line}: duplicate frame {}:{}", rec.sequence_id, rec.frame_idx),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

fn to_line(r: &DatasetRecord) -> Line {
    let p2 = r.pose2d.points();
    Line {
        sequence_id: r.sequence_id.clone(),
        frame_idx: r.frame_idx,
        points_2d: p2.column_iter().map(|c| [c[0], c[1]]).collect(),
        points_3d: r.pose3d.as_ref().map(|p| p.points().column_iter().map(|c| [c[0], c[1], c[2]]).collect()),
        labeled: (r.labeled != r.pose3d.is_some()).then_some(r.labeled),
        contact: r.contact,
    }
}

/// Serializes records; floats are written in shortest round-trip form.
pub fn to_jsonl(records: &[DatasetRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(&to_line(r)).expect("plain data serializes"));
        s.push('\n');
    }
    s
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    std::fs::write(path, to_jsonl(records))?;
    Ok(())
}
