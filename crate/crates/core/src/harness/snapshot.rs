use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fgcb::FgcbState;
use crate::pipeline::PipelineState;
use crate::sgeb::SgebState;

use super::report::canonical_json;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format_version: u32,
    state: PipelineState,
}

/// Canonical JSON of a pipeline state. Floats keep their exact bits.
pub fn snapshot_to_string(state: &PipelineState) -> Result<String> {
    canonical_json(
        &SnapshotFile {
            format_version: SNAPSHOT_FORMAT_VERSION,
            state: state.clone(),
        },
        None,
    )
}

fn field_error(field: &str, reason: impl ToString) -> Error {
    Error::Snapshot {
        field: field.into(),
        reason: reason.to_string(),
    }
}

pub fn snapshot_from_str(text: &str) -> Result<PipelineState> {
    let value: Value = serde_json::from_str(text)?;
    match value.get("format_version") {
        None => return Err(field_error("format_version", "missing")),
        Some(v) if v.as_u64() != Some(u64::from(SNAPSHOT_FORMAT_VERSION)) => {
            return Err(field_error(
                "format_version",
                format!("expected {SNAPSHOT_FORMAT_VERSION}, found {v}"),
            ))
        }
        Some(_) => {}
    }
    let file: SnapshotFile = serde_json::from_value(value).map_err(|e| field_error("state", e))?;
    let PipelineState {
        fgcb,
        sgeb,
        step,
        question_pooled,
    } = file.state;
    let fgcb = FgcbState::from_entries(fgcb.capacity(), fgcb.entries().to_vec()).map_err(|e| field_error("state.fgcb", e))?;
    let sgeb = SgebState::from_entries(*sgeb.config(), sgeb.entries().to_vec()).map_err(|e| field_error("state.sgeb", e))?;
    if fgcb.entries().last().is_some_and(|e| e.frame_index > step) {
        return Err(field_error("state.step", "window holds frames newer than the step counter"));
    }
    if sgeb.entries().last().is_some_and(|e| e.frame_index > step) {
        return Err(field_error("state.step", "bank holds frames newer than the step counter"));
    }
    Ok(PipelineState {
        fgcb,
        sgeb,
        step,
        question_pooled,
    })
}

pub fn snapshot_save(state: &PipelineState, path: &Path) -> Result<()> {
    std::fs::write(path, snapshot_to_string(state)?)?;
    Ok(())
}

pub fn snapshot_load(path: &Path) -> Result<PipelineState> {
    snapshot_from_str(&std::fs::read_to_string(path)?)
}
