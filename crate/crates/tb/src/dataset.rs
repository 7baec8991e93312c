// Copyright 2026 The tb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Experience files.
//!
//! Line 1 is a header object
//! `{"schema":"tb-exp-v1","tag":..,"stats":..,"metadata":..,"trajectories":N}`
//! followed by exactly `N` lines, one JSON-encoded trajectory each. Floats are
//! written in shortest round-trip form, so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tb_core::{DatasetStats, Error as CoreError, ExperienceDataset, TaskKind, Trajectory, SCHEMA_VERSION};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    tag: TaskKind,
    stats: DatasetStats,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    trajectories: usize,
}

pub fn encode_dataset(ds: &ExperienceDataset) -> Result<String> {
    ds.validate()?;
    let header = Header {
        schema: ds.schema.clone(),
        tag: ds.tag,
        stats: ds.stats.clone(),
        metadata: ds.metadata.clone(),
        trajectories: ds.trajectories.len(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Runtime(e.to_string()))?;
    out.push('\n');
    for t in &ds.trajectories {
        out.push_str(&serde_json::to_string(t).map_err(|e| Error::Runtime(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_dataset(text: &str, path: &Path) -> Result<ExperienceDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format(path, 1, "empty experience file"))?;
    let probe: serde_json::Value =
        serde_json::from_str(first).map_err(|e| Error::format(path, 1, format!("bad header: {e}")))?;
    match probe.get("schema").and_then(|s| s.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(Error::format(path, 1, format!("schema '{other}' (expected '{SCHEMA_VERSION}')")))
        }
        None => return Err(Error::format(path, 1, "header lacks a schema version")),
    }
    let header: Header =
        serde_json::from_value(probe).map_err(|e| Error::format(path, 1, format!("bad header: {e}")))?;
    let mut trajectories = Vec::with_capacity(header.trajectories);
    for (i, line) in lines {
        let t: Trajectory = serde_json::from_str(line)
            .map_err(|e| Error::format(path, i + 1, format!("bad trajectory record: {e}")))?;
        if t.tag != header.tag {
            return Err(Error::format(
                path,
                i + 1,
                CoreError::TaskMismatch { expected: header.tag, found: t.tag }.to_string(),
            ));
        }
        trajectories.push(t);
    }
    if trajectories.len() != header.trajectories {
        return Err(Error::format(
            path,
            text.lines().count(),
            format!("truncated: header declares {} trajectories, found {}", header.trajectories, trajectories.len()),
        ));
    }
    let ds = ExperienceDataset {
        schema: header.schema,
        tag: header.tag,
        stats: header.stats,
        metadata: header.metadata,
        trajectories,
    };
    ds.validate().map_err(|e| Error::format(path, 1, e.to_string()))?;
    Ok(ds)
}

pub fn save_dataset(ds: &ExperienceDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = encode_dataset(ds)?;
    crate::write_file(path, text.as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ExperienceDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    decode_dataset(&text, path)
}
