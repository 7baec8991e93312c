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

//! Text formats for traces, video manifests, CJS workloads and CC session
//! records.
//!
//! Trace (`tb-trace-v1`): optional first line `# tb-trace-v1`, then one
//! `<seconds> <mbps>` row per sample, separated by whitespace or a comma.
//! Lines starting with `#` are comments. Timestamps must increase; absolute
//! timestamps (FCC-style logs) are accepted as is.
//!
//! Manifest (`tb-manifest-v1`): first line `# tb-manifest-v1`, then
//! `duration <chunk seconds>`, `ladder <mbps> ...` and one row of chunk sizes
//! (Mbit, one per ladder rung) per chunk.
//!
//! Workload (`tb-workload-v1`): first line `# tb-workload-v1`, then one JSON
//! object per job: `{"id":..,"arrival":..,"stages":[{"id":..,"num_tasks":..,
//! "task_duration":..}],"edges":[[parent,child],..]}`.
//!
//! Sessions: CSV with header `flow_id,stall_s,playback_s`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tb_core::abr::VideoManifest;
use tb_core::cc::SessionRecord;
use tb_core::cjs::JobDag;
use tb_core::trace::BandwidthTrace;

use crate::error::{Error, Result};

pub const TRACE_VERSION: &str = "tb-trace-v1";
pub const MANIFEST_VERSION: &str = "tb-manifest-v1";
pub const WORKLOAD_VERSION: &str = "tb-workload-v1";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

fn version_line(line: &str) -> Option<&str> {
    line.trim().strip_prefix('#').map(str::trim).filter(|v| v.starts_with("tb-"))
}

fn number(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::format(path, line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::format(path, line, format!("'{tok}' is not finite")));
    }
    Ok(v)
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty())
}

pub fn parse_trace(text: &str, path: &Path) -> Result<BandwidthTrace> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = version_line(line) {
            if v != TRACE_VERSION {
                return Err(Error::format(path, i + 1, format!("version '{v}' (expected '{TRACE_VERSION}')")));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = fields(line).collect();
        if cols.len() != 2 {
            return Err(Error::format(path, i + 1, format!("expected 2 columns, found {}", cols.len())));
        }
        pairs.push((number(path, i + 1, cols[0])?, number(path, i + 1, cols[1])?));
    }
    if pairs.is_empty() {
        return Err(Error::format(path, 1, "trace has no samples"));
    }
    BandwidthTrace::from_pairs(&pairs).map_err(|e| Error::format(path, 1, e.to_string()))
}

pub fn format_trace(trace: &BandwidthTrace) -> String {
    let mut out = format!("# {TRACE_VERSION}\n");
    for s in trace.samples() {
        let _ = writeln!(out, "{} {}", s.t, s.mbps);
    }
    out
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<BandwidthTrace> {
    let path = path.as_ref();
    parse_trace(&read(path)?, path)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<VideoManifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next().and_then(|(_, l)| version_line(l)) {
        Some(MANIFEST_VERSION) => {}
        Some(v) => return Err(Error::format(path, 1, format!("version '{v}' (expected '{MANIFEST_VERSION}')"))),
        None => return Err(Error::format(path, 1, format!("missing '# {MANIFEST_VERSION}' header"))),
    }
    let mut duration = None;
    let mut ladder = None;
    let mut sizes = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let mut cols = fields(line);
        match cols.next() {
            Some("duration") => {
                let tok = cols.next().ok_or_else(|| Error::format(path, i + 1, "duration needs a value"))?;
                duration = Some(number(path, i + 1, tok)?);
            }
            Some("ladder") => ladder = Some(cols.map(|t| number(path, i + 1, t)).collect::<Result<Vec<_>>>()?),
            Some(first) => {
                let row = std::iter::once(first).chain(cols).map(|t| number(path, i + 1, t)).collect::<Result<_>>()?;
                sizes.push(row);
            }
            None => {}
        }
    }
    let duration = duration.ok_or_else(|| Error::format(path, 1, "missing 'duration' line"))?;
    let ladder = ladder.ok_or_else(|| Error::format(path, 1, "missing 'ladder' line"))?;
    VideoManifest::new(duration, ladder, sizes).map_err(|e| Error::format(path, 1, e.to_string()))
}

pub fn format_manifest(m: &VideoManifest) -> String {
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    let mut out = format!("# {MANIFEST_VERSION}\nduration {}\nladder {}\n", m.chunk_duration, join(&m.ladder));
    for row in &m.chunk_sizes {
        out.push_str(&join(row));
        out.push('\n');
    }
    out
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<VideoManifest> {
    let path = path.as_ref();
    parse_manifest(&read(path)?, path)
}

pub fn parse_workload(text: &str, path: &Path) -> Result<Vec<JobDag>> {
    let mut jobs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = version_line(line) {
            if v != WORKLOAD_VERSION {
                return Err(Error::format(path, i + 1, format!("version '{v}' (expected '{WORKLOAD_VERSION}')")));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let job: JobDag =
            serde_json::from_str(line).map_err(|e| Error::format(path, i + 1, format!("bad job record: {e}")))?;
        job.validate().map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        jobs.push(job);
    }
    if jobs.is_empty() {
        return Err(Error::format(path, 1, "workload has no jobs"));
    }
    Ok(jobs)
}

pub fn format_workload(jobs: &[JobDag]) -> Result<String> {
    let mut out = format!("# {WORKLOAD_VERSION}\n");
    for j in jobs {
        out.push_str(&serde_json::to_string(j).map_err(|e| Error::Runtime(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn load_workload(path: impl AsRef<Path>) -> Result<Vec<JobDag>> {
    let path = path.as_ref();
    parse_workload(&read(path)?, path)
}

pub fn format_sessions(sessions: &[(u64, SessionRecord)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["flow_id", "stall_s", "playback_s"]).map_err(csv_err)?;
    for (id, s) in sessions {
        w.write_record([id.to_string(), s.stall.to_string(), s.playback.to_string()]).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Runtime(e.to_string()))?)
        .map_err(|e| Error::Runtime(e.to_string()))
}

pub fn parse_sessions(text: &str, path: &Path) -> Result<Vec<(u64, SessionRecord)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, i + 2, e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::format(path, i + 2, "expected flow_id,stall_s,playback_s"));
        }
        let id: u64 = rec[0].parse().map_err(|_| Error::format(path, i + 2, "bad flow id"))?;
        let s = SessionRecord::new(number(path, i + 2, &rec[1])?, number(path, i + 2, &rec[2])?)
            .map_err(|e| Error::format(path, i + 2, e.to_string()))?;
        out.push((id, s));
    }
    Ok(out)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Runtime(e.to_string())
}
