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

//! Model checkpoints (`tb-model-v1`).
//!
//! ```text
//! tb-model-v1
//! config <ModelConfig as JSON>
//! normalizer <Normalizer as JSON>
//! target_return <f64>
//! blocks <count>
//! block <name> <rows> <cols>
//! <cols values>            # repeated `rows` times
//! ...
//! end
//! ```
//!
//! Values are written in shortest round-trip exponent form, so a loaded
//! model is bit-identical to the saved one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tb_core::trainer::{ModelConfig, Normalizer, SequencePolicyModel};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "tb-model-v1";

pub fn encode_checkpoint(model: &SequencePolicyModel) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_VERSION}");
    let _ = writeln!(out, "config {}", json(model.config())?);
    let _ = writeln!(out, "normalizer {}", json(model.normalizer())?);
    let _ = writeln!(out, "target_return {:e}", model.target_return());
    let _ = writeln!(out, "blocks {}", model.blocks().len());
    for b in model.blocks() {
        let _ = writeln!(out, "block {} {} {}", b.name, b.rows, b.cols);
        let values = &model.params()[b.range()];
        for row in values.chunks(b.cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    Ok(out)
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Runtime(e.to_string()))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(Error::format(self.path, self.last, "truncated checkpoint")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected '{key} ...'")))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.last, msg)
    }
}

pub fn decode_checkpoint(text: &str, path: &Path) -> Result<SequencePolicyModel> {
    let mut lines = Lines { inner: text.lines().enumerate(), path, last: 0 };
    let version = lines.next()?;
    if version.trim() != CHECKPOINT_VERSION {
        return Err(lines.err(format!("version '{}' (expected '{CHECKPOINT_VERSION}')", version.trim())));
    }
    let config: ModelConfig =
        serde_json::from_str(lines.keyed("config")?).map_err(|e| lines.err(format!("bad config: {e}")))?;
    let norm: Normalizer =
        serde_json::from_str(lines.keyed("normalizer")?).map_err(|e| lines.err(format!("bad normalizer: {e}")))?;
    let target: f64 = lines.keyed("target_return")?.trim().parse().map_err(|_| lines.err("bad target return"))?;
    let count: usize = lines.keyed("blocks")?.trim().parse().map_err(|_| lines.err("bad block count"))?;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let head: Vec<&str> = lines.keyed("block")?.split_whitespace().collect();
        let [name, rows, cols] = head[..] else {
            return Err(lines.err("block header needs <name> <rows> <cols>"));
        };
        let rows: usize = rows.parse().map_err(|_| lines.err("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| lines.err("bad column count"))?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next()?;
            let before = values.len();
            for tok in row.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| lines.err(format!("'{tok}' is not a number")))?);
            }
            if values.len() - before != cols {
                return Err(lines.err(format!("block '{name}' row has {} values, expected {cols}", values.len() - before)));
            }
        }
        blocks.push((name.to_string(), rows, cols, values));
    }
    if lines.next()?.trim() != "end" {
        return Err(lines.err("expected 'end'"));
    }
    SequencePolicyModel::from_parts(config, norm, target, &blocks).map_err(|e| lines.err(e.to_string()))
}

pub fn save_checkpoint(model: &SequencePolicyModel, path: impl AsRef<Path>) -> Result<()> {
    crate::write_file(path.as_ref(), encode_checkpoint(model)?.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SequencePolicyModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    decode_checkpoint(&text, path)
}
