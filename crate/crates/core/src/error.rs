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

use alloc::string::String;

use crate::experience::TaskKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("task mismatch: expected {expected}, found {found}")]
    TaskMismatch { expected: TaskKind, found: TaskKind },
    #[error("episode already finished")]
    EpisodeDone,
    #[error("trace exhausted at t={0}s")]
    TraceExhausted(f64),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("expert action unavailable: bottleneck trace is hidden in evaluation mode")]
    HiddenTrace,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
