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

#![cfg_attr(not(feature = "std"), no_std)]
//! Simulators, baseline policies, an offline sequence-policy trainer and the
//! request scheduler for three network control tasks: adaptive bitrate
//! streaming (ABR), cluster job scheduling (CJS) and congestion control (CC).
//!
//! The crate is `no_std` + `alloc`. All floating point transcendentals go
//! through `libm` so results are bit-identical across targets, and every
//! source of randomness is an explicitly seeded ChaCha stream.

extern crate alloc;

pub mod abr;
pub mod apc;
pub mod cc;
pub mod cjs;
mod error;
pub mod experience;
pub mod policies;
pub mod rng;
pub mod rollout;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
pub use experience::{
    compute_return_to_go, validate_trajectory, DagSnapshot, DatasetStats, EnvDescriptor,
    ExperienceDataset, Feature, Series, StageFeatures, TaskAction, TaskKind, TaskState,
    Trajectory, TransitionStep, Violation, SCHEMA_VERSION,
};
