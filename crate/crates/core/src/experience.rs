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

//! Task-tagged states, actions, trajectories and experience datasets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Version string written into every experience file header.
pub const SCHEMA_VERSION: &str = "tb-exp-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Abr,
    Cjs,
    Cc,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Abr => "abr",
            TaskKind::Cjs => "cjs",
            TaskKind::Cc => "cc",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "abr" => Ok(TaskKind::Abr),
            "cjs" => Ok(TaskKind::Cjs),
            "cc" => Ok(TaskKind::Cc),
            other => Err(invalid(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Features of one schedulable stage in a cluster snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFeatures {
    pub job_id: u32,
    pub stage_id: u32,
    /// Task-seconds left in this stage.
    pub remaining_work: f64,
    /// Tasks not yet started.
    pub num_tasks: f64,
    /// Remaining work of this stage plus all of its transitive descendants.
    pub descendant_work: f64,
    /// Longest path from a root of the job DAG.
    pub depth: f64,
}

impl StageFeatures {
    pub const DIM: usize = 4;

    pub fn to_vec(&self) -> Vec<f64> {
        alloc::vec![self.remaining_work, self.num_tasks, self.descendant_work, self.depth]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DagSnapshot {
    pub stages: Vec<StageFeatures>,
}

/// A task-tagged observation with named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub tag: TaskKind,
    pub scalars: Vec<Feature>,
    pub vectors: Vec<Series>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<DagSnapshot>,
}

impl TaskState {
    pub fn new(tag: TaskKind) -> Self {
        TaskState { tag, scalars: Vec::new(), vectors: Vec::new(), graph: None }
    }

    pub fn with_scalar(mut self, name: &str, value: f64) -> Self {
        self.scalars.push(Feature { name: name.to_string(), value });
        self
    }

    pub fn with_vector(mut self, name: &str, values: Vec<f64>) -> Self {
        self.vectors.push(Series { name: name.to_string(), values });
        self
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|f| f.name == name).map(|f| f.value)
    }

    pub fn vector(&self, name: &str) -> Option<&[f64]> {
        self.vectors.iter().find(|s| s.name == name).map(|s| s.values.as_slice())
    }

    /// Scalars in declaration order followed by every vector, concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.scalars.iter().map(|f| f.value).collect();
        for s in &self.vectors {
            out.extend_from_slice(&s.values);
        }
        out
    }

    pub fn flat_dim(&self) -> usize {
        self.scalars.len() + self.vectors.iter().map(|s| s.values.len()).sum::<usize>()
    }

    /// Feature names and vector lengths; two states with equal layouts
    /// flatten to comparable vectors.
    pub fn layout(&self) -> Vec<(String, usize)> {
        self.scalars
            .iter()
            .map(|f| (f.name.clone(), 0))
            .chain(self.vectors.iter().map(|s| (s.name.clone(), s.values.len())))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.scalars.iter().all(|f| f.value.is_finite())
            && self.vectors.iter().all(|s| s.values.iter().all(|v| v.is_finite()))
            && self.graph.as_ref().map_or(true, |g| {
                g.stages.iter().all(|s| s.to_vec().iter().all(|v| v.is_finite()))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskAction {
    Bitrate { index: usize },
    Schedule { job_id: u32, stage_id: u32, executors: u32 },
    SendRate { mbps: f64 },
}

impl TaskAction {
    pub fn tag(&self) -> TaskKind {
        match self {
            TaskAction::Bitrate { .. } => TaskKind::Abr,
            TaskAction::Schedule { .. } => TaskKind::Cjs,
            TaskAction::SendRate { .. } => TaskKind::Cc,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            TaskAction::SendRate { mbps } => mbps.is_finite() && *mbps >= 0.0,
            TaskAction::Schedule { executors, .. } => *executors >= 1,
            TaskAction::Bitrate { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStep {
    pub index: usize,
    pub state: TaskState,
    pub action: TaskAction,
    pub reward: f64,
    pub return_to_go: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_action: Option<TaskAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub env_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub tag: TaskKind,
    pub env: EnvDescriptor,
    pub behavior: String,
    pub steps: Vec<TransitionStep>,
}

impl Trajectory {
    /// Builds a trajectory from raw `(state, action, reward, expert)` tuples,
    /// filling in step indices and returns-to-go.
    pub fn from_parts(
        id: u64,
        tag: TaskKind,
        env: EnvDescriptor,
        behavior: &str,
        parts: Vec<(TaskState, TaskAction, f64, Option<TaskAction>)>,
    ) -> Result<Self> {
        let rewards: Vec<f64> = parts.iter().map(|p| p.2).collect();
        let rtg = compute_return_to_go(&rewards)?;
        let steps = parts
            .into_iter()
            .zip(rtg)
            .enumerate()
            .map(|(index, ((state, action, reward, expert_action), return_to_go))| {
                TransitionStep { index, state, action, reward, return_to_go, expert_action }
            })
            .collect();
        let traj = Trajectory { id, tag, env, behavior: behavior.to_string(), steps };
        let violations = validate_trajectory(&traj);
        if let Some(v) = violations.first() {
            return Err(invalid(format!("trajectory {id}: {v}")));
        }
        Ok(traj)
    }

    pub fn total_return(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.return_to_go)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Suffix sums: `out[i] = rewards[i] + rewards[i+1] + ... + rewards[n-1]`.
pub fn compute_return_to_go(rewards: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(invalid(format!("reward {i} is not finite")));
    }
    let mut out = alloc::vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    NonContiguous { position: usize, found: usize },
    StateTag { step: usize },
    ActionTag { step: usize },
    NonFinite { step: usize },
    ReturnToGo { step: usize, expected: f64, found: f64 },
    MissingExpert { step: usize },
    UnexpectedExpert { step: usize },
    StateLayout { step: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty trajectory"),
            Violation::NonContiguous { position, found } => {
                write!(f, "non-contiguous: step at position {position} has index {found}")
            }
            Violation::StateTag { step } => write!(f, "step {step}: state tag differs from trajectory"),
            Violation::ActionTag { step } => {
                write!(f, "step {step}: action variant differs from trajectory tag")
            }
            Violation::NonFinite { step } => write!(f, "step {step}: non-finite value"),
            Violation::ReturnToGo { step, expected, found } => {
                write!(f, "step {step}: return_to_go {found} != suffix sum {expected}")
            }
            Violation::MissingExpert { step } => write!(f, "step {step}: missing expert_action"),
            Violation::UnexpectedExpert { step } => {
                write!(f, "step {step}: expert_action present on a non-CC trajectory")
            }
            Violation::StateLayout { step } => {
                write!(f, "step {step}: state feature layout differs from step 0")
            }
        }
    }
}

fn rtg_matches(expected: f64, found: f64) -> bool {
    (expected - found).abs() <= 1e-9 * expected.abs().max(1.0)
}

/// Checks every per-step invariant of a trajectory. An empty result means
/// the trajectory is valid.
pub fn validate_trajectory(t: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.steps.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    let layout0 = t.steps[0].state.layout();
    for (pos, step) in t.steps.iter().enumerate() {
        if step.index != pos {
            out.push(Violation::NonContiguous { position: pos, found: step.index });
        }
        if step.state.tag != t.tag {
            out.push(Violation::StateTag { step: step.index });
        }
        if step.action.tag() != t.tag {
            out.push(Violation::ActionTag { step: step.index });
        }
        if !step.reward.is_finite()
            || !step.return_to_go.is_finite()
            || !step.state.is_finite()
            || !step.action.is_finite()
        {
            out.push(Violation::NonFinite { step: step.index });
        }
        if pos > 0 && step.state.layout() != layout0 {
            out.push(Violation::StateLayout { step: step.index });
        }
        match (&step.expert_action, t.tag) {
            (None, TaskKind::Cc) => out.push(Violation::MissingExpert { step: step.index }),
            (Some(_), TaskKind::Abr | TaskKind::Cjs) => {
                out.push(Violation::UnexpectedExpert { step: step.index })
            }
            (Some(a), TaskKind::Cc) if a.tag() != TaskKind::Cc || !a.is_finite() => {
                out.push(Violation::ActionTag { step: step.index })
            }
            _ => {}
        }
    }
    let rewards: Vec<f64> = t.steps.iter().map(|s| s.reward).collect();
    if let Ok(rtg) = compute_return_to_go(&rewards) {
        for (step, expected) in t.steps.iter().zip(rtg) {
            if !rtg_matches(expected, step.return_to_go) {
                out.push(Violation::ReturnToGo {
                    step: step.index,
                    expected,
                    found: step.return_to_go,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub return_min: f64,
    pub return_max: f64,
    pub return_mean: f64,
}

impl DatasetStats {
    pub fn compute(trajectories: &[Trajectory]) -> Self {
        let count = trajectories.len();
        if count == 0 {
            return DatasetStats { count, return_min: 0.0, return_max: 0.0, return_mean: 0.0 };
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for t in trajectories {
            let r = t.total_return();
            min = min.min(r);
            max = max.max(r);
            sum += r;
        }
        DatasetStats { count, return_min: min, return_max: max, return_mean: sum / count as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceDataset {
    pub schema: String,
    pub tag: TaskKind,
    pub stats: DatasetStats,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub trajectories: Vec<Trajectory>,
}

impl ExperienceDataset {
    pub fn new(
        tag: TaskKind,
        trajectories: Vec<Trajectory>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let stats = DatasetStats::compute(&trajectories);
        let ds = ExperienceDataset {
            schema: SCHEMA_VERSION.to_string(),
            tag,
            stats,
            metadata,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Full consistency check: schema, single tag, per-trajectory invariants,
    /// one state layout across the dataset, and summary statistics.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema version '{}' (expected '{SCHEMA_VERSION}')",
                self.schema
            )));
        }
        let mut layout = None;
        for t in &self.trajectories {
            if t.tag != self.tag {
                return Err(Error::TaskMismatch { expected: self.tag, found: t.tag });
            }
            if let Some(v) = validate_trajectory(t).first() {
                return Err(invalid(format!("trajectory {}: {v}", t.id)));
            }
            let l = t.steps[0].state.layout();
            match &layout {
                None => layout = Some(l),
                Some(prev) if *prev != l => {
                    return Err(invalid(format!(
                        "trajectory {}: state layout differs from the rest of the dataset",
                        t.id
                    )))
                }
                _ => {}
            }
        }
        let stats = DatasetStats::compute(&self.trajectories);
        if stats != self.stats {
            return Err(invalid("summary statistics inconsistent with contents"));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}
