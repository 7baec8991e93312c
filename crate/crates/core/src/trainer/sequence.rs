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

//! Token sequences for the return-conditioned (DT) and imitation (CIL)
//! objectives.

use alloc::format;
use alloc::vec::Vec;

use crate::cjs::executor_bin;
use crate::error::{invalid, Error, Result};
use crate::experience::{StageFeatures, TaskAction, TaskKind, TaskState, Trajectory};

/// Raw action token; the model turns it into an input vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionToken {
    Discrete(usize),
    Rate(f64),
    Schedule { bin: usize, stage: [f64; StageFeatures::DIM] },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Pad,
    Return(f64),
    State(Vec<f64>),
    Action(ActionToken),
}

/// Supervision target for one input sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Discrete(usize),
    Rate(f64),
    Schedule { stage: usize, bin: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub slots: Vec<Slot>,
    /// Features of the candidate stages for the current CJS decision.
    pub stages: Vec<[f64; StageFeatures::DIM]>,
}

impl SequenceInput {
    /// Number of non-padding tokens.
    pub fn tokens(&self) -> usize {
        self.slots.iter().filter(|s| !matches!(s, Slot::Pad)).count()
    }

    pub fn has_return_tokens(&self) -> bool {
        self.slots.iter().any(|s| matches!(s, Slot::Return(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: SequenceInput,
    pub target: Target,
}

pub fn dt_slots(window: usize) -> usize {
    3 * window + 2
}

pub fn cil_slots(window: usize) -> usize {
    2 * window + 1
}

fn stage_array(f: &StageFeatures) -> [f64; StageFeatures::DIM] {
    [f.remaining_work, f.num_tasks, f.descendant_work, f.depth]
}

fn stage_candidates(state: &TaskState) -> Vec<[f64; StageFeatures::DIM]> {
    state.graph.as_ref().map_or_else(Vec::new, |g| g.stages.iter().map(stage_array).collect())
}

fn find_stage(state: &TaskState, job_id: u32, stage_id: u32) -> Result<usize> {
    state
        .graph
        .as_ref()
        .and_then(|g| g.stages.iter().position(|s| s.job_id == job_id && s.stage_id == stage_id))
        .ok_or_else(|| invalid(format!("job {job_id} stage {stage_id} is not among the runnable stages")))
}

fn total_executors(state: &TaskState) -> Result<u32> {
    state
        .scalar("total_executors")
        .map(|v| v as u32)
        .ok_or_else(|| invalid("CJS state lacks total_executors"))
}

/// Encodes an action taken in `state`.
pub fn action_token(state: &TaskState, action: &TaskAction) -> Result<ActionToken> {
    match *action {
        TaskAction::Bitrate { index } => Ok(ActionToken::Discrete(index)),
        TaskAction::SendRate { mbps } => Ok(ActionToken::Rate(mbps)),
        TaskAction::Schedule { job_id, stage_id, executors } => {
            let k = find_stage(state, job_id, stage_id)?;
            let stage = stage_array(&state.graph.as_ref().expect("checked").stages[k]);
            Ok(ActionToken::Schedule { bin: executor_bin(executors, total_executors(state)?), stage })
        }
    }
}

/// Supervision target for `action` taken in `state`.
pub fn action_target(state: &TaskState, action: &TaskAction) -> Result<Target> {
    match *action {
        TaskAction::Bitrate { index } => Ok(Target::Discrete(index)),
        TaskAction::SendRate { mbps } => Ok(Target::Rate(mbps)),
        TaskAction::Schedule { job_id, stage_id, executors } => Ok(Target::Schedule {
            stage: find_stage(state, job_id, stage_id)?,
            bin: executor_bin(executors, total_executors(state)?),
        }),
    }
}

fn check_index(t: &Trajectory, i: usize) -> Result<()> {
    if i >= t.steps.len() {
        return Err(invalid(format!("step {i} out of range for a trajectory of {} steps", t.steps.len())));
    }
    Ok(())
}

/// One past step of an episode as seen by the DT model.
#[derive(Debug, Clone, PartialEq)]
pub struct DtContext {
    pub return_to_go: f64,
    pub state: TaskState,
    pub action: TaskAction,
}

/// `(R, s, a)` for the last `window` context steps followed by `(R, s)` for
/// the current step, left-padded to `3w + 2` slots.
pub fn dt_input(
    history: &[DtContext],
    state: &TaskState,
    return_to_go: f64,
    window: usize,
) -> Result<SequenceInput> {
    let recent = &history[history.len().saturating_sub(window)..];
    let mut slots = Vec::with_capacity(dt_slots(window));
    slots.resize(3 * (window - recent.len()), Slot::Pad);
    for h in recent {
        slots.push(Slot::Return(h.return_to_go));
        slots.push(Slot::State(h.state.flatten()));
        slots.push(Slot::Action(action_token(&h.state, &h.action)?));
    }
    slots.push(Slot::Return(return_to_go));
    slots.push(Slot::State(state.flatten()));
    Ok(SequenceInput { slots, stages: stage_candidates(state) })
}

/// `(s, a)` for the last `window` context steps followed by `s`, left-padded
/// to `2w + 1` slots.
pub fn cil_input(
    history: &[(TaskState, TaskAction)],
    state: &TaskState,
    window: usize,
) -> Result<SequenceInput> {
    let recent = &history[history.len().saturating_sub(window)..];
    let mut slots = Vec::with_capacity(cil_slots(window));
    slots.resize(2 * (window - recent.len()), Slot::Pad);
    for (s, a) in recent {
        slots.push(Slot::State(s.flatten()));
        slots.push(Slot::Action(action_token(s, a)?));
    }
    slots.push(Slot::State(state.flatten()));
    Ok(SequenceInput { slots, stages: stage_candidates(state) })
}

pub fn build_dt_sequence(t: &Trajectory, i: usize, window: usize) -> Result<Sample> {
    check_index(t, i)?;
    if t.tag == TaskKind::Cc {
        return Err(Error::TaskMismatch { expected: TaskKind::Abr, found: TaskKind::Cc });
    }
    let lo = i.saturating_sub(window);
    let history: Vec<DtContext> = t.steps[lo..i]
        .iter()
        .map(|s| DtContext {
            return_to_go: s.return_to_go,
            state: s.state.clone(),
            action: s.action.clone(),
        })
        .collect();
    let step = &t.steps[i];
    Ok(Sample {
        input: dt_input(&history, &step.state, step.return_to_go, window)?,
        target: action_target(&step.state, &step.action)?,
    })
}

pub fn build_cil_sequence(t: &Trajectory, i: usize, window: usize) -> Result<Sample> {
    check_index(t, i)?;
    let step = &t.steps[i];
    let expert = step
        .expert_action
        .as_ref()
        .ok_or_else(|| invalid(format!("step {i} has no expert action")))?;
    let lo = i.saturating_sub(window);
    let history: Vec<(TaskState, TaskAction)> =
        t.steps[lo..i].iter().map(|s| (s.state.clone(), s.action.clone())).collect();
    Ok(Sample {
        input: cil_input(&history, &step.state, window)?,
        target: action_target(&step.state, expert)?,
    })
}
