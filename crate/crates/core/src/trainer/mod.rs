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

//! Offline fine-tuning of a context-window sequence policy.
//!
//! Two objectives are supported: return-conditioned action prediction (DT,
//! cross-entropy, ABR and CJS) and imitation of expert actions (CIL, squared
//! error, CC).

mod model;
mod sequence;

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use model::{
    Encoded, HeadOutput, ModelConfig, Normalizer, Objective, ParamBlock, SequencePolicyModel,
};
pub use sequence::{
    action_target, action_token, build_cil_sequence, build_dt_sequence, cil_input, cil_slots,
    dt_input, dt_slots, ActionToken, DtContext, Sample, SequenceInput, Slot, Target,
};

use crate::cc::mape;
use crate::cjs::executor_bin_value;
use crate::error::{invalid, Error, Result};
use crate::experience::{ExperienceDataset, StageFeatures, TaskAction, TaskKind, TaskState};
use crate::rng::{stream_rng, streams};
use model::argmax;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_EMBED_WIDTH: usize = 16;
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

pub fn default_window(tag: TaskKind) -> usize {
    match tag {
        TaskKind::Abr => 10,
        TaskKind::Cjs => 20,
        TaskKind::Cc => 10,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub objective: Objective,
    pub window: usize,
    pub embed_width: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// ABR head size; inferred from the dataset when absent.
    pub num_actions: Option<usize>,
}

impl TrainingConfig {
    pub fn for_task(tag: TaskKind, seed: u64) -> Self {
        TrainingConfig {
            objective: if tag == TaskKind::Cc { Objective::Cil } else { Objective::Dt },
            window: default_window(tag),
            embed_width: DEFAULT_EMBED_WIDTH,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            seed,
            num_actions: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be finite and > 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.window == 0 {
            return Err(invalid("batch size, epochs and window must be >= 1"));
        }
        if self.embed_width == 0 || self.hidden_width == 0 {
            return Err(invalid("model widths must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub samples: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = libm::sqrt(var);
    (mean, if std > 1e-8 { std } else { 1.0 })
}

/// Standardization statistics over every step of the dataset.
pub fn fit_normalizer(ds: &ExperienceDataset) -> Result<Normalizer> {
    let steps = || ds.trajectories.iter().flat_map(|t| t.steps.iter());
    let first = steps().next().ok_or(Error::Empty("dataset"))?;
    let dim = first.state.flat_dim();
    let flat: Vec<Vec<f64>> = steps().map(|s| s.state.flatten()).collect();
    let mut norm = Normalizer::identity(dim);
    for k in 0..dim {
        let (m, s) = mean_std(flat.iter().map(|v| v[k]));
        norm.state_mean[k] = m;
        norm.state_std[k] = s;
    }
    let stages: Vec<Vec<f64>> = steps()
        .filter_map(|s| s.state.graph.as_ref())
        .flat_map(|g| g.stages.iter().map(StageFeatures::to_vec))
        .collect();
    for k in 0..StageFeatures::DIM {
        let (m, s) = mean_std(stages.iter().map(|v| v[k]));
        norm.stage_mean[k] = m;
        norm.stage_std[k] = s;
    }
    let rates: Vec<f64> = steps()
        .flat_map(|s| [Some(&s.action), s.expert_action.as_ref()])
        .filter_map(|a| match a {
            Some(TaskAction::SendRate { mbps }) => Some(*mbps),
            _ => None,
        })
        .collect();
    let (m, s) = mean_std(rates.iter().copied());
    norm.rate_mean = m;
    norm.rate_std = s;
    let max_abs = steps().map(|s| s.return_to_go.abs()).fold(0.0, f64::max);
    norm.return_scale = if max_abs > 0.0 { 1.0 / max_abs } else { 1.0 };
    Ok(norm)
}

fn infer_num_actions(ds: &ExperienceDataset) -> usize {
    let steps = ds.trajectories.iter().flat_map(|t| t.steps.iter());
    let mut n = 0;
    for s in steps {
        if let TaskAction::Bitrate { index } = s.action {
            n = n.max(index + 1);
        }
        if let Some(v) = s.state.vector("next_chunk_sizes") {
            n = n.max(v.len());
        }
    }
    n.max(2)
}

fn check_objective(objective: Objective, tag: TaskKind) -> Result<()> {
    match (objective, tag) {
        (Objective::Dt, TaskKind::Cc) => Err(Error::TaskMismatch { expected: TaskKind::Abr, found: tag }),
        (Objective::Cil, TaskKind::Abr | TaskKind::Cjs) => {
            Err(Error::TaskMismatch { expected: TaskKind::Cc, found: tag })
        }
        _ => Ok(()),
    }
}

/// Every `(sequence, target)` pair of a dataset under the model's objective.
pub fn dataset_samples(ds: &ExperienceDataset, objective: Objective, window: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(ds.num_steps());
    for t in &ds.trajectories {
        for i in 0..t.steps.len() {
            out.push(match objective {
                Objective::Dt => build_dt_sequence(t, i, window)?,
                Objective::Cil => build_cil_sequence(t, i, window)?,
            });
        }
    }
    Ok(out)
}

fn encode_all(model: &SequencePolicyModel, samples: &[Sample]) -> Result<Vec<(Encoded, Target)>> {
    samples.iter().map(|s| Ok((model.encode(&s.input)?, s.target))).collect()
}

#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + Self::EPS);
        }
    }
}

/// Fits a fresh model to the dataset with minibatch Adam. The run is a pure
/// function of the dataset and the config.
pub fn train(ds: &ExperienceDataset, cfg: &TrainingConfig) -> Result<(SequencePolicyModel, TrainingLog)> {
    cfg.validate()?;
    if ds.trajectories.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    ds.validate()?;
    check_objective(cfg.objective, ds.tag)?;
    let state_dim = ds.trajectories[0].steps[0].state.flat_dim();
    let model_cfg = ModelConfig {
        tag: ds.tag,
        objective: cfg.objective,
        window: cfg.window,
        embed_width: cfg.embed_width,
        hidden_width: cfg.hidden_width,
        state_dim,
        num_actions: match ds.tag {
            TaskKind::Abr => cfg.num_actions.unwrap_or_else(|| infer_num_actions(ds)),
            TaskKind::Cjs => crate::cjs::NUM_EXECUTOR_BINS,
            TaskKind::Cc => 1,
        },
    };
    let mut model = SequencePolicyModel::new(model_cfg, fit_normalizer(ds)?, cfg.seed)?;
    model.set_target_return(ds.stats.return_max)?;
    let data = encode_all(&model, &dataset_samples(ds, cfg.objective, cfg.window)?)?;

    let mut log = TrainingLog { samples: data.len(), epochs: Vec::new() };
    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut rng = stream_rng(cfg.seed, streams::TRAIN_SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<(Encoded, Target)> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grad) = model.batch_loss(&batch, true)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.step(model.params_mut(), &grad);
            total += loss * chunk.len() as f64;
        }
        let loss = total / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        log.epochs.push(EpochLog { epoch, loss });
    }
    Ok((model, log))
}

fn check_batch(model: &SequencePolicyModel, objective: Objective) -> Result<()> {
    let cfg = model.config();
    if cfg.objective != objective {
        return Err(match objective {
            Objective::Dt => Error::TaskMismatch { expected: TaskKind::Abr, found: cfg.tag },
            Objective::Cil => Error::TaskMismatch { expected: TaskKind::Cc, found: cfg.tag },
        });
    }
    Ok(())
}

/// Mean cross-entropy and its gradient (ABR and CJS models).
pub fn dt_loss(model: &SequencePolicyModel, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    check_batch(model, Objective::Dt)?;
    model.batch_loss(&encode_all(model, batch)?, true)
}

/// Mean squared error in standardized rate units and its gradient (CC).
pub fn cil_loss(model: &SequencePolicyModel, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    check_batch(model, Objective::Cil)?;
    model.batch_loss(&encode_all(model, batch)?, true)
}

/// Largest relative deviation between the analytic gradient and central
/// finite differences over every parameter. Coordinates where both
/// magnitudes are below 1e-8 are skipped.
pub fn grad_check(model: &SequencePolicyModel, batch: &[Sample], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("finite-difference step must be > 0"));
    }
    let data = encode_all(model, batch)?;
    let (_, analytic) = model.batch_loss(&data, true)?;
    let mut p = model.params().to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..p.len() {
        let orig = p[j];
        p[j] = orig + eps;
        let (lp, _) = model.batch_loss_with(&p, &data, false)?;
        p[j] = orig - eps;
        let (lm, _) = model.batch_loss_with(&p, &data, false)?;
        p[j] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[j];
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

fn decode_dt(model: &SequencePolicyModel, state: &TaskState, out: HeadOutput) -> Result<TaskAction> {
    match out {
        HeadOutput::Logits(l) => Ok(TaskAction::Bitrate { index: argmax(&l) }),
        HeadOutput::Schedule { stage_scores, bin_logits } => {
            let g = state.graph.as_ref().ok_or_else(|| invalid("CJS state has no DAG snapshot"))?;
            let stage = &g.stages[argmax(&stage_scores)];
            let total = state.scalar("total_executors").unwrap_or(0.0) as u32;
            let free = state.scalar("free_executors").map_or(total, |v| v as u32);
            let executors = executor_bin_value(argmax(&bin_logits), total).min(free).max(1);
            Ok(TaskAction::Schedule { job_id: stage.job_id, stage_id: stage.stage_id, executors })
        }
        HeadOutput::Regression(_) => {
            Err(Error::TaskMismatch { expected: TaskKind::Abr, found: model.tag() })
        }
    }
}

/// Greedy action for `state` given the episode so far and the return still
/// to be collected.
pub fn infer_dt(
    model: &SequencePolicyModel,
    history: &[DtContext],
    state: &TaskState,
    return_to_go: f64,
) -> Result<TaskAction> {
    check_batch(model, Objective::Dt)?;
    if state.tag != model.tag() {
        return Err(Error::TaskMismatch { expected: model.tag(), found: state.tag });
    }
    let input = dt_input(history, state, return_to_go, model.config().window)?;
    decode_dt(model, state, model.predict(&input)?)
}

/// Sending rate for `state`, denormalized and clamped to be non-negative.
pub fn infer_cil(
    model: &SequencePolicyModel,
    history: &[(TaskState, TaskAction)],
    state: &TaskState,
) -> Result<TaskAction> {
    check_batch(model, Objective::Cil)?;
    if state.tag != model.tag() {
        return Err(Error::TaskMismatch { expected: model.tag(), found: state.tag });
    }
    let input = cil_input(history, state, model.config().window)?;
    match model.predict(&input)? {
        HeadOutput::Regression(z) => Ok(TaskAction::SendRate { mbps: model.normalizer().rate_inverse(z).max(0.0) }),
        _ => Err(Error::TaskMismatch { expected: TaskKind::Cc, found: model.tag() }),
    }
}

/// Episode driver for return-conditioned inference: starts from the
/// model's target return and subtracts each observed reward.
#[derive(Debug, Clone)]
pub struct DtRollout {
    window: usize,
    return_to_go: f64,
    history: Vec<DtContext>,
    pending: Option<DtContext>,
}

impl DtRollout {
    pub fn new(model: &SequencePolicyModel) -> Self {
        Self::with_target(model, model.target_return())
    }

    pub fn with_target(model: &SequencePolicyModel, target_return: f64) -> Self {
        DtRollout { window: model.config().window, return_to_go: target_return, history: Vec::new(), pending: None }
    }

    pub fn return_to_go(&self) -> f64 {
        self.return_to_go
    }

    pub fn act(&mut self, model: &SequencePolicyModel, state: &TaskState) -> Result<TaskAction> {
        let action = infer_dt(model, &self.history, state, self.return_to_go)?;
        self.pending = Some(DtContext { return_to_go: self.return_to_go, state: state.clone(), action: action.clone() });
        Ok(action)
    }

    /// Records the reward of the last action. An action overridden by the
    /// caller can be recorded with [`DtRollout::replace_action`] first.
    pub fn observe(&mut self, reward: f64) -> Result<()> {
        let ctx = self.pending.take().ok_or_else(|| invalid("observe called before act"))?;
        self.history.push(ctx);
        if self.history.len() > self.window {
            self.history.remove(0);
        }
        self.return_to_go -= reward;
        Ok(())
    }

    pub fn replace_action(&mut self, action: TaskAction) {
        if let Some(p) = self.pending.as_mut() {
            p.action = action;
        }
    }
}

/// Episode driver for imitation inference.
#[derive(Debug, Clone)]
pub struct CilRollout {
    window: usize,
    history: Vec<(TaskState, TaskAction)>,
}

impl CilRollout {
    pub fn new(model: &SequencePolicyModel) -> Self {
        CilRollout { window: model.config().window, history: Vec::new() }
    }

    pub fn act(&mut self, model: &SequencePolicyModel, state: &TaskState) -> Result<TaskAction> {
        let a = infer_cil(model, &self.history, state)?;
        self.history.push((state.clone(), a.clone()));
        if self.history.len() > self.window {
            self.history.remove(0);
        }
        Ok(a)
    }
}

/// Fraction of dataset steps whose logged action the model reproduces when
/// conditioned on the logged returns.
pub fn action_accuracy(model: &SequencePolicyModel, ds: &ExperienceDataset) -> Result<f64> {
    check_batch(model, Objective::Dt)?;
    let samples = dataset_samples(ds, Objective::Dt, model.config().window)?;
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut hits = 0usize;
    for s in &samples {
        let ok = match (model.predict(&s.input)?, s.target) {
            (HeadOutput::Logits(l), Target::Discrete(t)) => argmax(&l) == t,
            (HeadOutput::Schedule { stage_scores, bin_logits }, Target::Schedule { stage, bin }) => {
                argmax(&stage_scores) == stage && argmax(&bin_logits) == bin
            }
            _ => return Err(invalid("dataset targets do not match the model head")),
        };
        hits += usize::from(ok);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// MAPE of teacher-forced CIL predictions against the expert rates.
pub fn cil_mape(model: &SequencePolicyModel, ds: &ExperienceDataset) -> Result<f64> {
    check_batch(model, Objective::Cil)?;
    let (mut pred, mut truth, mut req) = (Vec::new(), Vec::new(), Vec::new());
    for t in &ds.trajectories {
        for (i, step) in t.steps.iter().enumerate() {
            let s = build_cil_sequence(t, i, model.config().window)?;
            let Target::Rate(expert) = s.target else {
                return Err(invalid("expert action is not a rate"));
            };
            let HeadOutput::Regression(z) = model.predict(&s.input)? else {
                return Err(invalid("model head is not a regression head"));
            };
            pred.push(model.normalizer().rate_inverse(z).max(0.0));
            truth.push(expert);
            req.push(step.state.scalar("request_rate").ok_or_else(|| invalid("state lacks request_rate"))?);
        }
    }
    mape(&pred, &truth, &req)
}
