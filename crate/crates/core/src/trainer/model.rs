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

//! Context-window sequence policy with a hand-written backward pass.
//!
//! Every slot of the window is embedded by a per-kind linear map (state,
//! action, return). Padding slots contribute a zero embedding. The
//! embeddings are concatenated and fed through two `tanh` layers into a
//! task head.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{cil_slots, dt_slots, ActionToken, SequenceInput, Slot, Target};
use crate::cjs::NUM_EXECUTOR_BINS;
use crate::error::{invalid, Error, Result};
use crate::experience::{StageFeatures, TaskKind};
use crate::rng::{streams, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Dt,
    Cil,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Dt => "dt",
            Objective::Cil => "cil",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(Objective::Dt),
            "cil" => Ok(Objective::Cil),
            _ => Err(invalid(format!("unknown objective '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tag: TaskKind,
    pub objective: Objective,
    pub window: usize,
    pub embed_width: usize,
    pub hidden_width: usize,
    /// Flattened state dimension.
    pub state_dim: usize,
    /// Ladder length for ABR; ignored for CJS (executor bins) and CC.
    pub num_actions: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.objective, self.tag) {
            (Objective::Dt, TaskKind::Cc) => {
                return Err(Error::TaskMismatch { expected: TaskKind::Abr, found: TaskKind::Cc })
            }
            (Objective::Cil, TaskKind::Abr | TaskKind::Cjs) => {
                return Err(Error::TaskMismatch { expected: TaskKind::Cc, found: self.tag })
            }
            _ => {}
        }
        if self.window == 0 || self.embed_width == 0 || self.hidden_width == 0 || self.state_dim == 0 {
            return Err(invalid("window, widths and state_dim must be >= 1"));
        }
        if self.tag == TaskKind::Abr && self.num_actions < 2 {
            return Err(invalid("an ABR model needs at least two actions"));
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        match self.objective {
            Objective::Dt => dt_slots(self.window),
            Objective::Cil => cil_slots(self.window),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.tag {
            TaskKind::Abr => self.num_actions,
            TaskKind::Cjs => NUM_EXECUTOR_BINS + StageFeatures::DIM,
            TaskKind::Cc => 1,
        }
    }

    fn head_outputs(&self) -> usize {
        match self.tag {
            TaskKind::Abr => self.num_actions,
            TaskKind::Cjs => NUM_EXECUTOR_BINS,
            TaskKind::Cc => 1,
        }
    }
}

/// Input standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub stage_mean: [f64; StageFeatures::DIM],
    pub stage_std: [f64; StageFeatures::DIM],
    pub rate_mean: f64,
    pub rate_std: f64,
    /// Multiplies every return token.
    pub return_scale: f64,
}

impl Normalizer {
    pub fn identity(state_dim: usize) -> Self {
        Normalizer {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            stage_mean: [0.0; StageFeatures::DIM],
            stage_std: [1.0; StageFeatures::DIM],
            rate_mean: 0.0,
            rate_std: 1.0,
            return_scale: 1.0,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.state_mean.len() != state_dim || self.state_std.len() != state_dim {
            return Err(invalid("normalizer width differs from the model state dimension"));
        }
        let stds = self.state_std.iter().chain(&self.stage_std).chain([&self.rate_std]);
        if stds.clone().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("normalizer standard deviations must be finite and > 0"));
        }
        if !(self.return_scale > 0.0) || !self.return_scale.is_finite() {
            return Err(invalid("return scale must be finite and > 0"));
        }
        Ok(())
    }

    pub fn rate(&self, mbps: f64) -> f64 {
        (mbps - self.rate_mean) / self.rate_std
    }

    pub fn rate_inverse(&self, z: f64) -> f64 {
        z * self.rate_std + self.rate_mean
    }
}

/// A named view into the flat parameter vector, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct StageHead {
    wh: usize,
    wf: usize,
    b: usize,
    v: usize,
    width: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed: [Option<Dense>; 3],
    dense1: Dense,
    dense2: Dense,
    head: Dense,
    stage: Option<StageHead>,
}

const STATE: usize = 0;
const ACTION: usize = 1;
const RETURN: usize = 2;
const KIND_NAMES: [&str; 3] = ["state", "action", "return"];

#[derive(Default)]
struct LayoutBuilder {
    blocks: Vec<ParamBlock>,
    offset: usize,
}

impl LayoutBuilder {
    fn block(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let offset = self.offset;
        self.blocks.push(ParamBlock { name, rows, cols, offset });
        self.offset += rows * cols;
        offset
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> Dense {
        let w = self.block(format!("{name}.w"), rows, cols);
        let b = self.block(format!("{name}.b"), rows, 1);
        Dense { w, b, rows, cols }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<ParamBlock>) {
    let mut lb = LayoutBuilder::default();
    let e = cfg.embed_width;
    let h = cfg.hidden_width;
    let in_dims = [cfg.state_dim, cfg.action_dim(), 1];
    let mut embed = [None; 3];
    for kind in [STATE, ACTION, RETURN] {
        if kind == RETURN && cfg.objective == Objective::Cil {
            continue;
        }
        embed[kind] = Some(lb.dense(&format!("embed.{}", KIND_NAMES[kind]), e, in_dims[kind]));
    }
    let dense1 = lb.dense("dense1", h, cfg.slots() * e);
    let dense2 = lb.dense("dense2", h, h);
    let head = lb.dense("head", cfg.head_outputs(), h);
    let stage = (cfg.tag == TaskKind::Cjs).then(|| StageHead {
        wh: lb.block("head.stage.wh".to_string(), h, h),
        wf: lb.block("head.stage.wf".to_string(), h, StageFeatures::DIM),
        b: lb.block("head.stage.b".to_string(), h, 1),
        v: lb.block("head.stage.v".to_string(), h, 1),
        width: h,
    });
    (Layout { embed, dense1, dense2, head, stage }, lb.blocks)
}

/// Raw head output for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Logits(Vec<f64>),
    Regression(f64),
    Schedule { stage_scores: Vec<f64>, bin_logits: Vec<f64> },
}

/// A normalized input ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    slots: Vec<Option<(usize, Vec<f64>)>>,
    stages: Vec<[f64; StageFeatures::DIM]>,
}

struct Cache {
    h0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
    /// Per-stage `tanh` activations of the stage scorer.
    u: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePolicyModel {
    config: ModelConfig,
    norm: Normalizer,
    target_return: f64,
    layout: Layout,
    blocks: Vec<ParamBlock>,
    params: Vec<f64>,
}

fn affine(p: &[f64], d: Dense, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(d.rows) {
        let row = &p[d.w + r * d.cols..d.w + (r + 1) * d.cols];
        *o = p[d.b + r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates `dout ⊗ x` into the weight gradient, `dout` into the bias
/// gradient and, when asked, `Wᵀ dout` into `dx`.
fn affine_back(p: &[f64], d: Dense, x: &[f64], dout: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
    for r in 0..d.rows {
        let dr = dout[r];
        if dr == 0.0 {
            continue;
        }
        g[d.b + r] += dr;
        let gw = &mut g[d.w + r * d.cols..d.w + (r + 1) * d.cols];
        for (gi, xi) in gw.iter_mut().zip(x) {
            *gi += dr * xi;
        }
    }
    if let Some(dx) = dx {
        for r in 0..d.rows {
            let dr = dout[r];
            if dr == 0.0 {
                continue;
            }
            let row = &p[d.w + r * d.cols..d.w + (r + 1) * d.cols];
            for (di, wi) in dx.iter_mut().zip(row) {
                *di += dr * wi;
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| libm::exp(l - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(logits.iter().map(|l| libm::exp(l - m)).sum::<f64>());
    lse - logits[target]
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl SequencePolicyModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(config: ModelConfig, norm: Normalizer, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(config, norm)?;
        let mut rng = stream_rng(seed, streams::TRAIN_INIT);
        for b in &m.blocks {
            if b.name.ends_with(".b") {
                continue;
            }
            let a = libm::sqrt(6.0 / (b.rows + b.cols) as f64);
            for p in &mut m.params[b.range()] {
                *p = rng.gen_range(-a..a);
            }
        }
        Ok(m)
    }

    pub fn zeroed(config: ModelConfig, norm: Normalizer) -> Result<Self> {
        config.validate()?;
        norm.validate(config.state_dim)?;
        let (layout, blocks) = build_layout(&config);
        let n = blocks.last().map_or(0, |b| b.offset + b.len());
        Ok(SequencePolicyModel { config, norm, target_return: 0.0, layout, blocks, params: vec![0.0; n] })
    }

    /// Reassembles a model from stored parts; block names and shapes must
    /// match the layout implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        norm: Normalizer,
        target_return: f64,
        blocks: &[(String, usize, usize, Vec<f64>)],
    ) -> Result<Self> {
        let mut m = Self::zeroed(config, norm)?;
        if blocks.len() != m.blocks.len() {
            return Err(invalid(format!("expected {} parameter blocks, found {}", m.blocks.len(), blocks.len())));
        }
        for (mine, (name, rows, cols, values)) in m.blocks.iter().zip(blocks) {
            if &mine.name != name || mine.rows != *rows || mine.cols != *cols || values.len() != mine.len() {
                return Err(invalid(format!("parameter block '{name}' does not match '{}'", mine.name)));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("parameter block '{name}' has non-finite values")));
            }
            m.params[mine.range()].copy_from_slice(values);
        }
        m.set_target_return(target_return)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        norm.validate(self.config.state_dim)?;
        self.norm = norm;
        Ok(())
    }

    pub fn target_return(&self) -> f64 {
        self.target_return
    }

    pub fn set_target_return(&mut self, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(invalid("target return must be finite"));
        }
        self.target_return = r;
        Ok(())
    }

    pub fn tag(&self) -> TaskKind {
        self.config.tag
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &self.params[b.range()])
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Validates an input against the model shape and standardizes it.
    pub fn encode(&self, input: &SequenceInput) -> Result<Encoded> {
        let cfg = &self.config;
        if input.slots.len() != cfg.slots() {
            return Err(invalid(format!(
                "sequence has {} slots, the model expects {}",
                input.slots.len(),
                cfg.slots()
            )));
        }
        let mut slots = Vec::with_capacity(input.slots.len());
        for (j, s) in input.slots.iter().enumerate() {
            slots.push(match s {
                Slot::Pad => None,
                Slot::Return(r) => {
                    if cfg.objective == Objective::Cil {
                        return Err(invalid("return tokens are not part of an imitation sequence"));
                    }
                    Some((RETURN, vec![r * self.norm.return_scale]))
                }
                Slot::State(x) => {
                    if x.len() != cfg.state_dim {
                        return Err(invalid(format!(
                            "slot {j}: state has {} features, the model expects {}",
                            x.len(),
                            cfg.state_dim
                        )));
                    }
                    let z = x
                        .iter()
                        .zip(self.norm.state_mean.iter().zip(&self.norm.state_std))
                        .map(|(v, (m, s))| (v - m) / s)
                        .collect();
                    Some((STATE, z))
                }
                Slot::Action(a) => Some((ACTION, self.encode_action(a)?)),
            });
        }
        let stages = input.stages.iter().map(|f| self.encode_stage(f)).collect();
        Ok(Encoded { slots, stages })
    }

    fn encode_stage(&self, f: &[f64; StageFeatures::DIM]) -> [f64; StageFeatures::DIM] {
        let mut z = [0.0; StageFeatures::DIM];
        for i in 0..StageFeatures::DIM {
            z[i] = (f[i] - self.norm.stage_mean[i]) / self.norm.stage_std[i];
        }
        z
    }

    fn encode_action(&self, a: &ActionToken) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.config.action_dim()];
        match (a, self.config.tag) {
            (ActionToken::Discrete(i), TaskKind::Abr) => {
                *v.get_mut(*i).ok_or_else(|| invalid(format!("action index {i} outside the head")))? = 1.0;
            }
            (ActionToken::Rate(r), TaskKind::Cc) => v[0] = self.norm.rate(*r),
            (ActionToken::Schedule { bin, stage }, TaskKind::Cjs) => {
                *v.get_mut(*bin).filter(|_| *bin < NUM_EXECUTOR_BINS).ok_or_else(|| invalid("executor bin out of range"))? = 1.0;
                v[NUM_EXECUTOR_BINS..].copy_from_slice(&self.encode_stage(stage));
            }
            _ => return Err(invalid("action token does not match the model task")),
        }
        Ok(v)
    }

    fn forward(&self, p: &[f64], x: &Encoded) -> Result<Cache> {
        let e = self.config.embed_width;
        let l = &self.layout;
        let mut h0 = vec![0.0; x.slots.len() * e];
        for (j, s) in x.slots.iter().enumerate() {
            if let Some((kind, v)) = s {
                let d = l.embed[*kind].expect("encoded kinds have embedders");
                affine(p, d, v, &mut h0[j * e..(j + 1) * e]);
            }
        }
        let mut a1 = vec![0.0; l.dense1.rows];
        affine(p, l.dense1, &h0, &mut a1);
        a1.iter_mut().for_each(|v| *v = libm::tanh(*v));
        let mut a2 = vec![0.0; l.dense2.rows];
        affine(p, l.dense2, &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = libm::tanh(*v));
        let mut out = vec![0.0; l.head.rows];
        affine(p, l.head, &a2, &mut out);
        let mut u = Vec::new();
        let mut scores = Vec::new();
        if let Some(sh) = l.stage {
            if x.stages.is_empty() {
                return Err(invalid("no runnable stage to score"));
            }
            let g = sh.width;
            let q: Vec<f64> = (0..g)
                .map(|r| p[sh.wh + r * g..sh.wh + (r + 1) * g].iter().zip(&a2).map(|(a, b)| a * b).sum())
                .collect();
            for f in &x.stages {
                let uk: Vec<f64> = (0..g)
                    .map(|r| {
                        let wf = &p[sh.wf + r * StageFeatures::DIM..sh.wf + (r + 1) * StageFeatures::DIM];
                        let pre = q[r] + p[sh.b + r] + wf.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
                        libm::tanh(pre)
                    })
                    .collect();
                scores.push(uk.iter().zip(&p[sh.v..sh.v + g]).map(|(a, b)| a * b).sum());
                u.push(uk);
            }
        }
        Ok(Cache { h0, a1, a2, out, u, scores })
    }

    /// Per-sample loss; when `grad` is given, adds `scale * dloss/dparams`.
    fn sample_loss(
        &self,
        p: &[f64],
        x: &Encoded,
        target: Target,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        let c = self.forward(p, x)?;
        let l = &self.layout;
        let mut d_out = vec![0.0; c.out.len()];
        let mut d_scores = Vec::new();
        let loss = match (target, self.config.tag) {
            (Target::Discrete(t), TaskKind::Abr) => {
                if t >= c.out.len() {
                    return Err(invalid(format!("target action {t} outside the head")));
                }
                let pr = softmax(&c.out);
                for (i, d) in d_out.iter_mut().enumerate() {
                    *d = pr[i] - f64::from(u8::from(i == t));
                }
                cross_entropy(&c.out, t)
            }
            (Target::Schedule { stage, bin }, TaskKind::Cjs) => {
                if stage >= c.scores.len() || bin >= NUM_EXECUTOR_BINS {
                    return Err(invalid("schedule target outside the candidate set"));
                }
                let pb = softmax(&c.out);
                for (i, d) in d_out.iter_mut().enumerate() {
                    *d = pb[i] - f64::from(u8::from(i == bin));
                }
                let ps = softmax(&c.scores);
                d_scores = ps.iter().enumerate().map(|(i, v)| v - f64::from(u8::from(i == stage))).collect();
                cross_entropy(&c.out, bin) + cross_entropy(&c.scores, stage)
            }
            (Target::Rate(r), TaskKind::Cc) => {
                let diff = c.out[0] - self.norm.rate(r);
                d_out[0] = 2.0 * diff;
                diff * diff
            }
            _ => return Err(invalid("target does not match the model task")),
        };
        let Some((g, scale)) = grad else {
            return Ok(loss);
        };
        d_out.iter_mut().for_each(|d| *d *= scale);
        d_scores.iter_mut().for_each(|d| *d *= scale);

        let mut da2 = vec![0.0; c.a2.len()];
        affine_back(p, l.head, &c.a2, &d_out, g, Some(&mut da2));
        if let Some(sh) = l.stage {
            let w = sh.width;
            let mut dq = vec![0.0; w];
            for (k, uk) in c.u.iter().enumerate() {
                let ds = d_scores[k];
                for r in 0..w {
                    g[sh.v + r] += ds * uk[r];
                    let dpre = ds * p[sh.v + r] * (1.0 - uk[r] * uk[r]);
                    dq[r] += dpre;
                    g[sh.b + r] += dpre;
                    for (i, f) in x.stages[k].iter().enumerate() {
                        g[sh.wf + r * StageFeatures::DIM + i] += dpre * f;
                    }
                }
            }
            for r in 0..w {
                for i in 0..w {
                    g[sh.wh + r * w + i] += dq[r] * c.a2[i];
                    da2[i] += dq[r] * p[sh.wh + r * w + i];
                }
            }
        }
        let dz2: Vec<f64> = da2.iter().zip(&c.a2).map(|(d, a)| d * (1.0 - a * a)).collect();
        let mut da1 = vec![0.0; c.a1.len()];
        affine_back(p, l.dense2, &c.a1, &dz2, g, Some(&mut da1));
        let dz1: Vec<f64> = da1.iter().zip(&c.a1).map(|(d, a)| d * (1.0 - a * a)).collect();
        let mut dh0 = vec![0.0; c.h0.len()];
        affine_back(p, l.dense1, &c.h0, &dz1, g, Some(&mut dh0));
        let e = self.config.embed_width;
        for (j, s) in x.slots.iter().enumerate() {
            if let Some((kind, v)) = s {
                let d = l.embed[*kind].expect("encoded kinds have embedders");
                affine_back(p, d, v, &dh0[j * e..(j + 1) * e], g, None);
            }
        }
        Ok(loss)
    }

    /// Mean loss over `batch`, with its gradient when `with_grad` is set.
    pub(crate) fn batch_loss_with(
        &self,
        params: &[f64],
        batch: &[(Encoded, Target)],
        with_grad: bool,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut g = if with_grad { vec![0.0; params.len()] } else { Vec::new() };
        let mut total = 0.0;
        for (x, t) in batch {
            let gs = with_grad.then_some((g.as_mut_slice(), scale));
            total += self.sample_loss(params, x, *t, gs)?;
        }
        Ok((total * scale, g))
    }

    pub(crate) fn batch_loss(&self, batch: &[(Encoded, Target)], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.batch_loss_with(&self.params, batch, with_grad)
    }

    /// Raw head output for an already built sequence.
    pub fn predict(&self, input: &SequenceInput) -> Result<HeadOutput> {
        let x = self.encode(input)?;
        let c = self.forward(&self.params, &x)?;
        Ok(match self.config.tag {
            TaskKind::Abr => HeadOutput::Logits(c.out),
            TaskKind::Cc => HeadOutput::Regression(c.out[0]),
            TaskKind::Cjs => HeadOutput::Schedule { stage_scores: c.scores, bin_logits: c.out },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cfg(tag: TaskKind) -> ModelConfig {
        ModelConfig {
            tag,
            objective: if tag == TaskKind::Cc { Objective::Cil } else { Objective::Dt },
            window: 2,
            embed_width: 3,
            hidden_width: 5,
            state_dim: 4,
            num_actions: 3,
        }
    }

    #[test]
    fn layouts_are_contiguous() {
        for tag in [TaskKind::Abr, TaskKind::Cjs, TaskKind::Cc] {
            let m = SequencePolicyModel::new(cfg(tag), Normalizer::identity(4), 1).unwrap();
            let mut next = 0;
            for b in m.blocks() {
                assert_eq!(b.offset, next);
                next += b.len();
            }
            assert_eq!(next, m.num_params());
            assert_eq!(m.block("embed.return.w").is_some(), tag != TaskKind::Cc);
            assert_eq!(m.block("head.stage.v").is_some(), tag == TaskKind::Cjs);
        }
    }

    #[test]
    fn objective_must_match_task() {
        let mut c = cfg(TaskKind::Cc);
        c.objective = Objective::Dt;
        assert!(SequencePolicyModel::new(c, Normalizer::identity(4), 1).is_err());
        let mut c = cfg(TaskKind::Abr);
        c.objective = Objective::Cil;
        assert!(SequencePolicyModel::new(c, Normalizer::identity(4), 1).is_err());
    }

    #[test]
    fn from_parts_round_trip() {
        let m = SequencePolicyModel::new(cfg(TaskKind::Cjs), Normalizer::identity(4), 3).unwrap();
        let parts: Vec<_> = m
            .blocks()
            .iter()
            .map(|b| (b.name.clone(), b.rows, b.cols, m.params()[b.range()].to_vec()))
            .collect();
        let back = SequencePolicyModel::from_parts(m.config().clone(), m.normalizer().clone(), 0.0, &parts).unwrap();
        assert_eq!(back, m);
        let mut bad = parts.clone();
        bad[0].0 = "embed.other.w".to_string();
        assert!(SequencePolicyModel::from_parts(m.config().clone(), m.normalizer().clone(), 0.0, &bad).is_err());
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
