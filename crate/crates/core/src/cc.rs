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

//! Time-stepped congestion control simulator: one flow through a bottleneck
//! whose capacity follows a hidden trace, with a tail-drop queue.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experience::{TaskKind, TaskState};
use crate::rng::{stream_rng, streams};
use crate::trace::{BandwidthTrace, TracePoint};

/// Simulation step, seconds.
pub const STEP_SECONDS: f64 = 0.1;
/// Queueing delay above which a step counts as stalled, ms.
pub const STALL_THRESHOLD_MS: f64 = 200.0;
pub const DEFAULT_QUEUE_MBIT: f64 = 2.0;
pub const DEFAULT_BASE_RTT_MS: f64 = 20.0;
pub const EPISODE_SECONDS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub rtt_ms: f64,
    pub loss_rate: f64,
    pub jitter_ms: f64,
    /// Mbps sent during the last step.
    pub last_send_rate: f64,
    /// Application demand, Mbps.
    pub request_rate: f64,
    /// Mbit queued at the bottleneck.
    pub queue_backlog: f64,
    /// Mbps delivered through the bottleneck during the last step.
    pub delivery_rate: f64,
}

impl FlowState {
    pub const FEATURES: [&'static str; 7] = [
        "rtt_ms",
        "loss_rate",
        "jitter_ms",
        "last_send_rate",
        "request_rate",
        "queue_backlog",
        "delivery_rate",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.rtt_ms,
            self.loss_rate,
            self.jitter_ms,
            self.last_send_rate,
            self.request_rate,
            self.queue_backlog,
            self.delivery_rate,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        FlowState {
            rtt_ms: v[0],
            loss_rate: v[1],
            jitter_ms: v[2],
            last_send_rate: v[3],
            request_rate: v[4],
            queue_backlog: v[5],
            delivery_rate: v[6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_array();
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("flow state values must be finite and non-negative"));
        }
        if self.loss_rate > 1.0 {
            return Err(invalid("loss rate must be <= 1"));
        }
        Ok(())
    }

    pub fn to_task_state(&self) -> TaskState {
        let mut st = TaskState::new(TaskKind::Cc);
        for (name, value) in Self::FEATURES.iter().zip(self.to_array()) {
            st = st.with_scalar(name, value);
        }
        st
    }

    pub fn from_task_state(s: &TaskState) -> Result<Self> {
        let mut v = [0.0; 7];
        for (slot, name) in v.iter_mut().zip(Self::FEATURES) {
            *slot = s.scalar(name).ok_or_else(|| invalid(format!("missing CC feature '{name}'")))?;
        }
        Ok(Self::from_array(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub capacity: BandwidthTrace,
    pub base_rtt_ms: f64,
    pub queue_capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    /// Stall seconds.
    pub stall: f64,
    /// Playback seconds.
    pub playback: f64,
}

impl SessionRecord {
    pub fn new(stall: f64, playback: f64) -> Result<Self> {
        if !(stall >= 0.0) || !(playback >= stall) {
            return Err(invalid(format!("session needs 0 <= stall <= playback ({stall}, {playback})")));
        }
        Ok(SessionRecord { stall, playback })
    }
}

/// Volume accounting of one step, all in Mbit except where noted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFeedback {
    /// Mbps in effect during the step.
    pub capacity: f64,
    pub arrived: f64,
    pub departed: f64,
    pub dropped: f64,
    pub backlog_before: f64,
    pub backlog_after: f64,
    pub queue_delay_ms: f64,
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceVisibility {
    /// Training: the simulator may reveal the bottleneck as the expert action.
    Simulation,
    /// Evaluation: the bottleneck stays hidden.
    Evaluation,
}

#[derive(Debug, Clone)]
pub struct CcEnv {
    link: LinkModel,
    request: BandwidthTrace,
    wrap: bool,
    visibility: TraceVisibility,
    start: f64,
    steps: u64,
    clock: f64,
    state: FlowState,
    session: SessionRecord,
}

impl CcEnv {
    pub fn new(link: LinkModel, request: BandwidthTrace) -> Result<Self> {
        if !(link.base_rtt_ms >= 0.0) || !(link.queue_capacity > 0.0) {
            return Err(invalid("link needs base rtt >= 0 and queue capacity > 0"));
        }
        let start = link.capacity.start();
        let req0 = request.value_at(start, true)?;
        Ok(CcEnv {
            state: FlowState {
                rtt_ms: link.base_rtt_ms,
                loss_rate: 0.0,
                jitter_ms: 0.0,
                last_send_rate: 0.0,
                request_rate: req0,
                queue_backlog: 0.0,
                delivery_rate: 0.0,
            },
            link,
            request,
            wrap: false,
            visibility: TraceVisibility::Simulation,
            start,
            steps: 0,
            clock: start,
            session: SessionRecord { stall: 0.0, playback: 0.0 },
        })
    }

    pub fn with_wrap(mut self, wrap: bool) -> Self {
        self.wrap = wrap;
        self
    }

    pub fn with_visibility(mut self, v: TraceVisibility) -> Self {
        self.visibility = v;
        self
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn session(&self) -> SessionRecord {
        self.session
    }

    /// Steps left before the capacity trace ends (ignoring wrap).
    pub fn remaining_steps(&self) -> usize {
        let left = (self.link.capacity.end() - self.clock) / STEP_SECONDS;
        libm::floor(left + 1e-9).max(0.0) as usize
    }

    /// Current bottleneck capacity, the near-optimal sending rate.
    pub fn expert_action(&self) -> Result<f64> {
        if self.visibility == TraceVisibility::Evaluation {
            return Err(Error::HiddenTrace);
        }
        self.link.capacity.value_at(self.clock, self.wrap)
    }

    /// Sends at `send_rate` Mbps for one 100 ms step.
    pub fn step_flow(&mut self, send_rate: f64) -> Result<(FlowState, StepFeedback)> {
        if !(send_rate >= 0.0) || !send_rate.is_finite() {
            return Err(invalid(format!("send rate {send_rate} must be finite and >= 0")));
        }
        let capacity = self.link.capacity.value_at(self.clock, self.wrap)?;
        let backlog_before = self.state.queue_backlog;
        let arrived = send_rate * STEP_SECONDS;
        let service = capacity * STEP_SECONDS;
        let unbounded = (backlog_before + (send_rate - capacity) * STEP_SECONDS).max(0.0);
        let departed = (backlog_before + arrived).min(service);
        let (backlog_after, dropped) = if unbounded > self.link.queue_capacity {
            (self.link.queue_capacity, unbounded - self.link.queue_capacity)
        } else {
            (unbounded, 0.0)
        };
        let queue_delay_ms = backlog_after / capacity * 1000.0;
        let rtt = self.link.base_rtt_ms + queue_delay_ms;
        let stalled = queue_delay_ms > STALL_THRESHOLD_MS;

        self.steps += 1;
        self.clock = self.start + self.steps as f64 * STEP_SECONDS;
        self.session.playback += STEP_SECONDS;
        if stalled {
            self.session.stall += STEP_SECONDS;
        }
        let request_rate = self.request.value_at(self.clock, true)?;
        self.state = FlowState {
            jitter_ms: (rtt - self.state.rtt_ms).abs(),
            rtt_ms: rtt,
            loss_rate: if arrived > 0.0 { (dropped / arrived).min(1.0) } else { 0.0 },
            last_send_rate: send_rate,
            request_rate,
            queue_backlog: backlog_after,
            delivery_rate: departed / STEP_SECONDS,
        };
        let fb = StepFeedback {
            capacity,
            arrived,
            departed,
            dropped,
            backlog_before,
            backlog_after,
            queue_delay_ms,
            stalled,
        };
        Ok((self.state, fb))
    }
}

/// Mean relative error between predicted and true bandwidth, both clamped
/// by the request rate.
pub fn mape(pred: &[f64], truth: &[f64], req: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("mape input"));
    }
    if pred.len() != truth.len() || pred.len() != req.len() {
        return Err(invalid("mape inputs must have equal lengths"));
    }
    let mut sum = 0.0;
    for i in 0..pred.len() {
        if !(truth[i] > 0.0) || !(req[i] > 0.0) {
            return Err(invalid(format!("mape sample {i}: truth and request rate must be > 0")));
        }
        let t = truth[i].min(req[i]);
        sum += ((pred[i].min(req[i]) - t) / t).abs();
    }
    Ok(sum / pred.len() as f64)
}

/// Total stall time over total playback time across sessions.
pub fn stall_rate(sessions: &[SessionRecord]) -> Result<f64> {
    if sessions.is_empty() {
        return Err(Error::Empty("session list"));
    }
    let stall: f64 = sessions.iter().map(|s| s.stall).sum();
    let playback: f64 = sessions.iter().map(|s| s.playback).sum();
    if !(playback > 0.0) {
        return Err(invalid("total playback duration must be > 0"));
    }
    Ok(stall / playback)
}

/// Relative reduction of `candidate` against `baseline`.
pub fn reduction(baseline: f64, candidate: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() {
        return Err(invalid("baseline rate must be non-zero"));
    }
    Ok((baseline - candidate) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CcEnvId {
    /// Dynamic capacity, demand above capacity about half the time.
    Train,
    /// Same family as `Train`, disjoint seeds.
    DefaultTest,
    /// Constant capacity with demand comfortably below it.
    Stable,
}

impl CcEnvId {
    pub const ALL: [CcEnvId; 3] = [CcEnvId::Train, CcEnvId::DefaultTest, CcEnvId::Stable];
}

impl fmt::Display for CcEnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CcEnvId::Train => "train",
            CcEnvId::DefaultTest => "default-test",
            CcEnvId::Stable => "stable",
        })
    }
}

impl FromStr for CcEnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(CcEnvId::Train),
            "default-test" | "test" => Ok(CcEnvId::DefaultTest),
            "stable" => Ok(CcEnvId::Stable),
            other => Err(invalid(format!("unknown CC environment '{other}'"))),
        }
    }
}

/// Piecewise-constant series: a new level every 2-8 s, levels log-uniform
/// in `[lo, hi]` Mbps, sampled every `STEP_SECONDS`.
fn regime_trace(rng: &mut impl Rng, lo: f64, hi: f64, duration: f64) -> Vec<TracePoint> {
    let steps = libm::round(duration / STEP_SECONDS) as usize;
    let mut out = Vec::with_capacity(steps);
    let mut level = 0.0;
    let mut hold = 0usize;
    for i in 0..steps {
        if hold == 0 {
            level = libm::exp(rng.gen_range(libm::log(lo)..libm::log(hi)));
            hold = rng.gen_range(20..=80);
        }
        hold -= 1;
        out.push(TracePoint { t: i as f64 * STEP_SECONDS, mbps: level });
    }
    out
}

/// Demand series following the capacity: every 3-10 s the request rate is
/// redrawn as `capacity(t) * U(lo, hi)`.
fn demand_trace(rng: &mut impl Rng, capacity: &BandwidthTrace, lo: f64, hi: f64) -> Vec<TracePoint> {
    let mut out = Vec::with_capacity(capacity.samples().len());
    let mut factor = 1.0;
    let mut hold = 0usize;
    for s in capacity.samples() {
        if hold == 0 {
            factor = rng.gen_range(lo..hi);
            hold = rng.gen_range(30..=100);
        }
        hold -= 1;
        out.push(TracePoint { t: s.t, mbps: s.mbps * factor });
    }
    out
}

pub fn make_cc_env(env_id: CcEnvId, seed: u64) -> CcEnv {
    let salt = match env_id {
        CcEnvId::Train => 0,
        CcEnvId::DefaultTest => 0x1_0000,
        CcEnvId::Stable => 0x2_0000,
    };
    let mut rng = stream_rng(seed ^ salt, streams::CC_LINK);
    let (capacity, request) = match env_id {
        CcEnvId::Train | CcEnvId::DefaultTest => {
            let cap = BandwidthTrace::new(regime_trace(&mut rng, 2.0, 20.0, EPISODE_SECONDS))
                .expect("valid capacity");
            let mut rq = stream_rng(seed ^ salt, streams::CC_REQUEST);
            let req = BandwidthTrace::new(demand_trace(&mut rq, &cap, 0.6, 1.6)).expect("valid demand");
            (cap, req)
        }
        CcEnvId::Stable => {
            let c: f64 = rng.gen_range(5.0..15.0);
            let cap = BandwidthTrace::constant(c, EPISODE_SECONDS).expect("valid capacity");
            let mut rq = stream_rng(seed ^ salt, streams::CC_REQUEST);
            let req = BandwidthTrace::new(demand_trace(&mut rq, &cap, 0.5, 0.9)).expect("valid demand");
            (cap, req)
        }
    };
    let link = LinkModel { capacity, base_rtt_ms: DEFAULT_BASE_RTT_MS, queue_capacity: DEFAULT_QUEUE_MBIT };
    CcEnv::new(link, request).expect("valid link")
}
