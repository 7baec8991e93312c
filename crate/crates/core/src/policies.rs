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

//! Specialist baselines for the three tasks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abr::{qoe, AbrObservation};
use crate::cc::FlowState;
use crate::cjs::{ClusterState, SchedulingDecision};
use crate::error::{invalid, Error, Result};
use crate::experience::TaskKind;

pub const BBA_RESERVOIR: f64 = 5.0;
pub const BBA_CUSHION: f64 = 10.0;
pub const MPC_HORIZON: usize = 5;
pub const MPC_MAX_HORIZON: usize = 8;
/// Throughput samples averaged by the MPC estimator.
pub const MPC_ESTIMATOR_WINDOW: usize = 5;

/// Buffer-based rate selection: lowest rung inside the reservoir, highest
/// above reservoir + cushion, linear in between.
pub fn bba(buffer: f64, ladder: &[f64], reservoir: f64, cushion: f64) -> Result<usize> {
    if ladder.is_empty() {
        return Err(Error::Empty("bitrate ladder"));
    }
    if !(reservoir > 0.0) || !(cushion > 0.0) {
        return Err(invalid("BBA reservoir and cushion must be > 0"));
    }
    let top = ladder.len() - 1;
    if buffer <= reservoir {
        return Ok(0);
    }
    if buffer >= reservoir + cushion {
        return Ok(top);
    }
    let target = ladder[0] + (ladder[top] - ladder[0]) * (buffer - reservoir) / cushion;
    Ok(ladder.iter().rposition(|&b| b <= target).unwrap_or(0))
}

/// Harmonic mean of the most recent nonzero throughput samples.
pub fn harmonic_throughput(past_throughputs: &[f64], window: usize) -> Option<f64> {
    let recent: Vec<f64> =
        past_throughputs.iter().rev().copied().filter(|&t| t > 0.0).take(window).collect();
    if recent.is_empty() {
        return None;
    }
    Some(recent.len() as f64 / recent.iter().map(|t| 1.0 / t).sum::<f64>())
}

/// Model-predictive bitrate selection.
///
/// Enumerates every plan of `horizon` chunks (capped at the chunks left),
/// simulates the buffer forward at the harmonic-mean throughput estimate
/// with the next chunk's sizes standing in for later chunks, and returns the
/// first action of the plan with the highest total QoE. Plans are visited in
/// lexicographic order and only a strictly better total replaces the
/// incumbent, so ties go to the lowest first index.
pub fn mpc(
    obs: &AbrObservation,
    ladder: &[f64],
    chunk_duration: f64,
    buffer_cap: f64,
    horizon: usize,
) -> Result<usize> {
    if !(1..=MPC_MAX_HORIZON).contains(&horizon) {
        return Err(invalid(format!("MPC horizon {horizon} outside [1, {MPC_MAX_HORIZON}]")));
    }
    if ladder.is_empty() || obs.next_chunk_sizes.len() != ladder.len() {
        return Err(invalid("MPC needs one next-chunk size per ladder rung"));
    }
    let Some(estimate) = harmonic_throughput(&obs.past_throughputs, MPC_ESTIMATOR_WINDOW) else {
        return Ok(0);
    };
    let depth = horizon.min(obs.chunks_remaining.max(1));
    let n = ladder.len();
    let mut plan = alloc::vec![0usize; depth];
    let mut best = (f64::NEG_INFINITY, 0usize);
    loop {
        let mut buffer = obs.buffer;
        let mut prev = obs.last_bitrate;
        let mut total = 0.0;
        for &a in &plan {
            let download = obs.next_chunk_sizes[a] / estimate;
            let rebuf = (download - buffer).max(0.0);
            buffer = ((buffer - download).max(0.0) + chunk_duration).min(buffer_cap);
            total += qoe(ladder[a], rebuf, prev)?;
            prev = ladder[a];
        }
        if total > best.0 {
            best = (total, plan[0]);
        }
        // next plan in lexicographic order
        let mut k = depth;
        loop {
            if k == 0 {
                return Ok(best.1);
            }
            k -= 1;
            plan[k] += 1;
            if plan[k] < n {
                break;
            }
            plan[k] = 0;
        }
    }
}

/// First-come-first-served: the earliest job with a runnable stage gets as
/// many executors as that stage has unstarted tasks.
pub fn fifo(state: &ClusterState) -> Result<SchedulingDecision> {
    if state.free_executors == 0 {
        return Err(Error::InvalidAction("no free executors".into()));
    }
    let s = state
        .schedulable_stages()
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidAction("nothing runnable".into()))?;
    Ok(SchedulingDecision {
        job_id: s.job_id,
        stage_id: s.stage_id,
        executors: state.free_executors.min(s.demand),
    })
}

/// Equal shares: `floor(k / jobs)` executors per job in the system, with the
/// remainder going one each to the earliest arrivals.
pub fn fair_shares(state: &ClusterState) -> Vec<(usize, u32)> {
    let jobs: Vec<usize> = state.jobs_in_system().map(|(i, _)| i).collect();
    if jobs.is_empty() {
        return Vec::new();
    }
    let k = state.total_executors;
    let n = jobs.len() as u32;
    let (base, rem) = (k / n, k % n);
    jobs.into_iter()
        .enumerate()
        .map(|(rank, ji)| (ji, base + u32::from((rank as u32) < rem)))
        .collect()
}

/// Round-robin fair sharing. Jobs are visited in arrival order; the first
/// one holding fewer executors than its share and owning a runnable stage
/// is topped up towards its share. When every job is at its share (or has
/// nothing runnable), leftover executors go to the earliest job that can use
/// them so the cluster never idles with work waiting.
pub fn fair(state: &ClusterState) -> Result<SchedulingDecision> {
    if state.free_executors == 0 {
        return Err(Error::InvalidAction("no free executors".into()));
    }
    let stages = state.schedulable_stages();
    if stages.is_empty() {
        return Err(Error::InvalidAction("nothing runnable".into()));
    }
    for (ji, share) in fair_shares(state) {
        let held = state.jobs[ji].held;
        if held >= share {
            continue;
        }
        if let Some(s) = stages.iter().find(|s| s.job_index == ji) {
            let n = state.free_executors.min(share - held).min(s.demand);
            return Ok(SchedulingDecision { job_id: s.job_id, stage_id: s.stage_id, executors: n });
        }
    }
    let s = stages[0];
    Ok(SchedulingDecision {
        job_id: s.job_id,
        stage_id: s.stage_id,
        executors: state.free_executors.min(s.demand),
    })
}

/// Sends exactly at the application's request rate.
pub fn rate_follower(state: &FlowState) -> f64 {
    state.request_rate
}

/// Delay- and loss-reactive AIMD controller used as the production-CC
/// stand-in. It is a proxy, not a reproduction of any proprietary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveCcProxy {
    base_rtt_ms: f64,
    rate: f64,
}

impl AdaptiveCcProxy {
    pub const MIN_RATE: f64 = 0.1;

    pub fn new(base_rtt_ms: f64, initial_rate: f64) -> Self {
        AdaptiveCcProxy { base_rtt_ms, rate: initial_rate.max(Self::MIN_RATE) }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn decide(&mut self, state: &FlowState) -> f64 {
        let next = if state.loss_rate > 0.0 {
            self.rate * 0.7
        } else if state.rtt_ms > 1.5 * self.base_rtt_ms {
            self.rate * 0.85
        } else {
            self.rate + 0.2
        };
        self.rate = next.clamp(Self::MIN_RATE, state.request_rate.max(Self::MIN_RATE));
        self.rate
    }
}

/// A policy name plus `key=value` parameters, e.g. `mpc:horizon=5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub name: String,
    pub tag: TaskKind,
    pub params: Vec<(String, f64)>,
}

impl PolicyDescriptor {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn allowed(name: &str) -> Option<(TaskKind, &'static [&'static str])> {
        Some(match name {
            "bba" => (TaskKind::Abr, &["reservoir", "cushion"]),
            "mpc" => (TaskKind::Abr, &["horizon"]),
            "random" => (TaskKind::Abr, &[]),
            "fifo" => (TaskKind::Cjs, &[]),
            "fair" => (TaskKind::Cjs, &[]),
            "rate-follower" => (TaskKind::Cc, &[]),
            "adaptive-proxy" => (TaskKind::Cc, &["initial_rate"]),
            "probe" => (TaskKind::Cc, &["overshoot"]),
            _ => return None,
        })
    }

    /// Parses `name[:k=v[,k=v]...]` and checks the parameters are valid for
    /// the named policy.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n.trim(), r.trim()),
            None => (spec.trim(), ""),
        };
        let (tag, keys) =
            Self::allowed(name).ok_or_else(|| invalid(format!("unknown policy '{name}'")))?;
        let mut params = Vec::new();
        for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| invalid(format!("bad parameter '{kv}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if !keys.contains(&k) {
                return Err(invalid(format!("policy '{name}' has no parameter '{k}'")));
            }
            let v: f64 = v.parse().map_err(|_| invalid(format!("parameter '{k}' is not a number")))?;
            params.push((k.to_string(), v));
        }
        let d = PolicyDescriptor { name: name.to_string(), tag, params };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        let positive = |k: &str| self.param(k).map_or(true, |v| v > 0.0);
        match self.name.as_str() {
            "bba" if !positive("reservoir") || !positive("cushion") => {
                Err(invalid("BBA reservoir and cushion must be > 0"))
            }
            "mpc" => {
                let h = self.param("horizon").unwrap_or(MPC_HORIZON as f64);
                if libm::trunc(h) != h || !(1.0..=MPC_MAX_HORIZON as f64).contains(&h) {
                    Err(invalid(format!("MPC horizon must be an integer in [1, {MPC_MAX_HORIZON}]")))
                } else {
                    Ok(())
                }
            }
            "adaptive-proxy" if !positive("initial_rate") => Err(invalid("initial_rate must be > 0")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PolicyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

impl FromStr for PolicyDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}
