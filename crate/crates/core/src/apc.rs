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

//! Request scheduling between a lightweight rate policy and a batched model
//! server, plus the load-experiment harness.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::cc::{mape, FlowState, DEFAULT_BASE_RTT_MS};
use crate::error::{invalid, Error, Result};
use crate::experience::TaskAction;
use crate::rng::{stream_rng, streams};
use crate::trainer::{infer_cil, SequencePolicyModel};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_INFERENCE_MS: f64 = 37.1;
pub const DEFAULT_MAX_WAIT_MS: f64 = 10.0;
pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;
/// Service time of the synchronous lightweight path.
pub const LIGHTWEIGHT_LATENCY_MS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerThresholds {
    /// RTT ceiling, ms.
    pub rtt_ms: f64,
    /// Loss ceiling, fraction.
    pub loss: f64,
    /// Minimum last send rate as a fraction of the request rate.
    pub rate_ratio: f64,
}

impl Default for SchedulerThresholds {
    fn default() -> Self {
        SchedulerThresholds { rtt_ms: 50.0, loss: 0.05, rate_ratio: 0.95 }
    }
}

impl SchedulerThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtt_ms > 0.0) || !self.rtt_ms.is_finite() {
            return Err(invalid("rtt threshold must be > 0"));
        }
        if !(self.loss > 0.0 && self.loss < 1.0) {
            return Err(invalid("loss threshold must lie in (0, 1)"));
        }
        if !(self.rate_ratio > 0.0 && self.rate_ratio <= 1.0) {
            return Err(invalid("rate ratio threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Good,
    Poor,
}

/// Good iff all three criteria hold strictly; anything on a boundary is
/// Poor.
pub fn classify(state: &FlowState, th: &SchedulerThresholds) -> Condition {
    let good = state.rtt_ms < th.rtt_ms
        && state.loss_rate < th.loss
        && state.last_send_rate > th.rate_ratio * state.request_rate;
    if good {
        Condition::Good
    } else {
        Condition::Poor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Lightweight,
    Model,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::Lightweight => "lightweight",
            Route::Model => "model",
        })
    }
}

pub fn route(state: &FlowState, th: &SchedulerThresholds) -> Route {
    match classify(state, th) {
        Condition::Good => Route::Lightweight,
        Condition::Poor => Route::Model,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    pub flow_id: u64,
    pub arrival_ms: f64,
    pub state: FlowState,
}

/// Per-batch inference latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatencyModel {
    Constant(f64),
    /// `(batch size, ms)` rows sorted by batch size; a batch uses the first
    /// row whose size is at least its length, or the last row.
    Table(Vec<(usize, f64)>),
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            LatencyModel::Constant(ms) if !(*ms >= 0.0) || !ms.is_finite() => {
                Err(invalid("inference latency must be finite and >= 0"))
            }
            LatencyModel::Table(rows) => {
                if rows.is_empty() {
                    return Err(Error::Empty("latency table"));
                }
                if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(invalid("latency table batch sizes must be strictly increasing"));
                }
                if rows.iter().any(|r| !(r.1 >= 0.0) || !r.1.is_finite()) {
                    return Err(invalid("latency table entries must be finite and >= 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn latency(&self, batch_len: usize) -> f64 {
        match self {
            LatencyModel::Constant(ms) => *ms,
            LatencyModel::Table(rows) => {
                rows.iter().find(|r| r.0 >= batch_len).unwrap_or(&rows[rows.len() - 1]).1
            }
        }
    }

    /// Smallest latency any batch can see.
    pub fn min_latency(&self) -> f64 {
        match self {
            LatencyModel::Constant(ms) => *ms,
            LatencyModel::Table(rows) => rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchServerConfig {
    pub batch_size: usize,
    pub max_wait_ms: f64,
    pub latency: LatencyModel,
    pub queue_capacity: usize,
}

impl Default for BatchServerConfig {
    fn default() -> Self {
        BatchServerConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            max_wait_ms: DEFAULT_MAX_WAIT_MS,
            latency: LatencyModel::Constant(DEFAULT_INFERENCE_MS),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl BatchServerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(self.max_wait_ms >= 0.0) || !self.max_wait_ms.is_finite() {
            return Err(invalid("max wait must be finite and >= 0"));
        }
        if self.queue_capacity == 0 {
            return Err(invalid("queue capacity must be >= 1"));
        }
        self.latency.validate()
    }
}

/// Routes requests and owns the bounded model queue. A Poor request that
/// finds the queue full is served by the lightweight policy instead and
/// counted as a downgrade.
#[derive(Debug, Clone)]
pub struct Router {
    thresholds: SchedulerThresholds,
    scheduler: bool,
    capacity: usize,
    queue: VecDeque<RequestEnvelope>,
    downgrades: u64,
}

impl Router {
    pub fn new(thresholds: SchedulerThresholds, capacity: usize, scheduler: bool) -> Self {
        Router { thresholds, scheduler, capacity, queue: VecDeque::new(), downgrades: 0 }
    }

    /// Enqueues model-bound requests; returns the route taken.
    pub fn submit(&mut self, req: RequestEnvelope) -> (Route, Option<RequestEnvelope>) {
        let wanted = if self.scheduler { route(&req.state, &self.thresholds) } else { Route::Model };
        if wanted == Route::Lightweight {
            return (Route::Lightweight, Some(req));
        }
        if self.queue.len() >= self.capacity {
            self.downgrades += 1;
            return (Route::Lightweight, Some(req));
        }
        self.queue.push_back(req);
        (Route::Model, None)
    }

    pub fn queue(&self) -> &VecDeque<RequestEnvelope> {
        &self.queue
    }

    pub fn queue_mut(&mut self) -> &mut VecDeque<RequestEnvelope> {
        &mut self.queue
    }

    pub fn downgrades(&self) -> u64 {
        self.downgrades
    }
}

/// Time at which the head of the queue becomes dispatchable.
pub fn batch_ready_at(queue: &VecDeque<RequestEnvelope>, cfg: &BatchServerConfig, now: f64) -> Option<f64> {
    let head = queue.front()?;
    if queue.len() >= cfg.batch_size {
        Some(now)
    } else {
        Some(head.arrival_ms + cfg.max_wait_ms)
    }
}

/// Takes one batch if `B` requests are waiting or the oldest has waited at
/// least the max wait.
pub fn take_batch(
    queue: &mut VecDeque<RequestEnvelope>,
    cfg: &BatchServerConfig,
    now: f64,
) -> Option<Vec<RequestEnvelope>> {
    let ready = batch_ready_at(queue, cfg, now)?;
    if ready > now {
        return None;
    }
    let n = queue.len().min(cfg.batch_size);
    Some(queue.drain(..n).collect())
}

/// Every batch dispatchable at `now`, in FIFO order.
pub fn form_batches(
    queue: &mut VecDeque<RequestEnvelope>,
    cfg: &BatchServerConfig,
    now: f64,
) -> Vec<Vec<RequestEnvelope>> {
    let mut out = Vec::new();
    while let Some(b) = take_batch(queue, cfg, now) {
        out.push(b);
    }
    out
}

/// Chooses sending rates for a batch of flows.
pub trait RatePolicy {
    fn name(&self) -> &str;
    fn decide_batch(&mut self, states: &[FlowState]) -> Result<Vec<f64>>;
}

/// Sends at the request rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct RateFollowerPolicy;

impl RatePolicy for RateFollowerPolicy {
    fn name(&self) -> &str {
        "rate-follower"
    }

    fn decide_batch(&mut self, states: &[FlowState]) -> Result<Vec<f64>> {
        Ok(states.iter().map(crate::policies::rate_follower).collect())
    }
}

/// Trained CIL model answering each request from its snapshot alone.
#[derive(Debug, Clone, Copy)]
pub struct ModelRatePolicy<'a> {
    model: &'a SequencePolicyModel,
}

impl<'a> ModelRatePolicy<'a> {
    pub fn new(model: &'a SequencePolicyModel) -> Self {
        ModelRatePolicy { model }
    }
}

impl RatePolicy for ModelRatePolicy<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn decide_batch(&mut self, states: &[FlowState]) -> Result<Vec<f64>> {
        states
            .iter()
            .map(|s| match infer_cil(self.model, &[], &s.to_task_state())? {
                TaskAction::SendRate { mbps } => Ok(mbps),
                _ => Err(invalid("model returned a non-rate action")),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArrivalPattern {
    /// Every request arrives at t = 0.
    Burst,
    /// Evenly spaced over `[0, duration_ms)`.
    Ramp { duration_ms: f64 },
    /// Poisson arrivals.
    Poisson { per_second: f64 },
}

impl fmt::Display for ArrivalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArrivalPattern::Burst => f.write_str("burst"),
            ArrivalPattern::Ramp { duration_ms } => write!(f, "ramp:{duration_ms}"),
            ArrivalPattern::Poisson { per_second } => write!(f, "poisson:{per_second}"),
        }
    }
}

impl FromStr for ArrivalPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = || arg.parse::<f64>().map_err(|_| invalid(format!("arrival pattern '{s}' needs a number")));
        match kind {
            "burst" => Ok(ArrivalPattern::Burst),
            "ramp" => Ok(ArrivalPattern::Ramp { duration_ms: num()? }),
            "poisson" => Ok(ArrivalPattern::Poisson { per_second: num()? }),
            _ => Err(invalid(format!("unknown arrival pattern '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub peak_requests: usize,
    /// Fraction of requests drawn from poor network conditions.
    pub poor_fraction: f64,
    pub pattern: ArrivalPattern,
    pub seed: u64,
}

impl LoadProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.poor_fraction) {
            return Err(invalid("poor fraction must lie in [0, 1]"));
        }
        match self.pattern {
            ArrivalPattern::Ramp { duration_ms } if !(duration_ms >= 0.0) => {
                Err(invalid("ramp duration must be >= 0"))
            }
            ArrivalPattern::Poisson { per_second } if !(per_second > 0.0) => {
                Err(invalid("arrival rate must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// One synthetic request with its hidden bottleneck capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMember {
    pub state: FlowState,
    pub capacity: f64,
    pub condition: Condition,
}

/// Flow snapshots of which a fraction `p` (Bernoulli per request) is Poor
/// under `th`. Good flows have spare capacity; Poor flows violate at least
/// one criterion and sit on links narrower than their request rate.
pub fn gen_population(n: usize, p: f64, th: &SchedulerThresholds, seed: u64) -> Result<Vec<PopulationMember>> {
    th.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("poor fraction must lie in [0, 1]"));
    }
    let mut rng = stream_rng(seed, streams::APC_POPULATION);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let poor = rng.gen_bool(p);
        let req: f64 = rng.gen_range(1.0..10.0);
        let base = DEFAULT_BASE_RTT_MS.min(th.rtt_ms * 0.5);
        let member = if poor {
            let capacity = req * rng.gen_range(0.3..0.9);
            let mut rtt = rng.gen_range(base..th.rtt_ms * 4.0);
            let mut loss = rng.gen_range(0.0..th.loss * 4.0).min(0.99);
            let mut last = capacity * rng.gen_range(0.8..1.1);
            // force at least one criterion to fail
            match rng.gen_range(0..3u8) {
                0 => rtt = rtt.max(th.rtt_ms),
                1 => loss = loss.max(th.loss),
                _ => last = last.min(th.rate_ratio * req),
            }
            let state = FlowState {
                rtt_ms: rtt,
                loss_rate: loss,
                jitter_ms: rng.gen_range(0.0..20.0),
                last_send_rate: last,
                request_rate: req,
                queue_backlog: rng.gen_range(0.0..2.0),
                delivery_rate: last.min(capacity),
            };
            PopulationMember { state, capacity, condition: Condition::Poor }
        } else {
            let capacity = req * rng.gen_range(1.1..3.0);
            let lo = th.rate_ratio * req;
            let last = lo + (req - lo) * rng.gen_range(0.01..1.0);
            let state = FlowState {
                rtt_ms: rng.gen_range(base * 0.5..th.rtt_ms * 0.99),
                loss_rate: rng.gen_range(0.0..th.loss * 0.99),
                jitter_ms: rng.gen_range(0.0..5.0),
                last_send_rate: last,
                request_rate: req,
                queue_backlog: 0.0,
                delivery_rate: last,
            };
            PopulationMember { state, capacity, condition: Condition::Good }
        };
        debug_assert_eq!(classify(&member.state, th), member.condition);
        out.push(member);
    }
    Ok(out)
}

/// Arrival times in ms for `n` requests.
pub fn arrival_times(n: usize, pattern: ArrivalPattern, seed: u64) -> Result<Vec<f64>> {
    Ok(match pattern {
        ArrivalPattern::Burst => alloc::vec![0.0; n],
        ArrivalPattern::Ramp { duration_ms } => {
            (0..n).map(|i| duration_ms * i as f64 / n.max(1) as f64).collect()
        }
        ArrivalPattern::Poisson { per_second } => {
            let exp = Exp::new(per_second / 1000.0).map_err(|_| invalid("arrival rate must be > 0"))?;
            let mut rng = stream_rng(seed ^ 0x5eed, streams::APC_POPULATION);
            let mut t = 0.0;
            (0..n)
                .map(|_| {
                    let now = t;
                    t += exp.sample(&mut rng);
                    now
                })
                .collect()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerMode {
    /// Classifier active: only Poor requests reach the model.
    With,
    /// Every request goes to the model.
    Without,
}

impl fmt::Display for SchedulerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerMode::With => "with",
            SchedulerMode::Without => "without",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub flow_id: u64,
    pub arrival_ms: f64,
    pub delay_ms: f64,
    pub route: Route,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub requests: usize,
    pub model_requests: usize,
    pub lightweight_requests: usize,
    pub downgrades: u64,
    pub batches: usize,
    pub mean_delay_ms: f64,
    pub p50_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub p99_delay_ms: f64,
    pub max_delay_ms: f64,
    pub model_mean_delay_ms: Option<f64>,
    pub model_share: f64,
    pub mape: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = libm::ceil(q * sorted.len() as f64).max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Event-driven run of one load profile through the router and a single
/// batching server. Arrivals at a given instant are routed before the
/// server looks for a batch; the server takes a batch only when idle.
pub fn simulate_load(
    profile: &LoadProfile,
    th: &SchedulerThresholds,
    cfg: &BatchServerConfig,
    mode: SchedulerMode,
    lightweight: &mut dyn RatePolicy,
    model: &mut dyn RatePolicy,
) -> Result<(Vec<DelaySample>, LoadReport)> {
    profile.validate()?;
    th.validate()?;
    cfg.validate()?;
    let n = profile.peak_requests;
    if n == 0 {
        return Err(Error::Empty("load profile"));
    }
    let population = gen_population(n, profile.poor_fraction, th, profile.seed)?;
    let arrivals = arrival_times(n, profile.pattern, profile.seed)?;
    let mut router = Router::new(*th, cfg.queue_capacity, mode == SchedulerMode::With);
    let mut samples: Vec<Option<DelaySample>> = alloc::vec![None; n];
    let mut next = 0usize;
    let mut server_free = 0.0f64;
    let mut batches = 0usize;
    let mut now = 0.0f64;
    loop {
        while next < n && arrivals[next] <= now {
            let req = RequestEnvelope { flow_id: next as u64, arrival_ms: arrivals[next], state: population[next].state };
            if let (Route::Lightweight, Some(req)) = router.submit(req) {
                let rate = lightweight.decide_batch(core::slice::from_ref(&req.state))?[0];
                samples[next] = Some(DelaySample {
                    flow_id: req.flow_id,
                    arrival_ms: req.arrival_ms,
                    delay_ms: LIGHTWEIGHT_LATENCY_MS,
                    route: Route::Lightweight,
                    rate,
                });
            }
            next += 1;
        }
        if server_free <= now {
            if let Some(batch) = take_batch(router.queue_mut(), cfg, now) {
                let done = now + cfg.latency.latency(batch.len());
                let states: Vec<FlowState> = batch.iter().map(|r| r.state).collect();
                let rates = model.decide_batch(&states)?;
                if rates.len() != batch.len() {
                    return Err(invalid("model policy returned the wrong number of decisions"));
                }
                for (r, rate) in batch.iter().zip(rates) {
                    samples[r.flow_id as usize] = Some(DelaySample {
                        flow_id: r.flow_id,
                        arrival_ms: r.arrival_ms,
                        delay_ms: done - r.arrival_ms,
                        route: Route::Model,
                        rate,
                    });
                }
                server_free = done;
                batches += 1;
                continue;
            }
        }
        let mut t_next = f64::INFINITY;
        if next < n {
            t_next = arrivals[next];
        }
        if let Some(ready) = batch_ready_at(router.queue(), cfg, now) {
            t_next = t_next.min(ready.max(server_free));
        }
        if !t_next.is_finite() {
            break;
        }
        now = t_next.max(now);
    }
    let samples: Vec<DelaySample> =
        samples.into_iter().map(|s| s.ok_or_else(|| invalid("request left without a decision"))).collect::<Result<_>>()?;
    let report = summarize(&samples, &population, router.downgrades(), batches)?;
    Ok((samples, report))
}

fn summarize(
    samples: &[DelaySample],
    population: &[PopulationMember],
    downgrades: u64,
    batches: usize,
) -> Result<LoadReport> {
    let n = samples.len();
    let mut delays: Vec<f64> = samples.iter().map(|s| s.delay_ms).collect();
    delays.sort_by(f64::total_cmp);
    let model: Vec<f64> = samples.iter().filter(|s| s.route == Route::Model).map(|s| s.delay_ms).collect();
    let pred: Vec<f64> = samples.iter().map(|s| s.rate).collect();
    let truth: Vec<f64> = population.iter().map(|m| m.capacity).collect();
    let req: Vec<f64> = population.iter().map(|m| m.state.request_rate).collect();
    Ok(LoadReport {
        requests: n,
        model_requests: model.len(),
        lightweight_requests: n - model.len(),
        downgrades,
        batches,
        mean_delay_ms: delays.iter().sum::<f64>() / n as f64,
        p50_delay_ms: percentile(&delays, 0.5),
        p95_delay_ms: percentile(&delays, 0.95),
        p99_delay_ms: percentile(&delays, 0.99),
        max_delay_ms: delays[n - 1],
        model_mean_delay_ms: (!model.is_empty()).then(|| model.iter().sum::<f64>() / model.len() as f64),
        model_share: model.len() as f64 / n as f64,
        mape: mape(&pred, &truth, &req)?,
    })
}
