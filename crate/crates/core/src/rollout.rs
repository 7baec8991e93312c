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

//! The shared policy interface and episode drivers that turn a policy and an
//! environment into a trajectory plus task metrics.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::abr::{AbrEnv, AbrObservation, ChunkRecord};
use crate::cc::{mape, CcEnv, FlowState, SessionRecord};
use crate::cjs::{CjsEnv, ClusterState, SchedulingDecision};
use crate::error::{invalid, Error, Result};
use crate::experience::{EnvDescriptor, TaskAction, TaskKind, TaskState, Trajectory};
use crate::policies::{
    bba, fair, fifo, mpc, rate_follower, AdaptiveCcProxy, PolicyDescriptor, BBA_CUSHION, BBA_RESERVOIR,
    MPC_HORIZON,
};
use crate::rng::{stream_rng, streams, SimRng};
use crate::trainer::{CilRollout, DtRollout, Objective, SequencePolicyModel};

/// Task-specific view handed to a policy next to the generic state.
#[derive(Debug, Clone, Copy)]
pub enum View<'a> {
    Abr(&'a AbrObservation),
    Cjs(&'a ClusterState),
    Cc(&'a FlowState),
}

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a TaskState,
    pub view: View<'a>,
}

pub trait Policy {
    fn name(&self) -> String;
    fn tag(&self) -> TaskKind;
    fn act(&mut self, obs: &Observation<'_>) -> Result<TaskAction>;
    /// Reward of the last action.
    fn observe(&mut self, _reward: f64) -> Result<()> {
        Ok(())
    }
}

/// Environment facts a baseline needs beyond the observation.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyContext {
    Abr { ladder: Vec<f64>, chunk_duration: f64, buffer_cap: f64 },
    Cjs,
    Cc { base_rtt_ms: f64 },
}

impl PolicyContext {
    pub fn for_abr(env: &AbrEnv) -> Self {
        PolicyContext::Abr {
            ladder: env.manifest().ladder.clone(),
            chunk_duration: env.manifest().chunk_duration,
            buffer_cap: env.buffer_cap(),
        }
    }

    pub fn for_cc(env: &CcEnv) -> Self {
        PolicyContext::Cc { base_rtt_ms: env.link().base_rtt_ms }
    }

    fn tag(&self) -> TaskKind {
        match self {
            PolicyContext::Abr { .. } => TaskKind::Abr,
            PolicyContext::Cjs => TaskKind::Cjs,
            PolicyContext::Cc { .. } => TaskKind::Cc,
        }
    }
}

enum Rule {
    Bba { reservoir: f64, cushion: f64 },
    Mpc { horizon: usize },
    Random(SimRng),
    Fifo,
    Fair,
    RateFollower,
    Adaptive(AdaptiveCcProxy),
    Probe { overshoot: f64 },
}

struct Baseline {
    desc: PolicyDescriptor,
    ctx: PolicyContext,
    rule: Rule,
}

/// Probe queueing threshold above the base RTT, ms.
const PROBE_QUEUE_MS: f64 = 20.0;
const PROBE_DRAIN: f64 = 0.9;

/// Instantiates the named baseline. `seed` drives the random policy only.
pub fn baseline(desc: &PolicyDescriptor, ctx: &PolicyContext, seed: u64) -> Result<Box<dyn Policy>> {
    if desc.tag != ctx.tag() {
        return Err(Error::TaskMismatch { expected: ctx.tag(), found: desc.tag });
    }
    let p = |k: &str, d: f64| desc.param(k).unwrap_or(d);
    let rule = match desc.name.as_str() {
        "bba" => Rule::Bba { reservoir: p("reservoir", BBA_RESERVOIR), cushion: p("cushion", BBA_CUSHION) },
        "mpc" => Rule::Mpc { horizon: p("horizon", MPC_HORIZON as f64) as usize },
        "random" => Rule::Random(stream_rng(seed, streams::POLICY_BEHAVIOR)),
        "fifo" => Rule::Fifo,
        "fair" => Rule::Fair,
        "rate-follower" => Rule::RateFollower,
        "adaptive-proxy" => {
            let PolicyContext::Cc { base_rtt_ms } = ctx else { unreachable!("tag checked above") };
            Rule::Adaptive(AdaptiveCcProxy::new(*base_rtt_ms, p("initial_rate", 1.0)))
        }
        "probe" => {
            let overshoot = p("overshoot", 1.25);
            if !(overshoot > 1.0) {
                return Err(invalid("probe overshoot must be > 1"));
            }
            Rule::Probe { overshoot }
        }
        other => return Err(invalid(format!("unknown policy '{other}'"))),
    };
    Ok(Box::new(Baseline { desc: desc.clone(), ctx: ctx.clone(), rule }))
}

impl Policy for Baseline {
    fn name(&self) -> String {
        self.desc.to_string()
    }

    fn tag(&self) -> TaskKind {
        self.desc.tag
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<TaskAction> {
        match (&mut self.rule, obs.view, &self.ctx) {
            (Rule::Bba { reservoir, cushion }, View::Abr(o), PolicyContext::Abr { ladder, .. }) => {
                Ok(TaskAction::Bitrate { index: bba(o.buffer, ladder, *reservoir, *cushion)? })
            }
            (Rule::Mpc { horizon }, View::Abr(o), PolicyContext::Abr { ladder, chunk_duration, buffer_cap }) => {
                Ok(TaskAction::Bitrate { index: mpc(o, ladder, *chunk_duration, *buffer_cap, *horizon)? })
            }
            (Rule::Random(rng), View::Abr(_), PolicyContext::Abr { ladder, .. }) => {
                Ok(TaskAction::Bitrate { index: rng.gen_range(0..ladder.len()) })
            }
            (Rule::Fifo, View::Cjs(s), _) => Ok(schedule(fifo(s)?)),
            (Rule::Fair, View::Cjs(s), _) => Ok(schedule(fair(s)?)),
            (Rule::RateFollower, View::Cc(f), _) => Ok(TaskAction::SendRate { mbps: rate_follower(f) }),
            (Rule::Adaptive(a), View::Cc(f), _) => Ok(TaskAction::SendRate { mbps: a.decide(f) }),
            (Rule::Probe { overshoot }, View::Cc(f), PolicyContext::Cc { base_rtt_ms }) => {
                Ok(TaskAction::SendRate { mbps: probe(f, *base_rtt_ms, *overshoot) })
            }
            _ => Err(Error::TaskMismatch { expected: self.desc.tag, found: obs.state.tag }),
        }
    }
}

/// Capacity-probing sender: drains a standing queue at 90% of the delivered
/// rate, otherwise sends `overshoot` times the larger of demand and delivery.
/// While the queue is non-empty the delivered rate equals the link capacity.
pub fn probe(f: &FlowState, base_rtt_ms: f64, overshoot: f64) -> f64 {
    if f.rtt_ms > base_rtt_ms + PROBE_QUEUE_MS {
        PROBE_DRAIN * f.delivery_rate
    } else {
        overshoot * f.request_rate.max(f.delivery_rate).max(AdaptiveCcProxy::MIN_RATE)
    }
}

fn schedule(d: SchedulingDecision) -> TaskAction {
    TaskAction::Schedule { job_id: d.job_id, stage_id: d.stage_id, executors: d.executors }
}

enum Driver {
    Dt(DtRollout),
    Cil(CilRollout),
}

/// A trained sequence model behind the policy interface.
pub struct ModelPolicy<'m> {
    model: &'m SequencePolicyModel,
    driver: Driver,
}

impl<'m> ModelPolicy<'m> {
    pub fn new(model: &'m SequencePolicyModel) -> Self {
        let driver = match model.config().objective {
            Objective::Dt => Driver::Dt(DtRollout::new(model)),
            Objective::Cil => Driver::Cil(CilRollout::new(model)),
        };
        ModelPolicy { model, driver }
    }
}

impl Policy for ModelPolicy<'_> {
    fn name(&self) -> String {
        format!("model-{}", self.model.config().objective)
    }

    fn tag(&self) -> TaskKind {
        self.model.tag()
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<TaskAction> {
        match &mut self.driver {
            Driver::Dt(d) => d.act(self.model, obs.state),
            Driver::Cil(c) => c.act(self.model, obs.state),
        }
    }

    fn observe(&mut self, reward: f64) -> Result<()> {
        match &mut self.driver {
            Driver::Dt(d) => d.observe(reward),
            Driver::Cil(_) => Ok(()),
        }
    }
}

fn check_tag(policy: &dyn Policy, tag: TaskKind) -> Result<()> {
    if policy.tag() != tag {
        return Err(Error::TaskMismatch { expected: tag, found: policy.tag() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbrEpisode {
    pub trajectory: Trajectory,
    pub chunks: Vec<ChunkRecord>,
}

impl AbrEpisode {
    /// Mean per-chunk QoE.
    pub fn mean_qoe(&self) -> f64 {
        self.chunks.iter().map(|c| c.reward).sum::<f64>() / self.chunks.len() as f64
    }
}

pub fn run_abr_episode(
    env: &mut AbrEnv,
    policy: &mut dyn Policy,
    id: u64,
    descriptor: EnvDescriptor,
) -> Result<AbrEpisode> {
    check_tag(policy, TaskKind::Abr)?;
    let mut parts = Vec::new();
    let mut chunks = Vec::new();
    while !env.is_done() {
        let obs = env.observation();
        let state = obs.to_task_state();
        let action = policy.act(&Observation { state: &state, view: View::Abr(&obs) })?;
        let TaskAction::Bitrate { index } = action else {
            return Err(Error::InvalidAction(format!("{action:?} is not a bitrate")));
        };
        let step = env.step_download(index)?;
        policy.observe(step.reward)?;
        parts.push((state, action, step.reward, None));
        chunks.push(step.record);
    }
    let trajectory = Trajectory::from_parts(id, TaskKind::Abr, descriptor, &policy.name(), parts)?;
    Ok(AbrEpisode { trajectory, chunks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CjsEpisode {
    pub trajectory: Trajectory,
    pub average_jct: f64,
}

pub fn run_cjs_episode(
    env: &mut CjsEnv,
    policy: &mut dyn Policy,
    id: u64,
    descriptor: EnvDescriptor,
) -> Result<CjsEpisode> {
    check_tag(policy, TaskKind::Cjs)?;
    let mut parts = Vec::new();
    while !env.is_done() {
        let state = env.observation();
        let action = policy.act(&Observation { state: &state, view: View::Cjs(env.state()) })?;
        let TaskAction::Schedule { job_id, stage_id, executors } = action else {
            return Err(Error::InvalidAction(format!("{action:?} is not a scheduling decision")));
        };
        let step = env.step_schedule(&SchedulingDecision { job_id, stage_id, executors })?;
        policy.observe(step.reward)?;
        parts.push((state, action, step.reward, None));
    }
    let average_jct = env.average_jct().ok_or(Error::Empty("workload"))?;
    let trajectory = Trajectory::from_parts(id, TaskKind::Cjs, descriptor, &policy.name(), parts)?;
    Ok(CjsEpisode { trajectory, average_jct })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcEpisode {
    pub trajectory: Trajectory,
    pub session: SessionRecord,
    /// Sending rate chosen at each step, Mbps.
    pub sent: Vec<f64>,
    /// Bottleneck capacity during each step, Mbps.
    pub capacity: Vec<f64>,
    /// Request rate seen by the policy at each step, Mbps.
    pub request: Vec<f64>,
}

impl CcEpisode {
    pub fn mape(&self) -> Result<f64> {
        mape(&self.sent, &self.capacity, &self.request)
    }
}

/// Per-step CC reward: throughput useful to the application, minus the
/// request rate when the step stalls.
pub fn cc_reward(delivery_rate: f64, request_rate: f64, stalled: bool) -> f64 {
    delivery_rate.min(request_rate) - if stalled { request_rate } else { 0.0 }
}

/// Runs `steps` steps (or until the trace ends when `None`).
pub fn run_cc_episode(
    env: &mut CcEnv,
    policy: &mut dyn Policy,
    id: u64,
    descriptor: EnvDescriptor,
    steps: Option<usize>,
) -> Result<CcEpisode> {
    check_tag(policy, TaskKind::Cc)?;
    let n = steps.unwrap_or_else(|| env.remaining_steps());
    if n == 0 {
        return Err(Error::Empty("episode"));
    }
    let mut parts = Vec::with_capacity(n);
    let (mut sent, mut capacity, mut request) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let flow = *env.state();
        let state = flow.to_task_state();
        let expert = env.expert_action()?;
        let action = policy.act(&Observation { state: &state, view: View::Cc(&flow) })?;
        let TaskAction::SendRate { mbps } = action else {
            return Err(Error::InvalidAction(format!("{action:?} is not a sending rate")));
        };
        let (next, fb) = env.step_flow(mbps)?;
        let reward = cc_reward(next.delivery_rate, flow.request_rate, fb.stalled);
        policy.observe(reward)?;
        parts.push((state, action, reward, Some(TaskAction::SendRate { mbps: expert })));
        sent.push(mbps);
        capacity.push(expert);
        request.push(flow.request_rate);
    }
    let trajectory = Trajectory::from_parts(id, TaskKind::Cc, descriptor, &policy.name(), parts)?;
    Ok(CcEpisode { trajectory, session: env.session(), sent, capacity, request })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abr::{make_abr_env, AbrEnvId};
    use crate::cc::{make_cc_env, CcEnvId};
    use crate::cjs::{gen_workload, CjsEnv};
    use crate::experience::validate_trajectory;
    use approx::assert_abs_diff_eq;

    fn desc(env: &str) -> EnvDescriptor {
        EnvDescriptor { env_id: env.to_string(), seed: 1 }
    }

    fn policy(spec: &str, ctx: &PolicyContext) -> Box<dyn Policy> {
        baseline(&spec.parse().unwrap(), ctx, 7).unwrap()
    }

    #[test]
    fn abr_episode_covers_every_chunk() {
        for spec in ["bba", "mpc:horizon=3", "random"] {
            let mut env = make_abr_env(AbrEnvId::DefaultTest, 3);
            let mut p = policy(spec, &PolicyContext::for_abr(&env));
            let ep = run_abr_episode(&mut env, p.as_mut(), 0, desc("default-test")).unwrap();
            assert_eq!(ep.chunks.len(), env.manifest().num_chunks());
            assert!(validate_trajectory(&ep.trajectory).is_empty());
            let total: f64 = ep.chunks.iter().map(|c| c.reward).sum();
            assert_abs_diff_eq!(ep.trajectory.total_return(), total, epsilon = 1e-9);
        }
    }

    #[test]
    fn cjs_episode_completes_every_job() {
        for spec in ["fifo", "fair"] {
            let jobs = gen_workload(8, 0.5, 4).unwrap();
            let mut env = CjsEnv::new(jobs, 6).unwrap();
            let mut p = policy(spec, &PolicyContext::Cjs);
            let ep = run_cjs_episode(&mut env, p.as_mut(), 0, desc("custom")).unwrap();
            assert_eq!(env.completions().len(), 8);
            assert!(ep.average_jct > 0.0);
            let jct_sum: f64 = env.completions().iter().map(|c| c.jct()).sum();
            assert_abs_diff_eq!(ep.trajectory.total_return(), -jct_sum, epsilon = 1e-6);
        }
    }

    #[test]
    fn cc_episode_records_expert_everywhere() {
        let mut env = make_cc_env(CcEnvId::Train, 2);
        let mut p = policy("probe", &PolicyContext::for_cc(&env));
        let ep = run_cc_episode(&mut env, p.as_mut(), 0, desc("train"), None).unwrap();
        assert_eq!(ep.trajectory.len(), 600);
        assert!(ep.trajectory.steps.iter().all(|s| s.expert_action.is_some()));
    }

    #[test]
    fn rate_follower_has_no_stall_on_stable_links() {
        for seed in 0..5 {
            let mut env = make_cc_env(CcEnvId::Stable, seed);
            let mut p = policy("rate-follower", &PolicyContext::for_cc(&env));
            let ep = run_cc_episode(&mut env, p.as_mut(), 0, desc("stable"), None).unwrap();
            assert_eq!(ep.session.stall, 0.0);
        }
    }

    #[test]
    fn probe_reveals_capacity_while_queued() {
        let mut env = make_cc_env(CcEnvId::Train, 5);
        let mut p = policy("probe", &PolicyContext::for_cc(&env));
        let ep = run_cc_episode(&mut env, p.as_mut(), 0, desc("train"), None).unwrap();
        let steps = &ep.trajectory.steps;
        let mut queued = 0;
        for (i, s) in steps.iter().enumerate().skip(1) {
            if s.state.scalar("queue_backlog").unwrap() > 0.0 {
                queued += 1;
                assert_abs_diff_eq!(s.state.scalar("delivery_rate").unwrap(), ep.capacity[i - 1], epsilon = 1e-9);
            }
        }
        assert!(queued > 100, "{queued}");
    }

    #[test]
    fn wrong_task_policy_is_rejected() {
        let mut env = make_abr_env(AbrEnvId::Train, 0);
        let mut p = policy("fifo", &PolicyContext::Cjs);
        assert!(matches!(
            run_abr_episode(&mut env, p.as_mut(), 0, desc("train")),
            Err(Error::TaskMismatch { .. })
        ));
        assert!(baseline(&"bba".parse().unwrap(), &PolicyContext::Cjs, 0).is_err());
    }

    #[test]
    fn probe_rule() {
        let mut f = FlowState::from_array([20.0, 0.0, 0.0, 5.0, 8.0, 0.0, 6.0]);
        assert_abs_diff_eq!(probe(&f, 20.0, 1.25), 10.0);
        f.rtt_ms = 80.0;
        assert_abs_diff_eq!(probe(&f, 20.0, 1.25), 5.4);
    }
}
