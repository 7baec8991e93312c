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

//! Discrete-event cluster job scheduling over DAG-shaped jobs.
//!
//! Executors assigned to a stage run its tasks one at a time; when a task
//! finishes the executor picks up the next unstarted task of the same stage,
//! or returns to the free pool once the stage has none left. The simulation
//! only stops for a decision when a free executor and a runnable stage with
//! unstarted tasks both exist.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experience::{DagSnapshot, StageFeatures, TaskKind, TaskState};
use crate::rng::{mix_seed, stream_rng, streams};

/// Executor-count bins for the discrete allocation head; the last bin is
/// "all executors".
pub const EXECUTOR_BINS: [u32; 5] = [1, 2, 5, 10, 20];
pub const NUM_EXECUTOR_BINS: usize = EXECUTOR_BINS.len() + 1;
pub const DEFAULT_ARRIVAL_RATE: f64 = 0.3;

pub fn executor_bin_value(bin: usize, total_executors: u32) -> u32 {
    match EXECUTOR_BINS.get(bin) {
        Some(&v) => v.min(total_executors),
        None => total_executors,
    }
}

/// Largest bin whose value does not exceed `count`.
pub fn executor_bin(count: u32, total_executors: u32) -> usize {
    (0..NUM_EXECUTOR_BINS)
        .rev()
        .find(|&b| executor_bin_value(b, total_executors) <= count)
        .unwrap_or(0)
}

/// Job completion time.
pub fn jct(t_s: f64, t_e: f64) -> Result<f64> {
    if !(t_e >= t_s) {
        return Err(invalid(format!("completion time {t_e} precedes arrival {t_s}")));
    }
    Ok(t_e - t_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: u32,
    pub num_tasks: u32,
    /// Seconds per task.
    pub task_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDag {
    pub id: u32,
    pub arrival: f64,
    pub stages: Vec<StageSpec>,
    /// `(parent, child)` stage ids.
    pub edges: Vec<(u32, u32)>,
}

impl JobDag {
    /// Checks stage ids, task counts, durations and acyclicity; returns a
    /// topological order of stage indices.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let n = self.stages.len();
        if n == 0 {
            return Err(invalid(format!("job {} has no stages", self.id)));
        }
        if !self.arrival.is_finite() || self.arrival < 0.0 {
            return Err(invalid(format!("job {} has invalid arrival {}", self.id, self.arrival)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.id as usize != i {
                return Err(invalid(format!("job {}: stage ids must be 0..n in order", self.id)));
            }
            if s.num_tasks == 0 {
                return Err(invalid(format!("job {} stage {}: num_tasks must be >= 1", self.id, s.id)));
            }
            if !(s.task_duration > 0.0) || !s.task_duration.is_finite() {
                return Err(invalid(format!("job {} stage {}: duration must be > 0", self.id, s.id)));
            }
        }
        let mut indegree = alloc::vec![0usize; n];
        let mut children = alloc::vec![Vec::new(); n];
        for &(p, c) in &self.edges {
            let (p, c) = (p as usize, c as usize);
            if p >= n || c >= n || p == c {
                return Err(invalid(format!("job {}: bad edge {p}->{c}", self.id)));
            }
            indegree[c] += 1;
            children[p].push(c);
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(i) = ready.pop() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
        if order.len() != n {
            return Err(invalid(format!("job {} contains a cycle", self.id)));
        }
        Ok(order)
    }

    pub fn total_work(&self) -> f64 {
        self.stages.iter().map(|s| s.num_tasks as f64 * s.task_duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingDecision {
    pub job_id: u32,
    pub stage_id: u32,
    pub executors: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageProgress {
    pub unstarted: u32,
    pub running: u32,
    pub completed: u32,
    pub parents_left: u32,
}

#[derive(Debug, Clone)]
pub struct JobProgress {
    pub dag: JobDag,
    pub stages: Vec<StageProgress>,
    pub children: Vec<Vec<usize>>,
    pub parents: Vec<Vec<usize>>,
    /// Stage itself plus every transitive descendant.
    pub descendants: Vec<Vec<usize>>,
    pub depth: Vec<u32>,
    pub arrived: bool,
    pub completed_at: Option<f64>,
    /// Executors currently running tasks of this job.
    pub held: u32,
}

impl JobProgress {
    fn new(dag: JobDag) -> Result<Self> {
        let order = dag.validate()?;
        let n = dag.stages.len();
        let mut children = alloc::vec![Vec::new(); n];
        let mut parents = alloc::vec![Vec::new(); n];
        for &(p, c) in &dag.edges {
            children[p as usize].push(c as usize);
            parents[c as usize].push(p as usize);
        }
        for v in children.iter_mut().chain(parents.iter_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        // top-down: longest path from a root
        let mut depth = alloc::vec![0u32; n];
        for &i in &order {
            for &c in &children[i] {
                depth[c] = depth[c].max(depth[i] + 1);
            }
        }
        // bottom-up: descendant sets
        let mut reach = alloc::vec![alloc::vec![false; n]; n];
        for &i in order.iter().rev() {
            reach[i][i] = true;
            for &c in &children[i] {
                for k in 0..n {
                    if reach[c][k] {
                        reach[i][k] = true;
                    }
                }
            }
        }
        let descendants = reach
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &r)| r).map(|(k, _)| k).collect())
            .collect();
        let stages = dag
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| StageProgress {
                unstarted: s.num_tasks,
                running: 0,
                completed: 0,
                parents_left: parents[i].len() as u32,
            })
            .collect();
        Ok(JobProgress {
            dag,
            stages,
            children,
            parents,
            descendants,
            depth,
            arrived: false,
            completed_at: None,
            held: 0,
        })
    }

    pub fn in_system(&self) -> bool {
        self.arrived && self.completed_at.is_none()
    }

    pub fn stage_done(&self, stage: usize) -> bool {
        self.stages[stage].completed == self.dag.stages[stage].num_tasks
    }

    /// Runnable and holding unstarted tasks.
    pub fn schedulable(&self, stage: usize) -> bool {
        self.in_system() && self.stages[stage].parents_left == 0 && self.stages[stage].unstarted > 0
    }

    pub fn remaining_work(&self, stage: usize) -> f64 {
        let s = &self.dag.stages[stage];
        (s.num_tasks - self.stages[stage].completed) as f64 * s.task_duration
    }

    pub fn descendant_work(&self, stage: usize) -> f64 {
        self.descendants[stage].iter().map(|&d| self.remaining_work(d)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRef {
    pub job_index: usize,
    pub job_id: u32,
    pub stage_id: u32,
    /// Unstarted tasks.
    pub demand: u32,
}

/// Cluster snapshot. `jobs` is sorted by `(arrival, id)`.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub total_executors: u32,
    pub free_executors: u32,
    pub clock: f64,
    pub jobs: Vec<JobProgress>,
}

impl ClusterState {
    pub fn jobs_in_system(&self) -> impl Iterator<Item = (usize, &JobProgress)> {
        self.jobs.iter().enumerate().filter(|(_, j)| j.in_system())
    }

    pub fn job_index(&self, job_id: u32) -> Option<usize> {
        self.jobs.iter().position(|j| j.dag.id == job_id)
    }

    /// Every schedulable stage, ordered by job (arrival, id) then stage id.
    pub fn schedulable_stages(&self) -> Vec<StageRef> {
        let mut out = Vec::new();
        for (ji, job) in self.jobs_in_system() {
            for si in 0..job.stages.len() {
                if job.schedulable(si) {
                    out.push(StageRef {
                        job_index: ji,
                        job_id: job.dag.id,
                        stage_id: si as u32,
                        demand: job.stages[si].unstarted,
                    });
                }
            }
        }
        out
    }

    pub fn can_schedule(&self) -> bool {
        self.free_executors > 0
            && self.jobs_in_system().any(|(_, j)| (0..j.stages.len()).any(|s| j.schedulable(s)))
    }

    pub fn allocated(&self) -> u32 {
        self.jobs.iter().map(|j| j.held).sum()
    }

    pub fn running_tasks(&self) -> u32 {
        self.jobs.iter().flat_map(|j| j.stages.iter()).map(|s| s.running).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Arrival,
    TaskDone,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    job_id: u32,
    stage: u32,
    kind: EventKind,
    job_index: usize,
}

impl Event {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.job_id.cmp(&other.job_id))
            .then(self.stage.cmp(&other.stage))
            .then(self.kind.cmp(&other.kind))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // min-heap on (time, job id, stage id)
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub job_id: u32,
    pub stage_id: u32,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobCompletion {
    pub job_id: u32,
    pub arrival: f64,
    pub completion: f64,
}

impl JobCompletion {
    pub fn jct(&self) -> f64 {
        self.completion - self.arrival
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CjsStep {
    pub state: TaskState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct CjsEnv {
    state: ClusterState,
    events: BinaryHeap<Event>,
    log: Vec<TaskRecord>,
    completions: Vec<JobCompletion>,
}

impl CjsEnv {
    pub fn new(mut jobs: Vec<JobDag>, total_executors: u32) -> Result<Self> {
        if total_executors == 0 {
            return Err(invalid("cluster needs at least one executor"));
        }
        if jobs.is_empty() {
            return Err(Error::Empty("workload"));
        }
        jobs.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.id.cmp(&b.id)));
        let mut ids: Vec<u32> = jobs.iter().map(|j| j.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate job ids in workload"));
        }
        let jobs = jobs.into_iter().map(JobProgress::new).collect::<Result<Vec<_>>>()?;
        let events = jobs
            .iter()
            .enumerate()
            .map(|(i, j)| Event {
                time: j.dag.arrival,
                job_id: j.dag.id,
                stage: 0,
                kind: EventKind::Arrival,
                job_index: i,
            })
            .collect();
        let mut env = CjsEnv {
            state: ClusterState { total_executors, free_executors: total_executors, clock: 0.0, jobs },
            events,
            log: Vec::new(),
            completions: Vec::new(),
        };
        env.advance()?;
        Ok(env)
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn observation(&self) -> TaskState {
        featurize_dag(&self.state)
    }

    pub fn is_done(&self) -> bool {
        self.completions.len() == self.state.jobs.len()
    }

    pub fn task_log(&self) -> &[TaskRecord] {
        &self.log
    }

    pub fn completions(&self) -> &[JobCompletion] {
        &self.completions
    }

    pub fn average_jct(&self) -> Option<f64> {
        if self.completions.is_empty() {
            return None;
        }
        Some(self.completions.iter().map(JobCompletion::jct).sum::<f64>() / self.completions.len() as f64)
    }

    fn check(&self, d: &SchedulingDecision) -> Result<(usize, usize)> {
        let ji = self
            .state
            .job_index(d.job_id)
            .ok_or_else(|| Error::InvalidAction(format!("unknown job {}", d.job_id)))?;
        let job = &self.state.jobs[ji];
        let si = d.stage_id as usize;
        if si >= job.stages.len() {
            return Err(Error::InvalidAction(format!("job {} has no stage {}", d.job_id, d.stage_id)));
        }
        if !job.in_system() {
            return Err(Error::InvalidAction(format!("job {} is not in the system", d.job_id)));
        }
        if job.stages[si].parents_left > 0 {
            return Err(Error::InvalidAction(format!(
                "stage {}.{} is not runnable: {} parent stage(s) unfinished",
                d.job_id, d.stage_id, job.stages[si].parents_left
            )));
        }
        if job.stages[si].unstarted == 0 {
            return Err(Error::InvalidAction(format!(
                "stage {}.{} has no unstarted tasks",
                d.job_id, d.stage_id
            )));
        }
        if d.executors == 0 || d.executors > self.state.free_executors {
            return Err(Error::InvalidAction(format!(
                "cannot allocate {} executors with {} free",
                d.executors, self.state.free_executors
            )));
        }
        Ok((ji, si))
    }

    /// Applies a decision, then runs the event loop to the next scheduling
    /// point. The reward is `-JCT` summed over jobs that completed meanwhile.
    pub fn step_schedule(&mut self, decision: &SchedulingDecision) -> Result<CjsStep> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let (ji, si) = self.check(decision)?;
        let now = self.state.clock;
        let job = &mut self.state.jobs[ji];
        let n = decision.executors.min(job.stages[si].unstarted);
        let duration = job.dag.stages[si].task_duration;
        let job_id = job.dag.id;
        job.stages[si].unstarted -= n;
        job.stages[si].running += n;
        job.held += n;
        self.state.free_executors -= n;
        for _ in 0..n {
            self.start_task(now, ji, job_id, si as u32, duration);
        }
        let reward = self.advance()?;
        Ok(CjsStep { state: self.observation(), reward, done: self.is_done() })
    }

    fn start_task(&mut self, now: f64, job_index: usize, job_id: u32, stage: u32, duration: f64) {
        let end = now + duration;
        self.log.push(TaskRecord { job_id, stage_id: stage, start: now, end });
        self.events.push(Event { time: end, job_id, stage, kind: EventKind::TaskDone, job_index });
    }

    fn advance(&mut self) -> Result<f64> {
        let mut reward = 0.0;
        while !self.is_done() && !self.state.can_schedule() {
            let t = match self.events.peek() {
                Some(e) => e.time,
                None => return Err(invalid("scheduler stalled: no pending events")),
            };
            self.state.clock = t;
            while self.events.peek().is_some_and(|e| e.time == t) {
                let e = self.events.pop().expect("peeked");
                reward += self.process(e)?;
            }
        }
        Ok(reward)
    }

    fn process(&mut self, e: Event) -> Result<f64> {
        let ji = e.job_index;
        match e.kind {
            EventKind::Arrival => {
                self.state.jobs[ji].arrived = true;
                Ok(0.0)
            }
            EventKind::TaskDone => {
                let si = e.stage as usize;
                let job = &mut self.state.jobs[ji];
                let sp = &mut job.stages[si];
                sp.running -= 1;
                sp.completed += 1;
                if sp.unstarted > 0 {
                    sp.unstarted -= 1;
                    sp.running += 1;
                    let duration = job.dag.stages[si].task_duration;
                    let id = job.dag.id;
                    self.start_task(e.time, ji, id, e.stage, duration);
                } else {
                    job.held -= 1;
                    self.state.free_executors += 1;
                }
                let job = &mut self.state.jobs[ji];
                if job.stage_done(si) {
                    for c in job.children[si].clone() {
                        job.stages[c].parents_left -= 1;
                    }
                    if (0..job.stages.len()).all(|s| job.stage_done(s)) {
                        job.completed_at = Some(e.time);
                        let c = JobCompletion { job_id: job.dag.id, arrival: job.dag.arrival, completion: e.time };
                        self.completions.push(c);
                        return Ok(-jct(c.arrival, c.completion)?);
                    }
                }
                Ok(0.0)
            }
        }
    }
}

/// Deterministic DAG featurizer: per schedulable stage the remaining
/// task-seconds, unstarted task count, descendant work (bottom-up) and depth
/// (top-down), plus global cluster features.
pub fn featurize_dag(state: &ClusterState) -> TaskState {
    let mut stages = Vec::new();
    let mut total_remaining = 0.0;
    let mut jobs_in_system = 0usize;
    for (_, job) in state.jobs_in_system() {
        jobs_in_system += 1;
        total_remaining += (0..job.stages.len()).map(|s| job.remaining_work(s)).sum::<f64>();
        for si in 0..job.stages.len() {
            if job.schedulable(si) {
                stages.push(StageFeatures {
                    job_id: job.dag.id,
                    stage_id: si as u32,
                    remaining_work: job.remaining_work(si),
                    num_tasks: job.stages[si].unstarted as f64,
                    descendant_work: job.descendant_work(si),
                    depth: job.depth[si] as f64,
                });
            }
        }
    }
    let max_desc = stages.iter().map(|s| s.descendant_work).fold(0.0, f64::max);
    let mut st = TaskState::new(TaskKind::Cjs)
        .with_scalar("free_executors", state.free_executors as f64)
        .with_scalar("total_executors", state.total_executors as f64)
        .with_scalar("jobs_in_system", jobs_in_system as f64)
        .with_scalar("runnable_stages", stages.len() as f64)
        .with_scalar("total_remaining_work", total_remaining)
        .with_scalar("max_descendant_work", max_desc);
    st.graph = Some(DagSnapshot { stages });
    st
}

/// Random DAG workload with Poisson arrivals (`arrival_rate` jobs/s).
///
/// Each job has 2-12 stages; stage `s > 0` draws one or two parents among
/// earlier stages, which yields fan-in and fan-out. Tasks per stage are
/// uniform in 1..=20 and task durations are Pareto(0.5 s, 1.8) capped at 30 s.
pub fn gen_workload(num_jobs: usize, arrival_rate: f64, seed: u64) -> Result<Vec<JobDag>> {
    if num_jobs == 0 {
        return Err(invalid("num_jobs must be >= 1"));
    }
    if !(arrival_rate > 0.0) || !arrival_rate.is_finite() {
        return Err(invalid("arrival rate must be > 0"));
    }
    let mut rng = stream_rng(seed, streams::CJS_WORKLOAD);
    let inter = Exp::new(arrival_rate).map_err(|_| invalid("arrival rate"))?;
    let dur = Pareto::new(0.5, 1.8).expect("valid pareto");
    let mut t = 0.0;
    let mut jobs = Vec::with_capacity(num_jobs);
    for id in 0..num_jobs {
        if id > 0 {
            t += inter.sample(&mut rng);
        }
        let n_stages = rng.gen_range(2..=12u32);
        let stages = (0..n_stages)
            .map(|s| StageSpec {
                id: s,
                num_tasks: rng.gen_range(1..=20),
                task_duration: libm::round(f64::min(dur.sample(&mut rng), 30.0) * 1000.0) / 1000.0,
            })
            .collect();
        let mut edges = Vec::new();
        for s in 1..n_stages {
            let want = rng.gen_range(1..=s.min(2));
            let mut parents: Vec<u32> = Vec::new();
            while (parents.len() as u32) < want {
                let p = rng.gen_range(0..s);
                if !parents.contains(&p) {
                    parents.push(p);
                }
            }
            parents.sort_unstable();
            edges.extend(parents.into_iter().map(|p| (p, s)));
        }
        jobs.push(JobDag { id: id as u32, arrival: t, stages, edges });
    }
    Ok(jobs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CjsEnvId {
    Train,
    DefaultTest,
    Ood1,
    Ood2,
    Ood3,
}

impl CjsEnvId {
    pub const ALL: [CjsEnvId; 5] =
        [CjsEnvId::Train, CjsEnvId::DefaultTest, CjsEnvId::Ood1, CjsEnvId::Ood2, CjsEnvId::Ood3];

    /// `(number of jobs, executors)` per environment row.
    pub fn settings(self) -> (usize, u32) {
        match self {
            CjsEnvId::Train | CjsEnvId::DefaultTest => (200, 50),
            CjsEnvId::Ood1 => (200, 30),
            CjsEnvId::Ood2 => (450, 50),
            CjsEnvId::Ood3 => (450, 30),
        }
    }
}

impl fmt::Display for CjsEnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CjsEnvId::Train => "train",
            CjsEnvId::DefaultTest => "default-test",
            CjsEnvId::Ood1 => "ood1",
            CjsEnvId::Ood2 => "ood2",
            CjsEnvId::Ood3 => "ood3",
        })
    }
}

impl FromStr for CjsEnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(CjsEnvId::Train),
            "default-test" | "test" => Ok(CjsEnvId::DefaultTest),
            "ood1" => Ok(CjsEnvId::Ood1),
            "ood2" => Ok(CjsEnvId::Ood2),
            "ood3" => Ok(CjsEnvId::Ood3),
            other => Err(invalid(format!("unknown CJS environment '{other}'"))),
        }
    }
}

/// Workload for one environment row; training and test rows draw from
/// different seed streams.
pub fn make_cjs_workload(env_id: CjsEnvId, seed: u64) -> Vec<JobDag> {
    let (jobs, _) = env_id.settings();
    let salt = if env_id == CjsEnvId::Train { 0 } else { 1 };
    gen_workload(jobs, DEFAULT_ARRIVAL_RATE, mix_seed(seed, salt)).expect("valid workload parameters")
}

pub fn make_cjs_env(env_id: CjsEnvId, seed: u64) -> CjsEnv {
    let (_, k) = env_id.settings();
    CjsEnv::new(make_cjs_workload(env_id, seed), k).expect("generated workload is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn job(id: u32, arrival: f64, stages: &[(u32, f64)], edges: &[(u32, u32)]) -> JobDag {
        JobDag {
            id,
            arrival,
            stages: stages
                .iter()
                .enumerate()
                .map(|(i, &(n, d))| StageSpec { id: i as u32, num_tasks: n, task_duration: d })
                .collect(),
            edges: edges.to_vec(),
        }
    }

    #[test]
    fn single_stage_two_waves() {
        let mut env = CjsEnv::new(vec![job(0, 0.0, &[(10, 2.0)], &[])], 5).unwrap();
        let s = env
            .step_schedule(&SchedulingDecision { job_id: 0, stage_id: 0, executors: 5 })
            .unwrap();
        assert!(s.done);
        assert_abs_diff_eq!(s.reward, -4.0, epsilon = 1e-12);
        assert_eq!(env.completions()[0].jct(), 4.0);
        assert_eq!(env.task_log().len(), 10);
    }

    #[test]
    fn precedence_is_enforced() {
        let env_job = job(0, 0.0, &[(1, 1.0), (1, 1.0)], &[(0, 1)]);
        let mut env = CjsEnv::new(vec![env_job], 2).unwrap();
        let err = env.step_schedule(&SchedulingDecision { job_id: 0, stage_id: 1, executors: 1 });
        assert!(matches!(err, Err(Error::InvalidAction(_))));
        let err = env.step_schedule(&SchedulingDecision { job_id: 0, stage_id: 0, executors: 3 });
        assert!(matches!(err, Err(Error::InvalidAction(_))));
    }

    #[test]
    fn independent_stages_finish_at_their_durations() {
        let mut env = CjsEnv::new(vec![job(0, 0.0, &[(1, 3.0), (1, 5.0)], &[])], 2).unwrap();
        let s = env.step_schedule(&SchedulingDecision { job_id: 0, stage_id: 0, executors: 1 }).unwrap();
        // still one free executor and a runnable stage: no time passes
        assert!(!s.done);
        assert_eq!(env.state().clock, 0.0);
        let s = env.step_schedule(&SchedulingDecision { job_id: 0, stage_id: 1, executors: 1 }).unwrap();
        assert!(s.done);
        let ends: Vec<f64> = env.task_log().iter().map(|r| r.end).collect();
        assert_eq!(ends, vec![3.0, 5.0]);
        assert_abs_diff_eq!(s.reward, -5.0, epsilon = 1e-12);
    }

    #[test]
    fn jct_examples() {
        assert_eq!(jct(10.0, 25.0).unwrap(), 15.0);
        assert_eq!(jct(7.0, 7.0).unwrap(), 0.0);
        assert_eq!(jct(0.0, 4.0).unwrap(), 4.0);
        assert!(jct(5.0, 4.0).is_err());
    }

    #[test]
    fn chain_descendant_work() {
        let env = CjsEnv::new(vec![job(0, 0.0, &[(2, 1.5), (3, 1.0)], &[(0, 1)])], 4).unwrap();
        let st = featurize_dag(env.state());
        let stages = &st.graph.as_ref().unwrap().stages;
        assert_eq!(stages.len(), 1);
        assert_eq!(stages[0].remaining_work, 3.0);
        assert_eq!(stages[0].descendant_work, 6.0);
        assert_eq!(stages[0].depth, 0.0);
        let leaf = &env.state().jobs[0];
        assert_eq!(leaf.descendant_work(1), leaf.remaining_work(1));
        assert_eq!(leaf.depth[1], 1);
    }

    #[test]
    fn blocked_state_has_empty_stage_list() {
        let mut env = CjsEnv::new(vec![job(0, 0.0, &[(1, 2.0), (1, 1.0)], &[(0, 1)])], 3).unwrap();
        env.step_schedule(&SchedulingDecision { job_id: 0, stage_id: 0, executors: 1 }).unwrap();
        // one of the intermediate snapshots is blocked: build it by hand
        let mut snapshot = env.state().clone();
        snapshot.jobs[0].stages[1].parents_left = 1;
        snapshot.jobs[0].stages[0].unstarted = 0;
        let st = featurize_dag(&snapshot);
        assert!(st.graph.as_ref().unwrap().stages.is_empty());
        assert_eq!(st.scalar("runnable_stages"), Some(0.0));
    }

    #[test]
    fn rejects_cycles_and_duplicates() {
        assert!(CjsEnv::new(vec![job(0, 0.0, &[(1, 1.0), (1, 1.0)], &[(0, 1), (1, 0)])], 1).is_err());
        assert!(CjsEnv::new(vec![job(0, 0.0, &[(1, 1.0)], &[]), job(0, 1.0, &[(1, 1.0)], &[])], 1).is_err());
        assert!(CjsEnv::new(vec![job(0, 0.0, &[(0, 1.0)], &[])], 1).is_err());
    }

    #[test]
    fn workload_sizes_and_determinism() {
        let a = gen_workload(200, 0.3, 5).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(gen_workload(450, 0.3, 5).unwrap().len(), 450);
        assert_eq!(a, gen_workload(200, 0.3, 5).unwrap());
        assert!(a.iter().all(|j| j.validate().is_ok() && (2..=12).contains(&j.stages.len())));
        assert!(a.windows(2).all(|w| w[0].arrival <= w[1].arrival));
        assert!(gen_workload(0, 0.3, 5).is_err());
        assert_eq!(CjsEnvId::Ood3.settings(), (450, 30));
    }

    #[test]
    fn executor_bins() {
        assert_eq!(executor_bin(1, 50), 0);
        assert_eq!(executor_bin(3, 50), 1);
        assert_eq!(executor_bin(50, 50), 5);
        assert_eq!(executor_bin(30, 50), 4);
        assert_eq!(executor_bin_value(5, 30), 30);
        assert_eq!(executor_bin_value(4, 8), 8);
    }
}
