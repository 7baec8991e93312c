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

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use tb::commands::{cmd_collect, cmd_evaluate, cmd_train};
use tb::config::{ExperimentConfig, RawConfig};
use tb_core::abr::{make_abr_env, qoe, AbrEnvId, AbrObservation, DEFAULT_LADDER, REBUF_PENALTY, SMOOTHNESS_PENALTY};
use tb_core::apc::{
    classify, simulate_load, ArrivalPattern, BatchServerConfig, Condition, LatencyModel, LoadProfile,
    RateFollowerPolicy, SchedulerMode, SchedulerThresholds,
};
use tb_core::cc::{make_cc_env, mape, reduction, stall_rate, CcEnvId, FlowState, SessionRecord};
use tb_core::cjs::{jct, make_cjs_env, CjsEnv, CjsEnvId, JobDag, SchedulingDecision, StageSpec};
use tb_core::experience::{DagSnapshot, StageFeatures};
use tb_core::policies::{fair, fifo, mpc};
use tb_core::rng::{stream_rng, SimRng};
use tb_core::rollout::{baseline, run_cc_episode, PolicyContext};
use tb_core::trainer::{
    build_cil_sequence, build_dt_sequence, cil_mape, grad_check, train, DtRollout, ModelConfig, Normalizer,
    Objective, Sample, SequencePolicyModel, TrainingConfig,
};
use tb_core::{EnvDescriptor, ExperienceDataset, TaskAction, TaskKind, TaskState, Trajectory};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("{name}: got {got}, want {want}"))
}

fn desc(env: &str) -> EnvDescriptor {
    EnvDescriptor { env_id: env.to_string(), seed: 0 }
}

fn metric_exactness() -> Outcome {
    close("lambda1", REBUF_PENALTY, 4.3, 0.0)?;
    close("lambda2", SMOOTHNESS_PENALTY, 1.0, 0.0)?;
    let q = |b, r, p| qoe(b, r, p).map_err(|e| e.to_string());
    close("qoe(2.85,0,2.85)", q(2.85, 0.0, 2.85)?, 2.85, 1e-9)?;
    close("qoe(1.2,0.5,0.75)", q(1.2, 0.5, 0.75)?, -1.40, 1e-9)?;
    close("qoe(0.3,0,4.3)", q(0.3, 0.0, 4.3)?, -3.70, 1e-9)?;
    ensure(qoe(1.0, -0.1, 1.0).is_err(), "negative rebuffering accepted")?;

    let j = |s, e| jct(s, e).map_err(|e| e.to_string());
    close("jct(10,25)", j(10.0, 25.0)?, 15.0, 1e-9)?;
    close("jct(7,7)", j(7.0, 7.0)?, 0.0, 1e-9)?;
    ensure(jct(5.0, 4.0).is_err(), "jct accepted t_e < t_s")?;
    let job = JobDag {
        id: 0,
        arrival: 0.0,
        stages: vec![StageSpec { id: 0, num_tasks: 10, task_duration: 2.0 }],
        edges: vec![],
    };
    let mut env = CjsEnv::new(vec![job], 5).map_err(|e| e.to_string())?;
    let step = env
        .step_schedule(&SchedulingDecision { job_id: 0, stage_id: 0, executors: 5 })
        .map_err(|e| e.to_string())?;
    let c = env.completions()[0];
    close("simulated job jct", j(c.arrival, c.completion)?, 4.0, 1e-9)?;
    close("terminal reward", step.reward, -4.0, 1e-9)?;

    let m = |p: &[f64], t: &[f64], r: &[f64]| mape(p, t, r).map_err(|e| e.to_string());
    close("mape([8],[10],[20])", m(&[8.0], &[10.0], &[20.0])?, 0.2, 1e-9)?;
    close("mape([15],[12],[10])", m(&[15.0], &[12.0], &[10.0])?, 0.0, 1e-9)?;
    close("mape(exact)", m(&[3.0, 7.5], &[3.0, 7.5], &[9.0, 9.0])?, 0.0, 1e-9)?;

    let s = |v: &[(f64, f64)]| {
        let recs: Vec<SessionRecord> = v.iter().map(|&(a, b)| SessionRecord::new(a, b).unwrap()).collect();
        stall_rate(&recs).map_err(|e| e.to_string())
    };
    close("stall_rate[(1,10),(0,10)]", s(&[(1.0, 10.0), (0.0, 10.0)])?, 0.05, 1e-9)?;
    close("stall_rate(no stall)", s(&[(0.0, 10.0), (0.0, 3.0)])?, 0.0, 1e-9)?;
    close("stall_rate[(2,10)]", s(&[(2.0, 10.0)])?, 0.2, 1e-9)?;

    let r = |a, b| reduction(a, b).map_err(|e| e.to_string());
    close("reduction(0.10,0.09)", r(0.10, 0.09)?, 0.10, 1e-9)?;
    close("reduction(equal)", r(0.07, 0.07)?, 0.0, 1e-9)?;
    close("reduction(0.10,0.12)", r(0.10, 0.12)?, -0.20, 1e-9)?;
    ensure(reduction(0.0, 0.1).is_err(), "zero baseline accepted")?;
    Ok("18 worked examples within 1e-9".into())
}

fn scheduler_exactness() -> Outcome {
    // integer grids so the oracle compares exactly: rtt in ms, loss in
    // per-mille, send rate in tenths of Mbps against a 10 Mbps request
    let rtts = [0, 20, 40, 49, 50, 51, 60, 100, 200, 1000];
    let losses = [0, 10, 30, 49, 50, 51, 80, 100, 500, 1000];
    let sends = [0, 50, 90, 94, 95, 96, 100, 120, 200, 1000];
    let th = SchedulerThresholds::default();
    close("alpha1", th.rtt_ms, 50.0, 0.0)?;
    close("alpha2", th.loss, 0.05, 0.0)?;
    close("alpha3", th.rate_ratio, 0.95, 0.0)?;
    let (mut points, mut mismatches, mut good) = (0, 0, 0);
    for &rtt in &rtts {
        for &loss in &losses {
            for &send in &sends {
                let state = FlowState {
                    rtt_ms: rtt as f64,
                    loss_rate: loss as f64 / 1000.0,
                    jitter_ms: 0.0,
                    last_send_rate: send as f64 / 10.0,
                    request_rate: 10.0,
                    queue_backlog: 0.0,
                    delivery_rate: send as f64 / 10.0,
                };
                let truth = if rtt < 50 && loss < 50 && send > 95 { Condition::Good } else { Condition::Poor };
                points += 1;
                good += usize::from(truth == Condition::Good);
                mismatches += usize::from(classify(&state, &th) != truth);
            }
        }
    }
    ensure(mismatches == 0, format!("{mismatches} of {points} grid points disagree"))?;
    Ok(format!("{points} grid points ({good} good), 0 mismatches"))
}

fn burst_profile(n: usize, p: f64, seed: u64) -> LoadProfile {
    LoadProfile { peak_requests: n, poor_fraction: p, pattern: ArrivalPattern::Burst, seed }
}

fn mean_delay(profile: &LoadProfile, cfg: &BatchServerConfig, mode: SchedulerMode) -> Result<f64, String> {
    let (_, rep) = simulate_load(
        profile,
        &SchedulerThresholds::default(),
        cfg,
        mode,
        &mut RateFollowerPolicy,
        &mut RateFollowerPolicy,
    )
    .map_err(|e| e.to_string())?;
    ensure(rep.requests == profile.peak_requests, "request count not conserved")?;
    Ok(rep.mean_delay_ms)
}

fn queue_arithmetic() -> Outcome {
    let (n, b, latency) = (128usize, 64usize, 37.1);
    let cfg = BatchServerConfig { batch_size: b, max_wait_ms: 0.0, latency: LatencyModel::Constant(latency), ..Default::default() };
    // batch k (0-based) of a simultaneous burst completes after (k + 1) latencies
    let oracle = (0..n).map(|i| (i / b + 1) as f64 * latency).sum::<f64>() / n as f64;
    close("closed form", oracle, 55.65, 1e-9)?;
    let with = mean_delay(&burst_profile(n, 1.0, 1), &cfg, SchedulerMode::With)?;
    let without = mean_delay(&burst_profile(n, 0.0, 1), &cfg, SchedulerMode::Without)?;
    close("all-poor burst, scheduler on", with, oracle, 0.01)?;
    close("burst, scheduler off", without, oracle, 0.01)?;
    Ok(format!("mean delay {with:.4} ms vs closed form {oracle:.4} ms"))
}

fn selective_invocation() -> Outcome {
    let cfg = BatchServerConfig::default();
    let peaks = [64usize, 128, 256, 512, 1000, 2000];
    let mut worst_with: f64 = 0.0;
    let mut cells = 0;
    let mut violations = Vec::new();
    for p in [0.2, 0.8] {
        for &peak in &peaks {
            for seed in 1..=3 {
                let profile = burst_profile(peak, p, seed);
                let with = mean_delay(&profile, &cfg, SchedulerMode::With)?;
                let without = mean_delay(&profile, &cfg, SchedulerMode::Without)?;
                if peak >= cfg.batch_size {
                    cells += 1;
                    if without <= with {
                        violations.push(format!("p={p} peak={peak} seed={seed} ({without:.2} <= {with:.2} ms)"));
                    }
                }
                if p == 0.2 {
                    if with >= 100.0 {
                        violations.push(format!("p=0.2 peak={peak} seed={seed} over budget ({with:.2} ms)"));
                    }
                    worst_with = worst_with.max(with);
                }
            }
        }
    }
    ensure(
        violations.is_empty(),
        format!(
            "{} of {cells} cells violate: {}; worst p=0.2 delay {worst_with:.2} ms",
            violations.len(),
            violations.join("; ")
        ),
    )?;
    Ok(format!("without > with in all {cells} cells; worst p=0.2 delay {worst_with:.2} ms"))
}

fn random_state(tag: TaskKind, rng: &mut SimRng) -> TaskState {
    let mut s = TaskState::new(tag)
        .with_scalar("a", rng.gen_range(-1.0..1.0))
        .with_scalar("b", rng.gen_range(-1.0..1.0));
    if tag == TaskKind::Cjs {
        s = s.with_scalar("total_executors", 10.0);
        let stages = (0..rng.gen_range(1..4u32))
            .map(|k| StageFeatures {
                job_id: 0,
                stage_id: k,
                remaining_work: rng.gen_range(0.0..3.0),
                num_tasks: rng.gen_range(1.0..5.0),
                descendant_work: rng.gen_range(0.0..3.0),
                depth: rng.gen_range(0.0..2.0),
            })
            .collect();
        s.graph = Some(DagSnapshot { stages });
    } else {
        s = s.with_scalar("c", rng.gen_range(-1.0..1.0));
    }
    s
}

fn random_batch(tag: TaskKind, window: usize, rng: &mut SimRng) -> Vec<Sample> {
    let len = 4;
    let parts = (0..len)
        .map(|_| {
            let s = random_state(tag, rng);
            let action = match tag {
                TaskKind::Abr => TaskAction::Bitrate { index: rng.gen_range(0..4) },
                TaskKind::Cc => TaskAction::SendRate { mbps: rng.gen_range(0.0..5.0) },
                TaskKind::Cjs => {
                    let n = s.graph.as_ref().unwrap().stages.len() as u32;
                    TaskAction::Schedule { job_id: 0, stage_id: rng.gen_range(0..n), executors: rng.gen_range(1..11) }
                }
            };
            let expert = (tag == TaskKind::Cc).then(|| TaskAction::SendRate { mbps: rng.gen_range(0.0..5.0) });
            (s, action, rng.gen_range(-1.0..1.0), expert)
        })
        .collect();
    let t = Trajectory::from_parts(0, tag, desc("random"), "random", parts).unwrap();
    (0..len)
        .map(|i| if tag == TaskKind::Cc { build_cil_sequence(&t, i, window) } else { build_dt_sequence(&t, i, window) })
        .collect::<tb_core::Result<_>>()
        .unwrap()
}

fn gradient_verification() -> Outcome {
    let mut worst = BTreeMap::new();
    let mut over = Vec::new();
    for (k, tag) in [TaskKind::Abr, TaskKind::Cjs, TaskKind::Cc].into_iter().enumerate() {
        let cfg = ModelConfig {
            tag,
            objective: if tag == TaskKind::Cc { Objective::Cil } else { Objective::Dt },
            window: 3,
            embed_width: 4,
            hidden_width: 6,
            state_dim: 3,
            num_actions: 4,
        };
        let mut norm = Normalizer::identity(3);
        if tag == TaskKind::Cjs {
            norm.state_std[2] = 10.0;
        }
        let mut rng = stream_rng(2024, k as u64);
        let mut w: f64 = 0.0;
        for seed in 0..50 {
            let model = SequencePolicyModel::new(cfg.clone(), norm.clone(), 1000 + seed).map_err(|e| e.to_string())?;
            let batch = random_batch(tag, cfg.window, &mut rng);
            let err = grad_check(&model, &batch, 1e-5).map_err(|e| e.to_string())?;
            if err >= 1e-4 {
                over.push(format!("{tag} pair {seed} ({err:.3e})"));
            }
            w = w.max(err);
        }
        worst.insert(tag.to_string(), w);
    }
    let detail: Vec<String> = worst.iter().map(|(t, w)| format!("{t} {w:.2e}")).collect();
    let detail = format!("worst relative error per head: {}", detail.join(", "));
    ensure(over.is_empty(), format!("{} of 150 pairs >= 1e-4: {}; {detail}", over.len(), over.join(", ")))?;
    Ok(format!("150 pairs, {detail}"))
}

fn harmonic_estimate(samples: &[f64]) -> Option<f64> {
    let recent: Vec<f64> = samples.iter().rev().filter(|&&t| t > 0.0).take(5).copied().collect();
    if recent.is_empty() {
        None
    } else {
        Some(recent.len() as f64 / recent.iter().map(|t| 1.0 / t).sum::<f64>())
    }
}

fn mpc_oracle(obs: &AbrObservation, ladder: &[f64]) -> usize {
    let Some(est) = harmonic_estimate(&obs.past_throughputs) else { return 0 };
    let mut best = (f64::NEG_INFINITY, 0);
    for (a, &rate) in ladder.iter().enumerate() {
        let download = obs.next_chunk_sizes[a] / est;
        let rebuf = (download - obs.buffer).max(0.0);
        let value = rate - 4.3 * rebuf - (rate - obs.last_bitrate).abs();
        if value > best.0 {
            best = (value, a);
        }
    }
    best.1
}

fn random_workload(rng: &mut SimRng) -> (Vec<JobDag>, u32) {
    let jobs = (0..rng.gen_range(1..=3u32))
        .map(|id| {
            let n = rng.gen_range(1..=3u32);
            let stages = (0..n)
                .map(|s| StageSpec { id: s, num_tasks: rng.gen_range(1..=6), task_duration: rng.gen_range(1..=4) as f64 })
                .collect();
            let mut edges = Vec::new();
            for p in 0..n {
                for c in p + 1..n {
                    if rng.gen_bool(0.5) {
                        edges.push((p, c));
                    }
                }
            }
            JobDag { id, arrival: rng.gen_range(0..=4) as f64, stages, edges }
        })
        .collect();
    (jobs, rng.gen_range(1..=6))
}

#[derive(Clone, Copy, PartialEq)]
enum Rule {
    Fifo,
    Fair,
}

/// Straightforward event simulation of a small cluster under one of the two
/// rules. Returns completion times by job id and the sorted task log.
fn hand_simulation(jobs: &[JobDag], k: u32, rule: Rule) -> (BTreeMap<u32, f64>, Vec<(u32, u32, u64, u64)>) {
    struct Exec {
        job: usize,
        stage: usize,
        end: f64,
    }
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| jobs[a].arrival.total_cmp(&jobs[b].arrival).then(jobs[a].id.cmp(&jobs[b].id)));
    let mut unstarted: Vec<Vec<u32>> = jobs.iter().map(|j| j.stages.iter().map(|s| s.num_tasks).collect()).collect();
    let mut finished: Vec<Vec<u32>> = jobs.iter().map(|j| vec![0; j.stages.len()]).collect();
    let mut done_at: Vec<Option<f64>> = vec![None; jobs.len()];
    let mut busy: Vec<Exec> = Vec::new();
    let mut log = Vec::new();
    let mut now = 0.0f64;

    let stage_done = |finished: &Vec<Vec<u32>>, j: usize, s: usize| finished[j][s] == jobs[j].stages[s].num_tasks;
    loop {
        let arrived = |j: usize| jobs[j].arrival <= now;
        // a stage is runnable when its parents are complete and it has work left
        let runnable = |unstarted: &Vec<Vec<u32>>, finished: &Vec<Vec<u32>>, j: usize, s: usize| {
            unstarted[j][s] > 0
                && jobs[j].edges.iter().filter(|e| e.1 as usize == s).all(|e| stage_done(finished, j, e.0 as usize))
        };
        loop {
            let free = k - busy.len() as u32;
            if free == 0 {
                break;
            }
            let live: Vec<usize> = order.iter().copied().filter(|&j| arrived(j) && done_at[j].is_none()).collect();
            let first_stage = |j: usize| (0..jobs[j].stages.len()).find(|&s| runnable(&unstarted, &finished, j, s));
            let mut pick = None;
            if rule == Rule::Fair && !live.is_empty() {
                let n = live.len() as u32;
                for (rank, &j) in live.iter().enumerate() {
                    let share = k / n + u32::from((rank as u32) < k % n);
                    let held = busy.iter().filter(|e| e.job == j).count() as u32;
                    if held < share {
                        if let Some(s) = first_stage(j) {
                            pick = Some((j, s, free.min(share - held).min(unstarted[j][s])));
                            break;
                        }
                    }
                }
            }
            if pick.is_none() {
                pick = live.iter().find_map(|&j| first_stage(j).map(|s| (j, s, free.min(unstarted[j][s]))));
            }
            let Some((j, s, count)) = pick else { break };
            for _ in 0..count {
                let end = now + jobs[j].stages[s].task_duration;
                busy.push(Exec { job: j, stage: s, end });
                log.push((jobs[j].id, s as u32, now as u64, end as u64));
            }
            unstarted[j][s] -= count;
        }
        if done_at.iter().all(Option::is_some) {
            break;
        }
        let next_end = busy.iter().map(|e| e.end).fold(f64::INFINITY, f64::min);
        let next_arrival = jobs.iter().map(|j| j.arrival).filter(|&a| a > now).fold(f64::INFINITY, f64::min);
        now = next_end.min(next_arrival);
        assert!(now.is_finite(), "hand simulation stalled");
        let mut still = Vec::new();
        for e in busy.drain(..) {
            if e.end > now {
                still.push(e);
                continue;
            }
            finished[e.job][e.stage] += 1;
            if unstarted[e.job][e.stage] > 0 {
                // the executor stays with its stage for the next task
                unstarted[e.job][e.stage] -= 1;
                let end = now + jobs[e.job].stages[e.stage].task_duration;
                log.push((jobs[e.job].id, e.stage as u32, now as u64, end as u64));
                still.push(Exec { end, ..e });
            }
        }
        busy = still;
        for j in 0..jobs.len() {
            if done_at[j].is_none() && (0..jobs[j].stages.len()).all(|s| stage_done(&finished, j, s)) {
                done_at[j] = Some(now);
            }
        }
    }
    log.sort_unstable();
    let completions = jobs.iter().zip(&done_at).map(|(j, d)| (j.id, d.unwrap())).collect();
    (completions, log)
}

fn run_rule(jobs: &[JobDag], k: u32, rule: Rule) -> Result<(BTreeMap<u32, f64>, Vec<(u32, u32, u64, u64)>), String> {
    let mut env = CjsEnv::new(jobs.to_vec(), k).map_err(|e| e.to_string())?;
    while !env.is_done() {
        let d = match rule {
            Rule::Fifo => fifo(env.state()),
            Rule::Fair => fair(env.state()),
        }
        .map_err(|e| e.to_string())?;
        env.step_schedule(&d).map_err(|e| e.to_string())?;
    }
    let completions = env.completions().iter().map(|c| (c.job_id, c.completion)).collect();
    let mut log: Vec<_> =
        env.task_log().iter().map(|t| (t.job_id, t.stage_id, t.start as u64, t.end as u64)).collect();
    log.sort_unstable();
    Ok((completions, log))
}

fn baseline_oracles() -> Outcome {
    let mut rng = stream_rng(77, 1);
    let ladder = DEFAULT_LADDER.to_vec();
    let mut mpc_checked = 0;
    for case in 0..200 {
        let history = rng.gen_range(0..=8);
        let past: Vec<f64> = (0..8)
            .map(|i| if i < 8 - history || rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.2..8.0) })
            .collect();
        let scale = rng.gen_range(2.0..6.0);
        let obs = AbrObservation {
            past_download_times: past.iter().map(|&t| if t > 0.0 { rng.gen_range(0.5..8.0) } else { 0.0 }).collect(),
            past_throughputs: past,
            next_chunk_sizes: ladder.iter().map(|b| b * scale * rng.gen_range(0.8..1.2)).collect(),
            buffer: rng.gen_range(0.0..60.0),
            chunks_remaining: rng.gen_range(1..=48),
            last_bitrate: ladder[rng.gen_range(0..ladder.len())],
        };
        let got = mpc(&obs, &ladder, 4.0, 60.0, 1).map_err(|e| e.to_string())?;
        let want = mpc_oracle(&obs, &ladder);
        ensure(got == want, format!("mpc case {case}: got {got}, brute force {want}"))?;
        mpc_checked += 1;
    }
    let mut workloads = 0;
    for case in 0..50 {
        let (jobs, k) = random_workload(&mut rng);
        for rule in [Rule::Fifo, Rule::Fair] {
            let name = if rule == Rule::Fifo { "fifo" } else { "fair" };
            let (got_c, got_log) = run_rule(&jobs, k, rule)?;
            let (want_c, want_log) = hand_simulation(&jobs, k, rule);
            ensure(got_c == want_c, format!("{name} workload {case}: completions {got_c:?} vs {want_c:?}"))?;
            ensure(got_log == want_log, format!("{name} workload {case}: task logs differ"))?;
        }
        workloads += 1;
    }
    Ok(format!("mpc: {mpc_checked} observations, fifo/fair: {workloads} workloads, 0 deviations"))
}

const TWO_ACTION_STEPS: usize = 10;

fn two_action_state(x: f64, y: f64, left: usize) -> TaskState {
    TaskState::new(TaskKind::Abr)
        .with_scalar("x", x)
        .with_scalar("y", y)
        .with_scalar("steps_left", left as f64)
}

/// Action 1 earns one unit more than action 0 in every state.
fn two_action_reward(action: usize, x: f64) -> f64 {
    0.2 * x + if action == 1 { 1.0 } else { 0.0 }
}

fn two_action_dataset(episodes: usize, seed: u64) -> (ExperienceDataset, usize) {
    let mut rng = stream_rng(seed, 3);
    let mut dominant = 0;
    let trajs = (0..episodes)
        .map(|id| {
            let parts = (0..TWO_ACTION_STEPS)
                .map(|i| {
                    let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let a = usize::from(rng.gen_bool(0.5));
                    dominant += a;
                    let s = two_action_state(x, y, TWO_ACTION_STEPS - i);
                    (s, TaskAction::Bitrate { index: a }, two_action_reward(a, x), None)
                })
                .collect();
            Trajectory::from_parts(id as u64, TaskKind::Abr, desc("two-action"), "mixed", parts).unwrap()
        })
        .collect();
    (ExperienceDataset::new(TaskKind::Abr, trajs, BTreeMap::new()).unwrap(), dominant)
}

fn dt_learnability() -> Outcome {
    let (ds, _) = two_action_dataset(400, 1);
    let cfg = TrainingConfig { num_actions: Some(2), ..TrainingConfig::for_task(TaskKind::Abr, 3) };
    let (model, _) = train(&ds, &cfg).map_err(|e| e.to_string())?;

    // held-out states, generated by the same mixed behavior policy
    let (held_out, behavior_dominant) = two_action_dataset(100, 2);
    let states = held_out.num_steps();
    let mut model_dominant = 0;
    for t in &held_out.trajectories {
        let mut rollout = DtRollout::new(&model);
        for step in &t.steps {
            let TaskAction::Bitrate { index } = rollout.act(&model, &step.state).map_err(|e| e.to_string())? else {
                return Err("non-bitrate action".into());
            };
            model_dominant += usize::from(index == 1);
            let x = step.state.scalar("x").unwrap();
            rollout.observe(two_action_reward(index, x)).map_err(|e| e.to_string())?;
        }
    }
    let model_rate = model_dominant as f64 / states as f64;
    let behavior_rate = behavior_dominant as f64 / states as f64;
    ensure(states == 1000, format!("{states} held-out states"))?;
    ensure(behavior_rate <= 0.6, format!("behavior policy picks the dominant action {behavior_rate:.3}"))?;
    ensure(model_rate >= 0.8, format!("model picks the dominant action {model_rate:.3} (behavior {behavior_rate:.3})"))?;
    Ok(format!("dominant action: model {model_rate:.3}, behavior {behavior_rate:.3} over {states} states"))
}

fn cc_dataset(env: CcEnvId, seeds: std::ops::Range<u64>) -> Result<(ExperienceDataset, Vec<(f64, f64)>), String> {
    let probe = "probe".parse().map_err(|e: tb_core::Error| e.to_string())?;
    let mut trajs = Vec::new();
    let mut cap_req = Vec::new();
    for seed in seeds {
        let mut e = make_cc_env(env, seed);
        let mut p = baseline(&probe, &PolicyContext::for_cc(&e), seed).map_err(|e| e.to_string())?;
        let ep = run_cc_episode(&mut e, p.as_mut(), seed, desc(&env.to_string()), None).map_err(|e| e.to_string())?;
        cap_req.extend(ep.capacity.iter().copied().zip(ep.request.iter().copied()));
        trajs.push(ep.trajectory);
    }
    let ds = ExperienceDataset::new(TaskKind::Cc, trajs, BTreeMap::new()).map_err(|e| e.to_string())?;
    Ok((ds, cap_req))
}

fn cil_learnability() -> Outcome {
    let (train_ds, _) = cc_dataset(CcEnvId::Train, 0..30)?;
    let (val_ds, cap_req) = cc_dataset(CcEnvId::DefaultTest, 100..110)?;
    let (model, _) = train(&train_ds, &TrainingConfig::for_task(TaskKind::Cc, 5)).map_err(|e| e.to_string())?;
    let model_mape = cil_mape(&model, &val_ds).map_err(|e| e.to_string())?;
    let (cap, req): (Vec<f64>, Vec<f64>) = cap_req.into_iter().unzip();
    let follower_mape = mape(&req, &cap, &req).map_err(|e| e.to_string())?;
    let over = req.iter().zip(&cap).filter(|(r, c)| r > c).count() as f64 / req.len() as f64;
    ensure(over >= 0.3, format!("request exceeds capacity on only {:.1}% of steps", over * 100.0))?;
    ensure(model_mape < 0.10, format!("validation MAPE {:.2}% (rate follower {:.2}%)", model_mape * 100.0, follower_mape * 100.0))?;
    ensure(follower_mape > model_mape, format!("rate follower {follower_mape:.4} not worse than model {model_mape:.4}"))?;
    Ok(format!(
        "validation MAPE {:.2}% vs rate follower {:.2}%; request > capacity on {:.1}% of steps",
        model_mape * 100.0,
        follower_mape * 100.0,
        over * 100.0
    ))
}

fn conservation_suite() -> Outcome {
    let mut rng = stream_rng(9, 9);
    let steps = 10_000;

    let abr_envs = [AbrEnvId::Train, AbrEnvId::DefaultTest, AbrEnvId::Ood1, AbrEnvId::Ood2, AbrEnvId::Ood3];
    let mut env = make_abr_env(abr_envs[0], 0);
    for i in 0..steps {
        if env.is_done() {
            env = make_abr_env(abr_envs[rng.gen_range(0..abr_envs.len())], i as u64);
        }
        let a = rng.gen_range(0..env.manifest().ladder.len());
        let s = env.step_download(a).map_err(|e| e.to_string())?;
        let b = env.state().buffer;
        ensure((0.0..=env.buffer_cap()).contains(&b), format!("abr step {i}: buffer {b} outside [0, cap]"))?;
        ensure(s.record.rebuf >= 0.0 && s.record.idle >= 0.0, format!("abr step {i}: negative rebuf or idle"))?;
    }

    let mut cjs_steps = 0;
    let mut seed = 0;
    while cjs_steps < steps {
        let id = [CjsEnvId::Train, CjsEnvId::DefaultTest][seed as usize % 2];
        let mut env = make_cjs_env(id, seed);
        seed += 1;
        while !env.is_done() && cjs_steps < steps {
            let runnable = env.state().schedulable_stages();
            let s = runnable[rng.gen_range(0..runnable.len())];
            let n = rng.gen_range(1..=env.state().free_executors);
            env.step_schedule(&SchedulingDecision { job_id: s.job_id, stage_id: s.stage_id, executors: n })
                .map_err(|e| e.to_string())?;
            let st = env.state();
            ensure(
                st.free_executors + st.allocated() == st.total_executors && st.allocated() == st.running_tasks(),
                format!("cjs step {cjs_steps}: executors not conserved"),
            )?;
            cjs_steps += 1;
        }
        check_precedence(&env)?;
    }

    let cc_envs = [CcEnvId::Train, CcEnvId::DefaultTest, CcEnvId::Stable];
    let mut env = make_cc_env(cc_envs[0], 0);
    for i in 0..steps {
        if env.remaining_steps() == 0 {
            env = make_cc_env(cc_envs[rng.gen_range(0..cc_envs.len())], i as u64);
        }
        let send = rng.gen_range(0.0..40.0);
        let (_, fb) = env.step_flow(send).map_err(|e| e.to_string())?;
        let lhs = fb.backlog_before + fb.arrived;
        let rhs = fb.backlog_after + fb.departed + fb.dropped;
        ensure((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), format!("cc step {i}: volume {lhs} in, {rhs} out"))?;
        ensure(fb.backlog_after <= env.link().queue_capacity + 1e-12, format!("cc step {i}: queue overflow"))?;
    }
    Ok(format!("{steps} fuzzed steps per simulator, 0 violations"))
}

fn check_precedence(env: &CjsEnv) -> Result<(), String> {
    for job in &env.state().jobs {
        for &(p, c) in &job.dag.edges {
            let tasks = |s: u32| env.task_log().iter().filter(move |t| t.job_id == job.dag.id && t.stage_id == s);
            let parent_end = tasks(p).map(|t| t.end).fold(f64::NEG_INFINITY, f64::max);
            if let Some(child_start) = tasks(c).map(|t| t.start).reduce(f64::min) {
                ensure(
                    child_start >= parent_end,
                    format!("job {} stage {c} started before parent {p} finished", job.dag.id),
                )?;
            }
        }
    }
    Ok(())
}

fn pipeline_config(task: &str, out: &Path) -> Result<ExperimentConfig, String> {
    let body = match task {
        "abr" => "[collect]\nenvs = train\npolicy = mpc\nepisodes = 3\n[train]\nepochs = 3\n\
                  [evaluate]\nenvs = default-test ood1\npolicies = bba mpc\n",
        "cjs" => "[collect]\nenvs = train\npolicy = fair\nepisodes = 1\n[train]\nepochs = 2\n\
                  [evaluate]\nenvs = default-test\npolicies = fifo fair\n",
        _ => "[collect]\nenvs = train\npolicy = probe\nepisodes = 2\nsteps = 200\n[train]\nepochs = 3\n\
              [evaluate]\nenvs = default-test stable\npolicies = rate-follower adaptive-proxy\nsteps = 200\n",
    };
    let text = format!(
        "[experiment]\ntask = {task}\nseeds = 1 2 3\noutput = {}\n{body}checkpoint = {}\n",
        out.display(),
        out.join("model.tbm").display()
    );
    let raw = RawConfig::parse(&text).map_err(|e| e.to_string())?;
    ExperimentConfig::from_raw(&raw).map_err(|e| e.to_string())
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for task in ["abr", "cjs", "cc"] {
        let runs: Vec<PathBuf> = (0..2).map(|r| tmp.path().join(format!("{task}-{r}"))).collect();
        for dir in &runs {
            let cfg = pipeline_config(task, dir)?;
            cmd_collect(&cfg).map_err(|e| e.to_string())?;
            cmd_train(&cfg).map_err(|e| e.to_string())?;
            cmd_evaluate(&cfg).map_err(|e| e.to_string())?;
        }
        let (a, b) = (files_under(&runs[0]), files_under(&runs[1]));
        ensure(a == b, format!("{task}: runs wrote different file sets"))?;
        ensure(a.len() >= 5, format!("{task}: only {} output files", a.len()))?;
        for f in &a {
            let x = std::fs::read(runs[0].join(f)).map_err(|e| e.to_string())?;
            let y = std::fs::read(runs[1].join(f)).map_err(|e| e.to_string())?;
            ensure(x == y, format!("{task}: {} differs between runs", f.display()))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} output files byte-identical across two runs (abr, cjs, cc)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("metric exactness", metric_exactness, 1),
        ("scheduler exactness", scheduler_exactness, 1),
        ("queue arithmetic", queue_arithmetic, 5),
        ("selective invocation", selective_invocation, 60),
        ("gradient verification", gradient_verification, 60),
        ("baseline oracles", baseline_oracles, 60),
        ("DT learnability", dt_learnability, 300),
        ("CIL learnability", cil_learnability, 300),
        ("simulator conservation", conservation_suite, 60),
        ("end-to-end determinism", end_to_end_determinism, 600),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > Duration::from_secs(*budget) => {
                Err(format!("took {:.1} s, budget {budget} s", took.as_secs_f64()))
            }
            o => o,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {status} {name}: {detail} [{:.2} s]", took.as_secs_f64());
        failed += usize::from(outcome.is_err());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
