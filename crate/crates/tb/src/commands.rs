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

//! The pipeline commands. Each one is a pure function of its config, the
//! seeds it names and its input files; episodes run in parallel but results
//! are gathered in a fixed order, so outputs are byte-for-byte repeatable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use tb_core::abr::{make_abr_env, AbrEnvId};
use tb_core::apc::{simulate_load, LoadProfile, ModelRatePolicy, RateFollowerPolicy, SchedulerMode};
use tb_core::cc::{make_cc_env, stall_rate, CcEnvId, SessionRecord};
use tb_core::cjs::{make_cjs_env, CjsEnvId};
use tb_core::policies::PolicyDescriptor;
use tb_core::rng::mix_seed;
use tb_core::rollout::{
    baseline, run_abr_episode, run_cc_episode, run_cjs_episode, AbrEpisode, CcEpisode, CjsEpisode, ModelPolicy,
    Policy, PolicyContext,
};
use tb_core::trainer::{train, SequencePolicyModel, TrainingLog};
use tb_core::{EnvDescriptor, ExperienceDataset, TaskKind, Trajectory};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{require_file, ExperimentConfig};
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::formats::{csv_err, format_sessions};
use crate::server::{check_model, serve_tcp, ModelServer, ServerConfig};
use crate::write_file;

/// Who acts in an episode.
#[derive(Clone, Copy)]
pub enum Actor<'a> {
    Baseline(&'a PolicyDescriptor),
    Model(&'a SequencePolicyModel),
}

impl Actor<'_> {
    pub fn label(&self) -> String {
        match self {
            Actor::Baseline(d) => d.to_string(),
            Actor::Model(_) => "model".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Episode {
    Abr(AbrEpisode),
    Cjs(CjsEpisode),
    Cc(CcEpisode),
}

impl Episode {
    pub fn trajectory(&self) -> &Trajectory {
        match self {
            Episode::Abr(e) => &e.trajectory,
            Episode::Cjs(e) => &e.trajectory,
            Episode::Cc(e) => &e.trajectory,
        }
    }

    fn into_trajectory(self) -> Trajectory {
        match self {
            Episode::Abr(e) => e.trajectory,
            Episode::Cjs(e) => e.trajectory,
            Episode::Cc(e) => e.trajectory,
        }
    }
}

/// Runs one episode of `task` on environment row `env` with `seed`.
pub fn run_episode(
    task: TaskKind,
    env: &str,
    seed: u64,
    actor: Actor<'_>,
    id: u64,
    steps: Option<usize>,
) -> Result<Episode> {
    let desc = EnvDescriptor { env_id: env.to_string(), seed };
    let make = |ctx: &PolicyContext| -> Result<Box<dyn Policy + '_>> {
        Ok(match actor {
            Actor::Baseline(d) => baseline(d, ctx, seed)?,
            Actor::Model(m) => {
                if m.tag() != task {
                    return Err(tb_core::Error::TaskMismatch { expected: task, found: m.tag() }.into());
                }
                Box::new(ModelPolicy::new(m))
            }
        })
    };
    Ok(match task {
        TaskKind::Abr => {
            let mut e = make_abr_env(AbrEnvId::from_str(env)?, seed);
            let mut p = make(&PolicyContext::for_abr(&e))?;
            Episode::Abr(run_abr_episode(&mut e, p.as_mut(), id, desc)?)
        }
        TaskKind::Cjs => {
            let mut e = make_cjs_env(CjsEnvId::from_str(env)?, seed);
            let mut p = make(&PolicyContext::Cjs)?;
            Episode::Cjs(run_cjs_episode(&mut e, p.as_mut(), id, desc)?)
        }
        TaskKind::Cc => {
            let mut e = make_cc_env(CcEnvId::from_str(env)?, seed);
            let mut p = make(&PolicyContext::for_cc(&e))?;
            Episode::Cc(run_cc_episode(&mut e, p.as_mut(), id, desc, steps)?)
        }
    })
}

/// Seed of episode `e` under experiment seed `seed`.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    mix_seed(seed, e as u64)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Runtime(e.to_string()))
}

pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<ExperienceDataset> {
    let c = &cfg.collect;
    let mut jobs = Vec::new();
    for env in &c.envs {
        for &seed in &cfg.seeds {
            for e in 0..c.episodes {
                jobs.push((env.as_str(), episode_seed(seed, e)));
            }
        }
    }
    let trajectories = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (env, seed))| {
            run_episode(cfg.task, env, *seed, Actor::Baseline(&c.policy), i as u64, c.steps)
                .map(Episode::into_trajectory)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = BTreeMap::new();
    meta.insert("policy".to_string(), c.policy.to_string());
    meta.insert("envs".to_string(), c.envs.join(" "));
    meta.insert("seeds".to_string(), cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    meta.insert("episodes".to_string(), c.episodes.to_string());
    if let Some(s) = c.steps {
        meta.insert("steps".to_string(), s.to_string());
    }
    let ds = ExperienceDataset::new(cfg.task, trajectories, meta)?;
    save_dataset(&ds, &c.dataset)?;
    log::info!("collected {} trajectories ({} steps) -> {}", ds.trajectories.len(), ds.num_steps(), c.dataset.display());
    Ok(ds)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(SequencePolicyModel, TrainingLog)> {
    let t = &cfg.train;
    require_file(&t.dataset, "train.dataset")?;
    let ds = load_dataset(&t.dataset)?;
    if ds.tag != cfg.task {
        return Err(Error::Config(format!("dataset holds {} trajectories, experiment task is {}", ds.tag, cfg.task)));
    }
    let (model, log) = train(&ds, &t.training)?;
    save_checkpoint(&model, &t.checkpoint)?;
    let rows: Vec<Vec<String>> =
        log.epochs.iter().map(|e| vec![e.epoch.to_string(), e.loss.to_string()]).collect();
    write_file(&t.log, &csv_bytes(&["epoch", "loss"], &rows)?)?;
    log::info!(
        "trained on {} samples, final loss {:?} -> {}",
        log.samples,
        log.final_loss(),
        t.checkpoint.display()
    );
    Ok((model, log))
}

/// One aggregate row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub env: String,
    pub policy: String,
    pub metric: &'static str,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn metric_names(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Abr => &["qoe"],
        TaskKind::Cjs => &["jct"],
        TaskKind::Cc => &["mape", "stall_rate"],
    }
}

/// Per-seed metric values from that seed's episodes, in `metric_names` order.
fn seed_metrics(episodes: &[Episode]) -> Result<Vec<f64>> {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(match &episodes[0] {
        Episode::Abr(_) => vec![mean(
            episodes.iter().map(|e| if let Episode::Abr(a) = e { a.mean_qoe() } else { f64::NAN }).collect(),
        )],
        Episode::Cjs(_) => vec![mean(
            episodes.iter().map(|e| if let Episode::Cjs(c) = e { c.average_jct } else { f64::NAN }).collect(),
        )],
        Episode::Cc(_) => {
            let cc: Vec<&CcEpisode> =
                episodes.iter().filter_map(|e| if let Episode::Cc(c) = e { Some(c) } else { None }).collect();
            let mapes = cc.iter().map(|c| c.mape()).collect::<tb_core::Result<Vec<_>>>()?;
            let sessions: Vec<SessionRecord> = cc.iter().map(|c| c.session).collect();
            vec![mean(mapes), stall_rate(&sessions)?]
        }
    })
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<EvalRow>> {
    let ev = &cfg.evaluate;
    let model = match &ev.checkpoint {
        Some(p) => {
            require_file(p, "evaluate.checkpoint")?;
            Some(load_checkpoint(p)?)
        }
        None => None,
    };
    let mut actors: Vec<Actor<'_>> = ev.policies.iter().map(Actor::Baseline).collect();
    if let Some(m) = &model {
        actors.push(Actor::Model(m));
    }
    let mut jobs = Vec::new();
    for env in &ev.envs {
        for (ai, _) in actors.iter().enumerate() {
            for (si, &seed) in cfg.seeds.iter().enumerate() {
                for e in 0..ev.episodes {
                    jobs.push((env.as_str(), ai, si, seed, e));
                }
            }
        }
    }
    let episodes = jobs
        .par_iter()
        .map(|&(env, ai, _, seed, e)| run_episode(cfg.task, env, episode_seed(seed, e), actors[ai], e as u64, ev.steps))
        .collect::<Result<Vec<_>>>()?;

    let metrics = metric_names(cfg.task);
    let mut seed_rows = Vec::new();
    let mut agg = Vec::new();
    let mut chunk_rows = Vec::new();
    let mut sessions: BTreeMap<(String, String), Vec<(u64, SessionRecord)>> = BTreeMap::new();
    let per_cell = cfg.seeds.len() * ev.episodes;
    for (cell, chunk) in episodes.chunks(per_cell).enumerate() {
        let env = &ev.envs[cell / actors.len()];
        let policy = actors[cell % actors.len()].label();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
        for (si, eps) in chunk.chunks(ev.episodes).enumerate() {
            let seed = cfg.seeds[si];
            for (mi, (m, v)) in metrics.iter().zip(seed_metrics(eps)?).enumerate() {
                seed_rows.push(vec![
                    cfg.task.to_string(),
                    env.clone(),
                    policy.clone(),
                    seed.to_string(),
                    ev.episodes.to_string(),
                    m.to_string(),
                    v.to_string(),
                ]);
                values[mi].push(v);
            }
            for (e, ep) in eps.iter().enumerate() {
                match ep {
                    Episode::Abr(a) => {
                        for c in &a.chunks {
                            chunk_rows.push(vec![
                                env.clone(),
                                policy.clone(),
                                seed.to_string(),
                                e.to_string(),
                                c.chunk.to_string(),
                                c.bitrate.to_string(),
                                c.prev_bitrate.to_string(),
                                c.rebuf.to_string(),
                                c.reward.to_string(),
                            ]);
                        }
                    }
                    Episode::Cc(c) => sessions
                        .entry((env.clone(), policy.clone()))
                        .or_default()
                        .push(((si * ev.episodes + e) as u64, c.session)),
                    Episode::Cjs(_) => {}
                }
            }
        }
        for (m, v) in metrics.iter().zip(&values) {
            let (mean, std) = mean_std(v);
            agg.push(EvalRow { env: env.clone(), policy: policy.clone(), metric: m, seeds: v.len(), mean, std });
        }
    }

    let agg_rows: Vec<Vec<String>> = agg
        .iter()
        .map(|r| {
            vec![
                cfg.task.to_string(),
                r.env.clone(),
                r.policy.clone(),
                r.metric.to_string(),
                r.seeds.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
            ]
        })
        .collect();
    write_file(&ev.report, &csv_bytes(&["task", "env", "policy", "metric", "seeds", "mean", "std"], &agg_rows)?)?;
    write_file(
        &ev.seed_report,
        &csv_bytes(&["task", "env", "policy", "seed", "episodes", "metric", "value"], &seed_rows)?,
    )?;
    if cfg.task == TaskKind::Abr {
        write_file(
            &ev.chunk_log,
            &csv_bytes(
                &["env", "policy", "seed", "episode", "chunk", "bitrate", "prev_bitrate", "rebuf", "qoe"],
                &chunk_rows,
            )?,
        )?;
    }
    if cfg.task == TaskKind::Cc {
        let dir = ev.report.parent().map_or_else(|| PathBuf::from("sessions"), |d| d.join("sessions"));
        for ((env, policy), s) in &sessions {
            let path = dir.join(format!("{env}--{}.csv", sanitize(policy)));
            write_file(&path, format_sessions(s)?.as_bytes())?;
        }
    }
    log::info!("evaluated {} rows -> {}", agg.len(), ev.report.display());
    Ok(agg)
}

/// One `(p, peak, mode, seed)` cell of the APC benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ApcRow {
    pub poor_fraction: f64,
    pub peak: usize,
    pub mode: SchedulerMode,
    pub seed: u64,
    pub report: tb_core::apc::LoadReport,
}

pub fn cmd_apc_bench(cfg: &ExperimentConfig) -> Result<Vec<ApcRow>> {
    let a = &cfg.apc;
    require_file(&a.checkpoint, "apc.checkpoint")?;
    let model = load_checkpoint(&a.checkpoint)?;
    check_model(&model)?;
    let mut cells = Vec::new();
    for &p in &a.fractions {
        for &peak in &a.peaks {
            for &seed in &cfg.seeds {
                for mode in [SchedulerMode::With, SchedulerMode::Without] {
                    cells.push((p, peak, seed, mode));
                }
            }
        }
    }
    let results = cells
        .par_iter()
        .map(|&(p, peak, seed, mode)| {
            let profile = LoadProfile { peak_requests: peak, poor_fraction: p, pattern: a.pattern, seed };
            let (samples, report) = simulate_load(
                &profile,
                &a.thresholds,
                &a.server,
                mode,
                &mut RateFollowerPolicy,
                &mut ModelRatePolicy::new(&model),
            )?;
            Ok((ApcRow { poor_fraction: p, peak, mode, seed, report }, samples))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut delay_rows = Vec::new();
    for (r, samples) in &results {
        let key = [r.poor_fraction.to_string(), r.peak.to_string(), r.mode.to_string(), r.seed.to_string()];
        let rep = &r.report;
        let mut row = key.to_vec();
        row.extend([
            rep.requests.to_string(),
            rep.model_requests.to_string(),
            rep.lightweight_requests.to_string(),
            rep.downgrades.to_string(),
            rep.batches.to_string(),
            rep.mean_delay_ms.to_string(),
            rep.p50_delay_ms.to_string(),
            rep.p95_delay_ms.to_string(),
            rep.p99_delay_ms.to_string(),
            rep.max_delay_ms.to_string(),
            rep.model_share.to_string(),
            rep.mape.to_string(),
        ]);
        rows.push(row);
        for s in samples {
            let mut d = key.to_vec();
            d.extend([
                s.flow_id.to_string(),
                s.arrival_ms.to_string(),
                s.delay_ms.to_string(),
                s.route.to_string(),
                s.rate.to_string(),
            ]);
            delay_rows.push(d);
        }
    }
    write_file(
        &a.report,
        &csv_bytes(
            &[
                "p",
                "peak",
                "mode",
                "seed",
                "requests",
                "model_requests",
                "lightweight_requests",
                "downgrades",
                "batches",
                "mean_delay_ms",
                "p50_delay_ms",
                "p95_delay_ms",
                "p99_delay_ms",
                "max_delay_ms",
                "model_share",
                "mape",
            ],
            &rows,
        )?,
    )?;
    write_file(
        &a.delays,
        &csv_bytes(&["p", "peak", "mode", "seed", "flow_id", "arrival_ms", "delay_ms", "route", "rate"], &delay_rows)?,
    )?;
    log::info!("apc bench: {} cells -> {}", rows.len(), a.report.display());
    Ok(results.into_iter().map(|(r, _)| r).collect())
}

pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    for p in &cfg.report.inputs {
        require_file(p, "report.inputs")?;
    }
    crate::report::render(&cfg.report.inputs, &cfg.report.output)
}

pub fn cmd_serve(cfg: &ExperimentConfig) -> Result<()> {
    let s = &cfg.serve;
    require_file(&s.checkpoint, "serve.checkpoint")?;
    let model = load_checkpoint(&s.checkpoint)?;
    let server = ModelServer::start(
        model,
        ServerConfig { batch: cfg.apc.server.clone(), thresholds: s.scheduler.then_some(cfg.apc.thresholds) },
    )?;
    let listener = std::net::TcpListener::bind(&s.listen).map_err(Error::io(Path::new(&s.listen)))?;
    log::info!("serving on {}", s.listen);
    serve_tcp(listener, Arc::new(server))
}
