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

//! Experiment configuration: plain-text `key = value` lines grouped under
//! `[section]` headers. `#` starts a comment. Keys are addressed as
//! `section.key`, both in the file and in `--set section.key=value`
//! overrides. Lists are whitespace separated; numeric lists also accept
//! commas.
//!
//! ```text
//! [experiment]
//! task = abr
//! seeds = 1 2 3
//! output = out/abr
//!
//! [collect]
//! envs = train
//! policy = mpc:horizon=5
//! episodes = 20
//!
//! [train]
//! epochs = 20
//!
//! [evaluate]
//! envs = default-test ood1
//! policies = bba mpc
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tb_core::abr::AbrEnvId;
use tb_core::apc::{
    ArrivalPattern, BatchServerConfig, LatencyModel, SchedulerThresholds, DEFAULT_BATCH_SIZE,
    DEFAULT_INFERENCE_MS, DEFAULT_MAX_WAIT_MS, DEFAULT_QUEUE_CAPACITY,
};
use tb_core::cc::CcEnvId;
use tb_core::cjs::CjsEnvId;
use tb_core::policies::PolicyDescriptor;
use tb_core::trainer::{Objective, TrainingConfig};
use tb_core::TaskKind;

use crate::error::{Error, Result};

/// Flat `section.key -> value` map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(format!("line {}: unterminated section header", i + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected 'key = value'", i + 1)))?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(RawConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("override '{assignment}' is not key=value")))?;
        self.entries.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Tracks which keys were consumed so leftovers can be reported as unknown.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: BTreeSet<&'static str>,
}

impl Reader<'_> {
    fn str(&mut self, key: &'static str) -> Option<&str> {
        self.used.insert(key);
        self.raw.get(key)
    }

    fn parse<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| cfg_err(format!("{key}: '{v}': {e}"))),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| cfg_err(format!("{key}: '{v}': {e}"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &'static str, commas: bool, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.str(key) else { return Ok(default) };
        v.split(|c: char| c.is_whitespace() || (commas && c == ','))
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| cfg_err(format!("{key}: '{s}': {e}"))))
            .collect()
    }

    fn path(&mut self, key: &'static str, default: PathBuf) -> PathBuf {
        self.str(key).map_or(default, PathBuf::from)
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&str> =
            self.raw.entries.keys().map(String::as_str).filter(|k| !self.used.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(cfg_err(format!("unknown key(s): {}", unknown.join(", "))))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectConfig {
    pub envs: Vec<String>,
    pub policy: PolicyDescriptor,
    pub episodes: usize,
    /// CC episode length in 100 ms steps; the full trace when absent.
    pub steps: Option<usize>,
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateConfig {
    pub envs: Vec<String>,
    pub policies: Vec<PolicyDescriptor>,
    /// Adds a `model` row per environment when present.
    pub checkpoint: Option<PathBuf>,
    pub episodes: usize,
    pub steps: Option<usize>,
    pub report: PathBuf,
    pub seed_report: PathBuf,
    pub chunk_log: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApcConfig {
    pub checkpoint: PathBuf,
    pub fractions: Vec<f64>,
    pub peaks: Vec<usize>,
    pub pattern: ArrivalPattern,
    pub thresholds: SchedulerThresholds,
    pub server: BatchServerConfig,
    pub report: PathBuf,
    pub delays: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub listen: String,
    pub checkpoint: PathBuf,
    pub scheduler: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
    pub apc: ApcConfig,
    pub report: ReportConfig,
    pub serve: ServeConfig,
}

fn default_policy(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Abr => "mpc",
        TaskKind::Cjs => "fifo",
        TaskKind::Cc => "probe",
    }
}

fn default_eval_policies(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Abr => &["bba", "mpc"],
        TaskKind::Cjs => &["fifo", "fair"],
        TaskKind::Cc => &["rate-follower", "adaptive-proxy"],
    }
}

fn default_eval_envs(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Abr | TaskKind::Cjs => &["default-test", "ood1", "ood2", "ood3"],
        TaskKind::Cc => &["default-test", "stable"],
    }
}

/// Rejects environment ids the task does not know.
pub fn check_env(task: TaskKind, env: &str) -> Result<()> {
    let ok = match task {
        TaskKind::Abr => AbrEnvId::from_str(env).is_ok(),
        TaskKind::Cjs => CjsEnvId::from_str(env).is_ok(),
        TaskKind::Cc => CcEnvId::from_str(env).is_ok(),
    };
    if ok {
        Ok(())
    } else {
        Err(cfg_err(format!("unknown {task} environment '{env}'")))
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut r = Reader { raw, used: BTreeSet::new() };
        let task: TaskKind =
            r.str("experiment.task").ok_or_else(|| cfg_err("experiment.task is required"))?.parse().map_err(
                |e: tb_core::Error| cfg_err(format!("experiment.task: {e}")),
            )?;
        let seeds: Vec<u64> = r.list("experiment.seeds", true, vec![1, 2, 3])?;
        if seeds.is_empty() {
            return Err(cfg_err("experiment.seeds must not be empty"));
        }
        let output = r.path("experiment.output", PathBuf::from("out"));

        let policy: PolicyDescriptor = r.parse("collect.policy", default_policy(task).parse()?)?;
        let collect = CollectConfig {
            envs: r.list("collect.envs", false, vec!["train".to_string()])?,
            policy,
            episodes: r.parse("collect.episodes", 10)?,
            steps: r.opt("collect.steps")?,
            dataset: r.path("collect.dataset", output.join("dataset.jsonl")),
        };

        let mut training = TrainingConfig::for_task(task, seeds[0]);
        training.objective = r.parse("train.objective", training.objective)?;
        training.window = r.parse("train.window", training.window)?;
        training.embed_width = r.parse("train.embed_width", training.embed_width)?;
        training.hidden_width = r.parse("train.hidden_width", training.hidden_width)?;
        training.learning_rate = r.parse("train.learning_rate", training.learning_rate)?;
        training.batch_size = r.parse("train.batch_size", training.batch_size)?;
        training.epochs = r.parse("train.epochs", training.epochs)?;
        training.seed = r.parse("train.seed", training.seed)?;
        training.num_actions = r.opt("train.num_actions")?;
        let train = TrainConfig {
            dataset: r.path("train.dataset", collect.dataset.clone()),
            checkpoint: r.path("train.checkpoint", output.join("model.tbm")),
            log: r.path("train.log", output.join("train_log.csv")),
            training,
        };

        let evaluate = EvaluateConfig {
            envs: r.list("evaluate.envs", false, strings(default_eval_envs(task)))?,
            policies: r.list(
                "evaluate.policies",
                false,
                default_eval_policies(task).iter().map(|p| p.parse()).collect::<tb_core::Result<_>>()?,
            )?,
            checkpoint: r.str("evaluate.checkpoint").map(PathBuf::from),
            episodes: r.parse("evaluate.episodes", 1)?,
            steps: r.opt("evaluate.steps")?,
            report: r.path("evaluate.report", output.join("evaluate.csv")),
            seed_report: r.path("evaluate.seed_report", output.join("evaluate_seeds.csv")),
            chunk_log: r.path("evaluate.chunk_log", output.join("evaluate_chunks.csv")),
        };

        let latency = match r.str("apc.latency_table") {
            Some(t) => {
                let mut rows = Vec::new();
                for cell in t.split_whitespace() {
                    let (b, ms) =
                        cell.split_once(':').ok_or_else(|| cfg_err(format!("apc.latency_table: '{cell}' is not B:ms")))?;
                    let b: usize = b.parse().map_err(|_| cfg_err(format!("apc.latency_table: bad batch '{b}'")))?;
                    let ms: f64 = ms.parse().map_err(|_| cfg_err(format!("apc.latency_table: bad latency '{ms}'")))?;
                    rows.push((b, ms));
                }
                LatencyModel::Table(rows)
            }
            None => LatencyModel::Constant(r.parse("apc.latency_ms", DEFAULT_INFERENCE_MS)?),
        };
        let apc = ApcConfig {
            checkpoint: r.path("apc.checkpoint", train.checkpoint.clone()),
            fractions: r.list("apc.fractions", true, vec![0.2, 0.8])?,
            peaks: r.list("apc.peaks", true, vec![64, 128, 256, 512, 1000, 2000])?,
            pattern: r.parse("apc.pattern", ArrivalPattern::Burst)?,
            thresholds: SchedulerThresholds {
                rtt_ms: r.parse("apc.rtt_ms", 50.0)?,
                loss: r.parse("apc.loss", 0.05)?,
                rate_ratio: r.parse("apc.rate_ratio", 0.95)?,
            },
            server: BatchServerConfig {
                batch_size: r.parse("apc.batch_size", DEFAULT_BATCH_SIZE)?,
                max_wait_ms: r.parse("apc.max_wait_ms", DEFAULT_MAX_WAIT_MS)?,
                latency,
                queue_capacity: r.parse("apc.queue_capacity", DEFAULT_QUEUE_CAPACITY)?,
            },
            report: r.path("apc.report", output.join("apc.csv")),
            delays: r.path("apc.delays", output.join("apc_delays.csv")),
        };

        let report = ReportConfig {
            inputs: r.list("report.inputs", false, vec![evaluate.report.clone()])?,
            output: r.path("report.output", output.join("figures")),
        };
        let serve = ServeConfig {
            listen: r.str("serve.listen").unwrap_or("127.0.0.1:7878").to_string(),
            checkpoint: r.path("serve.checkpoint", train.checkpoint.clone()),
            scheduler: r.parse("serve.scheduler", true)?,
        };
        r.finish()?;

        let cfg = ExperimentConfig { task, seeds, output, collect, train, evaluate, apc, report, serve };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.set(o)?;
        }
        Self::from_raw(&raw)
    }

    /// Value checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: tb_core::Error| cfg_err(e.to_string());
        if self.collect.policy.tag != self.task {
            return Err(cfg_err(format!(
                "collect.policy '{}' is a {} policy, experiment task is {}",
                self.collect.policy, self.collect.policy.tag, self.task
            )));
        }
        for p in &self.evaluate.policies {
            if p.tag != self.task {
                return Err(cfg_err(format!("evaluate.policies: '{p}' is a {} policy", p.tag)));
            }
        }
        for e in self.collect.envs.iter().chain(&self.evaluate.envs) {
            check_env(self.task, e)?;
        }
        if self.collect.envs.is_empty() || self.evaluate.envs.is_empty() {
            return Err(cfg_err("environment lists must not be empty"));
        }
        if self.collect.episodes == 0 || self.evaluate.episodes == 0 {
            return Err(cfg_err("episode counts must be >= 1"));
        }
        if self.collect.steps == Some(0) || self.evaluate.steps == Some(0) {
            return Err(cfg_err("episode steps must be >= 1"));
        }
        self.train.training.validate().map_err(wrap)?;
        let objective_ok = match self.task {
            TaskKind::Cc => self.train.training.objective == Objective::Cil,
            _ => self.train.training.objective == Objective::Dt,
        };
        if !objective_ok {
            return Err(cfg_err(format!(
                "train.objective '{}' does not apply to {}",
                self.train.training.objective, self.task
            )));
        }
        self.apc.thresholds.validate().map_err(wrap)?;
        self.apc.server.validate().map_err(wrap)?;
        if self.apc.fractions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(cfg_err("apc.fractions must lie in [0, 1]"));
        }
        if self.apc.fractions.is_empty() || self.apc.peaks.is_empty() || self.apc.peaks.contains(&0) {
            return Err(cfg_err("apc.fractions and apc.peaks must be non-empty with peaks >= 1"));
        }
        Ok(())
    }
}

/// Config-level check that an input file exists.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(cfg_err(format!("{what} '{}' does not exist", path.display())))
    }
}
