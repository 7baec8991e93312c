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

use std::path::Path;
use std::process::{Command, Output};

fn tb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tb")).current_dir(dir).env("RUST_LOG", "warn").args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const CC: &str = "[experiment]\ntask = cc\nseeds = 1 2\noutput = out\n\
                  [collect]\nepisodes = 2\nsteps = 80\n\
                  [train]\nepochs = 2\n\
                  [evaluate]\nenvs = stable\npolicies = rate-follower\nsteps = 80\ncheckpoint = out/model.tbm\n\
                  [apc]\nfractions = 0.5\npeaks = 64 200\n\
                  [report]\ninputs = out/evaluate.csv out/apc.csv out/train_log.csv\n";

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cc.cfg"), CC).unwrap();
    for cmd in ["collect", "train", "evaluate", "apc-bench", "report"] {
        let o = tb(dir.path(), &[cmd, "--config", "cc.cfg"]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("out");
    for f in ["dataset.jsonl", "model.tbm", "train_log.csv", "evaluate.csv", "evaluate_seeds.csv", "apc.csv", "apc_delays.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let figs = std::fs::read_dir(out.join("figures")).unwrap().count();
    assert!(figs >= 5, "{figs} figures");
}

#[test]
fn config_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&tb(d, &["collect"])), 1);
    assert_eq!(code(&tb(d, &["collect", "--config", "missing.cfg"])), 1);
    std::fs::write(d.join("x.cfg"), "[experiment]\ntask = abr\ncolour = blue\n").unwrap();
    let o = tb(d, &["collect", "--config", "x.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.colour"));
    std::fs::write(d.join("ok.cfg"), "[experiment]\ntask = abr\noutput = o\n").unwrap();
    assert_eq!(code(&tb(d, &["collect", "--config", "ok.cfg", "--set", "collect.episodes=zero"])), 1);
    assert_eq!(code(&tb(d, &["train", "--config", "ok.cfg"])), 1);
    assert_eq!(code(&tb(d, &["frobnicate"])), 1);
    assert_eq!(code(&tb(d, &["--help"])), 0);
}

#[test]
fn corrupt_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.jsonl"), "{\"schema\":\"tb-exp-v1\",\"tag\":\"abr\",\"trajectories\":3}\n").unwrap();
    std::fs::write(d.join("bad.tbm"), "tb-model-v1\ngarbage\n").unwrap();
    std::fs::write(d.join("a.cfg"), "[experiment]\ntask = abr\noutput = o\n[train]\ndataset = bad.jsonl\n").unwrap();
    let o = tb(d, &["train", "--config", "a.cfg"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl"));
    let o = tb(d, &["evaluate", "--config", "a.cfg", "--set", "evaluate.checkpoint=bad.tbm"]);
    assert_eq!(code(&o), 2);
    let o = tb(d, &["serve", "--config", "a.cfg", "--set", "serve.checkpoint=bad.tbm"]);
    assert_eq!(code(&o), 2);
}
