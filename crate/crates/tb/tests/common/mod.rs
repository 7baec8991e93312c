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

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use tb_core::cc::{make_cc_env, CcEnvId};
use tb_core::rollout::{baseline, run_cc_episode, PolicyContext};
use tb_core::trainer::{train, SequencePolicyModel, TrainingConfig};
use tb_core::{EnvDescriptor, ExperienceDataset, TaskKind};

/// Small CC model trained on probe data.
pub fn cc_model() -> SequencePolicyModel {
    let trajs = (0..4)
        .map(|seed| {
            let mut env = make_cc_env(CcEnvId::Train, seed);
            let mut p = baseline(&"probe".parse().unwrap(), &PolicyContext::for_cc(&env), seed).unwrap();
            let desc = EnvDescriptor { env_id: "train".into(), seed };
            run_cc_episode(&mut env, p.as_mut(), seed, desc, Some(60)).unwrap().trajectory
        })
        .collect();
    let ds = ExperienceDataset::new(TaskKind::Cc, trajs, BTreeMap::new()).unwrap();
    train(&ds, &TrainingConfig { epochs: 3, ..TrainingConfig::for_task(TaskKind::Cc, 5) }).unwrap().0
}

/// Writer whose bytes stay readable after it is moved into a server.
#[derive(Clone, Default)]
pub struct SharedBuf(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
