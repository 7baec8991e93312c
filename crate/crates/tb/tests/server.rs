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

mod common;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use common::{cc_model, SharedBuf};
use tb::protocol::{format_request, parse_reply, read_frame, write_frame, ErrorCode, Frame, Reply};
use tb::server::{check_model, exchange, model_server_loop, serve_tcp, ModelServer, ServerConfig};
use tb_core::apc::{gen_population, BatchServerConfig, SchedulerThresholds};
use tb_core::trainer::{infer_cil, ModelConfig, Normalizer, Objective, SequencePolicyModel};
use tb_core::{TaskAction, TaskKind};

fn config(thresholds: bool) -> ServerConfig {
    ServerConfig {
        batch: BatchServerConfig { max_wait_ms: 2.0, ..BatchServerConfig::default() },
        thresholds: thresholds.then(SchedulerThresholds::default),
    }
}

fn framed(payloads: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in payloads {
        write_frame(&mut out, p).unwrap();
    }
    out
}

fn replies(bytes: &[u8]) -> Vec<Reply> {
    let mut r = Cursor::new(bytes);
    let mut out = Vec::new();
    loop {
        match read_frame(&mut r).unwrap() {
            Frame::Payload(p) => out.push(parse_reply(&p).unwrap()),
            Frame::Eof => return out,
            Frame::Oversized(n) => panic!("server wrote an oversized frame ({n})"),
        }
    }
}

fn expected_rate(model: &SequencePolicyModel, state: &tb_core::cc::FlowState) -> f64 {
    match infer_cil(model, &[], &state.to_task_state()).unwrap() {
        TaskAction::SendRate { mbps } => mbps,
        a => panic!("unexpected action {a:?}"),
    }
}

#[test]
fn every_request_gets_its_own_reply() {
    let model = cc_model();
    let pop = gen_population(300, 0.5, &SchedulerThresholds::default(), 3).unwrap();
    let payloads: Vec<Vec<u8>> =
        pop.iter().enumerate().map(|(i, m)| format_request(&format!("r-{i}"), &m.state).into_bytes()).collect();
    let out = SharedBuf::default();
    let stats = model_server_loop(model.clone(), config(false), Cursor::new(framed(&payloads)), out.clone()).unwrap();
    let got = replies(&out.bytes());
    assert_eq!(got.len(), pop.len());
    assert_eq!(stats.frames, 300);
    assert_eq!(stats.replies, 300);
    assert_eq!(stats.model + stats.lightweight, 300);
    let by_id: BTreeMap<&str, &Reply> = got.iter().map(|r| (r.id().unwrap(), r)).collect();
    assert_eq!(by_id.len(), pop.len(), "ids must be echoed exactly once");
    for (i, m) in pop.iter().enumerate() {
        let id = format!("r-{i}");
        match by_id[id.as_str()] {
            Reply::Act { rate, .. } if stats.downgrades == 0 => {
                assert_eq!(rate.to_bits(), expected_rate(&model, &m.state).to_bits(), "{id}")
            }
            Reply::Act { .. } => {}
            r => panic!("{id}: {r:?}"),
        }
    }
}

#[test]
fn scheduler_answers_good_flows_with_their_request_rate() {
    let model = cc_model();
    let th = SchedulerThresholds::default();
    let pop = gen_population(200, 0.3, &th, 9).unwrap();
    let payloads: Vec<Vec<u8>> =
        pop.iter().enumerate().map(|(i, m)| format_request(&i.to_string(), &m.state).into_bytes()).collect();
    let out = SharedBuf::default();
    let stats = model_server_loop(model.clone(), config(true), Cursor::new(framed(&payloads)), out.clone()).unwrap();
    let good = pop.iter().filter(|m| m.condition == tb_core::apc::Condition::Good).count() as u64;
    assert_eq!(stats.lightweight - stats.downgrades, good);
    for r in replies(&out.bytes()) {
        let Reply::Act { id, rate } = r else { panic!("{r:?}") };
        let m = &pop[id.parse::<usize>().unwrap()];
        if m.condition == tb_core::apc::Condition::Good {
            assert_eq!(rate, m.state.request_rate);
        } else if stats.downgrades == 0 {
            assert_eq!(rate.to_bits(), expected_rate(&model, &m.state).to_bits());
        }
    }
}

#[test]
fn malformed_frames_are_answered_and_service_continues() {
    let state = gen_population(1, 0.0, &SchedulerThresholds::default(), 1).unwrap()[0].state;
    let good = format_request("ok-1", &state);
    let cases: Vec<(Vec<u8>, Option<&str>, ErrorCode)> = vec![
        (vec![0xff, 0xfe], None, ErrorCode::BadUtf8),
        (b"GET / HTTP/1.1".to_vec(), None, ErrorCode::BadVerb),
        (b"REQ bad/id rtt_ms=1".to_vec(), None, ErrorCode::BadId),
        (good.replacen("ok-1", "e1", 1).replacen(" rtt_ms=", " rtt_ms ", 1).into_bytes(), Some("e1"), ErrorCode::BadField),
        (format!("{} color=3", good.replacen("ok-1", "e2", 1)).into_bytes(), Some("e2"), ErrorCode::UnknownFeature),
        (format!("{} rtt_ms=3", good.replacen("ok-1", "e3", 1)).into_bytes(), Some("e3"), ErrorCode::DuplicateFeature),
        (b"REQ e4 rtt_ms=3".to_vec(), Some("e4"), ErrorCode::MissingFeature),
        (good.replacen("ok-1", "e5", 1).replacen("rtt_ms=", "rtt_ms=NaN", 1).into_bytes(), Some("e5"), ErrorCode::BadValue),
        (good.replacen("ok-1", "e6", 1).replacen("loss_rate=", "loss_rate=-", 1).into_bytes(), Some("e6"), ErrorCode::InvalidState),
    ];
    let mut bytes = Vec::new();
    for (p, _, _) in &cases {
        write_frame(&mut bytes, p).unwrap();
    }
    bytes.extend_from_slice(&(70_000u32).to_be_bytes());
    bytes.extend(std::iter::repeat(b'x').take(70_000));
    write_frame(&mut bytes, good.as_bytes()).unwrap();

    let out = SharedBuf::default();
    let stats = model_server_loop(cc_model(), config(false), Cursor::new(bytes), out.clone()).unwrap();
    let got = replies(&out.bytes());
    assert_eq!(got.len(), cases.len() + 2);
    for (r, (_, id, code)) in got.iter().zip(&cases) {
        assert_eq!(r, &Reply::Err { id: id.map(str::to_string), code: *code });
    }
    assert_eq!(got[cases.len()], Reply::Err { id: None, code: ErrorCode::FrameTooLarge });
    assert!(matches!(&got[cases.len() + 1], Reply::Act { id, .. } if id == "ok-1"));
    assert_eq!(stats.errors, cases.len() as u64 + 1);
}

#[test]
fn non_cc_models_are_refused() {
    let cfg = ModelConfig {
        tag: TaskKind::Abr,
        objective: Objective::Dt,
        window: 2,
        embed_width: 4,
        hidden_width: 4,
        state_dim: 3,
        num_actions: 4,
    };
    let abr = SequencePolicyModel::new(cfg, Normalizer::identity(3), 1).unwrap();
    assert!(check_model(&abr).is_err());
    let err = ModelServer::start(abr, config(false)).err().unwrap();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn tcp_clients_are_served_concurrently() {
    let server = Arc::new(ModelServer::start(cc_model(), config(true)).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let s = Arc::clone(&server);
    thread::spawn(move || serve_tcp(listener, s));

    let clients: Vec<_> = (0..4u64)
        .map(|c| {
            thread::spawn(move || {
                let pop = gen_population(150, 0.6, &SchedulerThresholds::default(), 100 + c).unwrap();
                let payloads: Vec<Vec<u8>> = pop
                    .iter()
                    .enumerate()
                    .map(|(i, m)| format_request(&format!("c{c}.{i}"), &m.state).into_bytes())
                    .collect();
                let got = exchange(TcpStream::connect(addr).unwrap(), payloads).unwrap();
                let mut ids: Vec<String> = got.iter().map(|r| r.id().unwrap().to_string()).collect();
                ids.sort();
                let mut want: Vec<String> = (0..150).map(|i| format!("c{c}.{i}")).collect();
                want.sort();
                assert_eq!(ids, want);
                assert!(got.iter().all(|r| matches!(r, Reply::Act { rate, .. } if rate.is_finite() && *rate >= 0.0)));
            })
        })
        .collect();
    for c in clients {
        c.join().unwrap();
    }
    let stats = server.stats();
    assert_eq!(stats.frames, 600);
    assert_eq!(stats.replies, 600);
    assert_eq!(stats.errors, 0);
}
