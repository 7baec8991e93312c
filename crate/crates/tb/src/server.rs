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

//! Batched model server speaking the frame protocol of [`crate::protocol`].
//!
//! Connection readers parse frames and either answer at once (errors,
//! lightweight decisions, overflow downgrades) or hand the request to a
//! single batcher thread. The batcher releases a batch when `batch_size`
//! requests wait or the oldest has waited `max_wait_ms`, runs the model on
//! it and writes replies in queue order.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tb_core::apc::{classify, BatchServerConfig, Condition, ModelRatePolicy, RatePolicy, SchedulerThresholds};
use tb_core::cc::FlowState;
use tb_core::policies::rate_follower;
use tb_core::trainer::{Objective, SequencePolicyModel};
use tb_core::TaskKind;

use crate::error::{Error, Result};
use crate::protocol::{format_reply, parse_request, read_frame, write_frame, ErrorCode, Frame, Reply};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub batch: BatchServerConfig,
    /// Answers Good requests with the rate follower when set; otherwise
    /// every request goes to the model.
    pub thresholds: Option<SchedulerThresholds>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub frames: u64,
    pub replies: u64,
    pub errors: u64,
    pub lightweight: u64,
    pub model: u64,
    pub downgrades: u64,
    pub batches: u64,
}

#[derive(Default)]
struct Counters {
    frames: AtomicU64,
    replies: AtomicU64,
    errors: AtomicU64,
    lightweight: AtomicU64,
    model: AtomicU64,
    downgrades: AtomicU64,
    batches: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> ServeStats {
        let g = |a: &AtomicU64| a.load(Ordering::SeqCst);
        ServeStats {
            frames: g(&self.frames),
            replies: g(&self.replies),
            errors: g(&self.errors),
            lightweight: g(&self.lightweight),
            model: g(&self.model),
            downgrades: g(&self.downgrades),
            batches: g(&self.batches),
        }
    }
}

type Sink = Arc<Mutex<dyn Write + Send>>;

struct Job {
    id: String,
    state: FlowState,
    sink: Sink,
    arrived: Instant,
}

fn send(sink: &Sink, counters: &Counters, reply: &Reply) {
    if matches!(reply, Reply::Err { .. }) {
        counters.errors.fetch_add(1, Ordering::SeqCst);
    }
    counters.replies.fetch_add(1, Ordering::SeqCst);
    let mut w = sink.lock().unwrap_or_else(|p| p.into_inner());
    // A vanished client cannot be told anything; its reply still counts.
    let _ = write_frame(&mut *w, format_reply(reply).as_bytes()).and_then(|_| w.flush());
}

pub struct ModelServer {
    tx: Option<SyncSender<Job>>,
    batcher: Option<JoinHandle<()>>,
    counters: Arc<Counters>,
    thresholds: Option<SchedulerThresholds>,
}

/// Refuses models that cannot answer rate requests.
pub fn check_model(model: &SequencePolicyModel) -> Result<()> {
    let c = model.config();
    if c.tag != TaskKind::Cc || c.objective != Objective::Cil {
        return Err(Error::Runtime(format!(
            "checkpoint is a {} {} model; the server needs a cc cil model",
            c.tag, c.objective
        )));
    }
    Ok(())
}

impl ModelServer {
    pub fn start(model: SequencePolicyModel, cfg: ServerConfig) -> Result<Self> {
        check_model(&model)?;
        cfg.batch.validate()?;
        if let Some(th) = &cfg.thresholds {
            th.validate()?;
        }
        let counters = Arc::new(Counters::default());
        let (tx, rx) = mpsc::sync_channel::<Job>(cfg.batch.queue_capacity);
        let c = Arc::clone(&counters);
        let batch = cfg.batch.clone();
        let batcher = thread::spawn(move || {
            let b = batch.batch_size;
            let max_wait = Duration::from_secs_f64(batch.max_wait_ms / 1000.0);
            let mut queue: VecDeque<Job> = VecDeque::new();
            let dispatch = |queue: &mut VecDeque<Job>| {
                let n = queue.len().min(b);
                let jobs: Vec<Job> = queue.drain(..n).collect();
                let states: Vec<FlowState> = jobs.iter().map(|j| j.state).collect();
                c.batches.fetch_add(1, Ordering::SeqCst);
                match ModelRatePolicy::new(&model).decide_batch(&states) {
                    Ok(rates) => {
                        for (j, rate) in jobs.iter().zip(rates) {
                            send(&j.sink, &c, &Reply::Act { id: j.id.clone(), rate });
                        }
                    }
                    Err(e) => {
                        log::error!("batch inference failed: {e}");
                        for j in &jobs {
                            send(&j.sink, &c, &Reply::Err { id: Some(j.id.clone()), code: ErrorCode::Internal });
                        }
                    }
                }
            };
            loop {
                let next = match queue.front() {
                    None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                    Some(oldest) => {
                        let deadline = oldest.arrived + max_wait;
                        let now = Instant::now();
                        if now >= deadline {
                            dispatch(&mut queue);
                            continue;
                        }
                        rx.recv_timeout(deadline - now)
                    }
                };
                match next {
                    Ok(job) => {
                        queue.push_back(job);
                        while queue.len() >= b {
                            dispatch(&mut queue);
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => dispatch(&mut queue),
                    Err(RecvTimeoutError::Disconnected) => {
                        while !queue.is_empty() {
                            dispatch(&mut queue);
                        }
                        break;
                    }
                }
            }
        });
        Ok(ModelServer { tx: Some(tx), batcher: Some(batcher), counters, thresholds: cfg.thresholds })
    }

    /// Serves one connection until its reader reaches end of stream. Replies
    /// to requests still queued are written after this returns.
    pub fn handle_connection<R: Read, W: Write + Send + 'static>(&self, mut reader: R, writer: W) -> io::Result<()> {
        let sink: Sink = Arc::new(Mutex::new(writer));
        let c = &self.counters;
        let tx = self.tx.as_ref().expect("server is running");
        loop {
            let payload = match read_frame(&mut reader)? {
                Frame::Eof => return Ok(()),
                Frame::Oversized(_) => {
                    c.frames.fetch_add(1, Ordering::SeqCst);
                    send(&sink, c, &Reply::Err { id: None, code: ErrorCode::FrameTooLarge });
                    continue;
                }
                Frame::Payload(p) => p,
            };
            c.frames.fetch_add(1, Ordering::SeqCst);
            let req = match parse_request(&payload) {
                Ok(r) => r,
                Err(rej) => {
                    send(&sink, c, &Reply::Err { id: rej.id, code: rej.code });
                    continue;
                }
            };
            if let Some(th) = &self.thresholds {
                if classify(&req.state, th) == Condition::Good {
                    c.lightweight.fetch_add(1, Ordering::SeqCst);
                    send(&sink, c, &Reply::Act { id: req.id, rate: rate_follower(&req.state) });
                    continue;
                }
            }
            let job = Job { id: req.id, state: req.state, sink: Arc::clone(&sink), arrived: Instant::now() };
            match tx.try_send(job) {
                Ok(()) => {
                    c.model.fetch_add(1, Ordering::SeqCst);
                }
                Err(TrySendError::Full(job)) | Err(TrySendError::Disconnected(job)) => {
                    c.downgrades.fetch_add(1, Ordering::SeqCst);
                    c.lightweight.fetch_add(1, Ordering::SeqCst);
                    send(&sink, c, &Reply::Act { id: job.id, rate: rate_follower(&job.state) });
                }
            }
        }
    }

    pub fn stats(&self) -> ServeStats {
        self.counters.snapshot()
    }

    /// Drains the queue, stops the batcher and returns the final counters.
    pub fn shutdown(mut self) -> ServeStats {
        self.stop();
        self.counters.snapshot()
    }

    fn stop(&mut self) {
        self.tx.take();
        if let Some(h) = self.batcher.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ModelServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serves a single transport to completion: every frame read gets exactly
/// one reply before this returns.
pub fn model_server_loop<R: Read, W: Write + Send + 'static>(
    model: SequencePolicyModel,
    cfg: ServerConfig,
    reader: R,
    writer: W,
) -> Result<ServeStats> {
    let server = ModelServer::start(model, cfg)?;
    let res = server.handle_connection(reader, writer);
    let stats = server.shutdown();
    res.map_err(|e| Error::Runtime(format!("transport: {e}")))?;
    Ok(stats)
}

/// Accepts connections forever, one reader thread per connection.
pub fn serve_tcp(listener: TcpListener, server: Arc<ModelServer>) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::Runtime(format!("accept: {e}")))?;
        let server = Arc::clone(&server);
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            match stream.try_clone() {
                Ok(w) => {
                    if let Err(e) = server.handle_connection(stream, w) {
                        log::warn!("connection {peer}: {e}");
                    }
                }
                Err(e) => log::warn!("connection {peer}: {e}"),
            }
        });
    }
    Ok(())
}

/// Client side: sends every payload on `stream`, then reads one reply per
/// payload. Writing happens on a separate thread so large bursts cannot
/// deadlock against the server's replies.
pub fn exchange(stream: TcpStream, payloads: Vec<Vec<u8>>) -> io::Result<Vec<Reply>> {
    let n = payloads.len();
    let mut w = stream.try_clone()?;
    let writer = thread::spawn(move || -> io::Result<()> {
        for p in &payloads {
            write_frame(&mut w, p)?;
        }
        w.flush()
    });
    let mut r = io::BufReader::new(stream);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        match read_frame(&mut r)? {
            Frame::Payload(p) => {
                out.push(crate::protocol::parse_reply(&p).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?)
            }
            _ => return Err(io::ErrorKind::UnexpectedEof.into()),
        }
    }
    writer.join().map_err(|_| io::Error::other("writer thread panicked"))??;
    Ok(out)
}
