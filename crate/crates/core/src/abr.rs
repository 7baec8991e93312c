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

//! Chunk-level adaptive bitrate streaming simulator.
//!
//! A video is a sequence of fixed-duration chunks, each available at every
//! rung of a bitrate ladder. Downloading a chunk takes as long as the
//! bandwidth trace needs to deliver its size; playback drains the buffer in
//! the meantime. Rebuffering happens when the buffer runs dry before the
//! download completes.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experience::{TaskKind, TaskState};
use crate::rng::{mix_seed, stream_rng, streams};
use crate::trace::{BandwidthTrace, TracePoint};

/// Rebuffering penalty per second of stall.
pub const REBUF_PENALTY: f64 = 4.3;
/// Penalty per Mbps of bitrate change between consecutive chunks.
pub const SMOOTHNESS_PENALTY: f64 = 1.0;

pub const DEFAULT_LADDER: [f64; 6] = [0.3, 0.75, 1.2, 1.85, 2.85, 4.3];
pub const CHUNK_SECONDS: f64 = 4.0;
pub const DEFAULT_NUM_CHUNKS: usize = 48;
pub const BUFFER_CAP: f64 = 60.0;
pub const HISTORY_LEN: usize = 8;
/// Chunk size multiplier of the large-chunk synthetic video.
pub const SYNTH_VIDEO_SCALE: f64 = 1.8;

/// Measured-style trace pool split: train / validation / test.
pub const MEASURED_TRAIN: core::ops::Range<u32> = 0..235;
pub const MEASURED_VALIDATION: core::ops::Range<u32> = 235..385;
pub const MEASURED_TEST: core::ops::Range<u32> = 385..485;
pub const SYNTH_TRACE_COUNT: u32 = 100;
const FAMILY_TRACE_SECONDS: usize = 600;
const FAMILY_SEED: u64 = 0x7b_a1_5e_ed;

/// Per-chunk quality of experience: bitrate minus the rebuffering and
/// bitrate-switch penalties. Bitrates in Mbps, rebuffering in seconds.
pub fn qoe(bitrate: f64, rebuf: f64, prev_bitrate: f64) -> Result<f64> {
    if !(rebuf >= 0.0) || !rebuf.is_finite() {
        return Err(invalid(format!("rebuffer time {rebuf} must be finite and >= 0")));
    }
    if !(bitrate >= 0.0 && prev_bitrate >= 0.0) || !bitrate.is_finite() || !prev_bitrate.is_finite() {
        return Err(invalid("bitrates must be finite and >= 0"));
    }
    Ok(bitrate - REBUF_PENALTY * rebuf - SMOOTHNESS_PENALTY * (bitrate - prev_bitrate).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub chunk_duration: f64,
    /// Mbps, strictly increasing.
    pub ladder: Vec<f64>,
    /// Mbit, `[chunk][ladder index]`.
    pub chunk_sizes: Vec<Vec<f64>>,
}

impl VideoManifest {
    pub fn new(chunk_duration: f64, ladder: Vec<f64>, chunk_sizes: Vec<Vec<f64>>) -> Result<Self> {
        if !(chunk_duration > 0.0) {
            return Err(invalid("chunk duration must be > 0"));
        }
        if ladder.is_empty() {
            return Err(Error::Empty("bitrate ladder"));
        }
        if ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 0.0 {
            return Err(invalid("ladder must be positive and strictly increasing"));
        }
        if chunk_sizes.is_empty() {
            return Err(Error::Empty("chunk list"));
        }
        for (c, row) in chunk_sizes.iter().enumerate() {
            if row.len() != ladder.len() {
                return Err(invalid(format!("chunk {c} has {} sizes for {} rungs", row.len(), ladder.len())));
            }
            if row.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(invalid(format!("chunk {c} has a non-positive size")));
            }
            if row.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(format!("chunk {c} sizes do not increase with bitrate")));
            }
        }
        Ok(VideoManifest { chunk_duration, ladder, chunk_sizes })
    }

    /// Default 48-chunk video: size = bitrate x duration x a per-chunk
    /// complexity factor in [0.85, 1.15] shared across rungs.
    pub fn default_video() -> Self {
        let mut rng = stream_rng(FAMILY_SEED, streams::ABR_VIDEO);
        let ladder = DEFAULT_LADDER.to_vec();
        let sizes = (0..DEFAULT_NUM_CHUNKS)
            .map(|_| {
                let f: f64 = rng.gen_range(0.85..1.15);
                ladder.iter().map(|b| b * CHUNK_SECONDS * f).collect()
            })
            .collect();
        VideoManifest::new(CHUNK_SECONDS, ladder, sizes).expect("default manifest is valid")
    }

    pub fn synth_video() -> Self {
        Self::default_video().scaled(SYNTH_VIDEO_SCALE)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        VideoManifest {
            chunk_duration: self.chunk_duration,
            ladder: self.ladder.clone(),
            chunk_sizes: self
                .chunk_sizes
                .iter()
                .map(|r| r.iter().map(|s| s * factor).collect())
                .collect(),
        }
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_sizes.len()
    }

    pub fn mean_chunk_size(&self) -> f64 {
        let n = (self.chunk_sizes.len() * self.ladder.len()) as f64;
        self.chunk_sizes.iter().flatten().sum::<f64>() / n
    }
}

/// Sinusoid plus Gaussian noise sampled at 1 s.
///
/// Values are floored at `0.1 * (mean - amplitude)` so the trace stays
/// strictly positive whatever the noise draws.
pub fn gen_synth_trace(
    mean: f64,
    amplitude: f64,
    period: f64,
    noise: f64,
    duration: f64,
    seed: u64,
) -> Result<BandwidthTrace> {
    if !(amplitude >= 0.0) || !(mean > amplitude) {
        return Err(invalid(format!(
            "synthetic trace needs mean > amplitude >= 0 (mean {mean}, amplitude {amplitude})"
        )));
    }
    if !(period > 0.0) || !(noise >= 0.0) || !(duration >= 1.0) {
        return Err(invalid("synthetic trace needs period > 0, noise >= 0, duration >= 1 s"));
    }
    let mut rng = stream_rng(seed, streams::SYNTH_TRACE);
    let phase: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let floor = 0.1 * (mean - amplitude);
    let n = libm::floor(duration) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64;
            let wave = mean + amplitude * libm::sin(core::f64::consts::TAU * t / period + phase);
            let eps = if noise > 0.0 { noise * normal.sample(&mut rng) } else { 0.0 };
            TracePoint { t, mbps: (wave + eps).max(floor) }
        })
        .collect();
    BandwidthTrace::new(samples)
}

/// One member of the measured-style trace pool: a log-normal level that
/// persists for a geometric number of seconds, with 10% per-second jitter.
pub fn measured_trace(index: u32) -> BandwidthTrace {
    let mut rng = stream_rng(mix_seed(FAMILY_SEED, index as u64), streams::ABR_MEASURED_FAMILY);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let base: f64 = libm::exp(rng.gen_range(libm::log(0.8)..libm::log(5.0)));
    let mut level = base;
    let samples = (0..FAMILY_TRACE_SECONDS)
        .map(|i| {
            if rng.gen_bool(0.08) {
                let z: f64 = normal.sample(&mut rng);
                level = (base * libm::exp(0.25 * z)).clamp(0.2, 8.0);
            }
            let jitter: f64 = normal.sample(&mut rng);
            TracePoint { t: i as f64, mbps: (level * (1.0 + 0.1 * jitter)).max(0.1) }
        })
        .collect();
    BandwidthTrace::new(samples).expect("family trace is valid")
}

/// One member of the synthetic dynamic trace pool.
pub fn synth_family_trace(index: u32) -> BandwidthTrace {
    let seed = mix_seed(FAMILY_SEED, 0x5717 + index as u64);
    let mut rng = stream_rng(seed, streams::ABR_SYNTH_FAMILY);
    let mean = rng.gen_range(1.0..5.0);
    let amplitude = mean * rng.gen_range(0.5..0.8);
    let period = rng.gen_range(20.0..80.0);
    gen_synth_trace(mean, amplitude, period, 0.1 * mean, FAMILY_TRACE_SECONDS as f64, seed)
        .expect("family parameters are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbrEnvId {
    Train,
    DefaultTest,
    Ood1,
    Ood2,
    Ood3,
}

impl AbrEnvId {
    pub const ALL: [AbrEnvId; 5] =
        [AbrEnvId::Train, AbrEnvId::DefaultTest, AbrEnvId::Ood1, AbrEnvId::Ood2, AbrEnvId::Ood3];

    fn synthetic_video(self) -> bool {
        matches!(self, AbrEnvId::Ood2 | AbrEnvId::Ood3)
    }

    fn synthetic_traces(self) -> bool {
        matches!(self, AbrEnvId::Ood1 | AbrEnvId::Ood3)
    }
}

impl fmt::Display for AbrEnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbrEnvId::Train => "train",
            AbrEnvId::DefaultTest => "default-test",
            AbrEnvId::Ood1 => "ood1",
            AbrEnvId::Ood2 => "ood2",
            AbrEnvId::Ood3 => "ood3",
        })
    }
}

impl FromStr for AbrEnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(AbrEnvId::Train),
            "default-test" | "test" => Ok(AbrEnvId::DefaultTest),
            "ood1" => Ok(AbrEnvId::Ood1),
            "ood2" => Ok(AbrEnvId::Ood2),
            "ood3" => Ok(AbrEnvId::Ood3),
            other => Err(invalid(format!("unknown ABR environment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceFamily {
    Measured,
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceId {
    pub family: TraceFamily,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackState {
    pub buffer: f64,
    pub last_bitrate_index: usize,
    pub next_chunk: usize,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrObservation {
    /// Mbps, oldest first, zero-padded on the left.
    pub past_throughputs: Vec<f64>,
    /// Seconds, aligned with `past_throughputs`.
    pub past_download_times: Vec<f64>,
    /// Mbit per ladder rung; zeros once the video is finished.
    pub next_chunk_sizes: Vec<f64>,
    pub buffer: f64,
    pub chunks_remaining: usize,
    pub last_bitrate: f64,
}

impl AbrObservation {
    pub fn to_task_state(&self) -> TaskState {
        TaskState::new(TaskKind::Abr)
            .with_scalar("buffer", self.buffer)
            .with_scalar("chunks_remaining", self.chunks_remaining as f64)
            .with_scalar("last_bitrate", self.last_bitrate)
            .with_vector("past_throughputs", self.past_throughputs.clone())
            .with_vector("past_download_times", self.past_download_times.clone())
            .with_vector("next_chunk_sizes", self.next_chunk_sizes.clone())
    }

    pub fn from_task_state(s: &TaskState) -> Result<Self> {
        let get = |n: &str| s.scalar(n).ok_or_else(|| invalid(format!("missing ABR feature '{n}'")));
        let vec = |n: &str| {
            s.vector(n).map(<[f64]>::to_vec).ok_or_else(|| invalid(format!("missing ABR series '{n}'")))
        };
        Ok(AbrObservation {
            buffer: get("buffer")?,
            chunks_remaining: get("chunks_remaining")? as usize,
            last_bitrate: get("last_bitrate")?,
            past_throughputs: vec("past_throughputs")?,
            past_download_times: vec("past_download_times")?,
            next_chunk_sizes: vec("next_chunk_sizes")?,
        })
    }
}

/// Everything that happened while downloading one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk: usize,
    pub bitrate_index: usize,
    pub bitrate: f64,
    pub prev_bitrate: f64,
    pub download_time: f64,
    pub rebuf: f64,
    pub idle: f64,
    pub buffer_after: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbrStep {
    pub observation: AbrObservation,
    pub reward: f64,
    pub done: bool,
    pub record: ChunkRecord,
}

#[derive(Debug, Clone)]
pub struct AbrEnv {
    manifest: VideoManifest,
    trace: BandwidthTrace,
    trace_id: TraceId,
    wrap: bool,
    trace_offset: f64,
    buffer_cap: f64,
    state: PlaybackState,
    throughputs: VecDeque<f64>,
    download_times: VecDeque<f64>,
    total_download: f64,
    total_idle: f64,
}

impl AbrEnv {
    pub fn new(manifest: VideoManifest, trace: BandwidthTrace) -> Self {
        AbrEnv {
            manifest,
            trace,
            trace_id: TraceId { family: TraceFamily::External, index: 0 },
            wrap: true,
            trace_offset: 0.0,
            buffer_cap: BUFFER_CAP,
            state: PlaybackState { buffer: 0.0, last_bitrate_index: 0, next_chunk: 0, wall_clock: 0.0 },
            throughputs: VecDeque::from(alloc::vec![0.0; HISTORY_LEN]),
            download_times: VecDeque::from(alloc::vec![0.0; HISTORY_LEN]),
            total_download: 0.0,
            total_idle: 0.0,
        }
    }

    pub fn with_wrap(mut self, wrap: bool) -> Self {
        self.wrap = wrap;
        self
    }

    pub fn with_trace_offset(mut self, offset: f64) -> Self {
        self.trace_offset = offset;
        self
    }

    pub fn with_buffer_cap(mut self, cap: f64) -> Self {
        self.buffer_cap = cap;
        self
    }

    pub fn with_initial_buffer(mut self, buffer: f64) -> Self {
        self.state.buffer = buffer.clamp(0.0, self.buffer_cap);
        self
    }

    pub fn with_initial_bitrate(mut self, index: usize) -> Self {
        self.state.last_bitrate_index = index.min(self.manifest.ladder.len() - 1);
        self
    }

    fn with_trace_id(mut self, id: TraceId) -> Self {
        self.trace_id = id;
        self
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }

    pub fn trace(&self) -> &BandwidthTrace {
        &self.trace
    }

    pub fn trace_id(&self) -> TraceId {
        self.trace_id
    }

    pub fn trace_offset(&self) -> f64 {
        self.trace_offset
    }

    pub fn buffer_cap(&self) -> f64 {
        self.buffer_cap
    }

    pub fn state(&self) -> &PlaybackState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.next_chunk >= self.manifest.num_chunks()
    }

    pub fn total_download_time(&self) -> f64 {
        self.total_download
    }

    pub fn total_idle_time(&self) -> f64 {
        self.total_idle
    }

    pub fn observation(&self) -> AbrObservation {
        let next_chunk_sizes = self
            .manifest
            .chunk_sizes
            .get(self.state.next_chunk)
            .cloned()
            .unwrap_or_else(|| alloc::vec![0.0; self.manifest.ladder.len()]);
        AbrObservation {
            past_throughputs: self.throughputs.iter().copied().collect(),
            past_download_times: self.download_times.iter().copied().collect(),
            next_chunk_sizes,
            buffer: self.state.buffer,
            chunks_remaining: self.manifest.num_chunks() - self.state.next_chunk,
            last_bitrate: self.manifest.ladder[self.state.last_bitrate_index],
        }
    }

    /// Downloads the next chunk at `bitrate_index`.
    pub fn step_download(&mut self, bitrate_index: usize) -> Result<AbrStep> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let ladder = &self.manifest.ladder;
        if bitrate_index >= ladder.len() {
            return Err(Error::InvalidAction(format!(
                "bitrate index {bitrate_index} outside ladder of {}",
                ladder.len()
            )));
        }
        let chunk = self.state.next_chunk;
        let size = self.manifest.chunk_sizes[chunk][bitrate_index];
        let download = self
            .trace
            .transfer_time(self.trace_offset + self.state.wall_clock, size, self.wrap)?;

        let buffer_before = self.state.buffer;
        let rebuf = (download - buffer_before).max(0.0);
        let mut buffer = (buffer_before - download).max(0.0) + self.manifest.chunk_duration;
        let mut idle = 0.0;
        if buffer > self.buffer_cap {
            idle = buffer - self.buffer_cap;
            buffer = self.buffer_cap;
        }

        let bitrate = ladder[bitrate_index];
        let prev_bitrate = ladder[self.state.last_bitrate_index];
        let reward = qoe(bitrate, rebuf, prev_bitrate)?;

        self.state.wall_clock += download + idle;
        self.total_download += download;
        self.total_idle += idle;
        self.state.buffer = buffer;
        self.state.last_bitrate_index = bitrate_index;
        self.state.next_chunk += 1;
        self.throughputs.pop_front();
        self.throughputs.push_back(size / download);
        self.download_times.pop_front();
        self.download_times.push_back(download);

        let record = ChunkRecord {
            chunk,
            bitrate_index,
            bitrate,
            prev_bitrate,
            download_time: download,
            rebuf,
            idle,
            buffer_after: buffer,
            reward,
        };
        Ok(AbrStep { observation: self.observation(), reward, done: self.is_done(), record })
    }
}

/// Builds the environment for one row of the ABR environment matrix.
///
/// Train and DefaultTest draw from disjoint slices of the measured-style
/// pool; OOD1/OOD3 use the synthetic dynamic pool; OOD2/OOD3 use the
/// large-chunk video. The start offset into the trace is drawn from `seed`.
pub fn make_abr_env(env_id: AbrEnvId, seed: u64) -> AbrEnv {
    let mut rng = stream_rng(seed, streams::ABR_TRACE_PICK);
    let (trace, trace_id) = if env_id.synthetic_traces() {
        let i = rng.gen_range(0..SYNTH_TRACE_COUNT);
        (synth_family_trace(i), TraceId { family: TraceFamily::Synthetic, index: i })
    } else {
        let range = if env_id == AbrEnvId::Train { MEASURED_TRAIN } else { MEASURED_TEST };
        let i = rng.gen_range(range);
        (measured_trace(i), TraceId { family: TraceFamily::Measured, index: i })
    };
    let manifest =
        if env_id.synthetic_video() { VideoManifest::synth_video() } else { VideoManifest::default_video() };
    let offset = rng.gen_range(0.0..trace.period());
    let offset = trace.start() + offset;
    AbrEnv::new(manifest, trace).with_trace_id(trace_id).with_trace_offset(offset)
}

impl TraceFamily {
    pub fn name(self) -> &'static str {
        match self {
            TraceFamily::Measured => "measured",
            TraceFamily::Synthetic => "synthetic",
            TraceFamily::External => "external",
        }
    }
}

impl fmt::Display for TraceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.family.name(), self.index)
    }
}
