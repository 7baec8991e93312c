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

//! Piecewise-constant rate series, used for ABR bandwidth traces, CC
//! bottleneck capacity traces and CC request-rate series.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Seconds.
    pub t: f64,
    /// Mbps.
    pub mbps: f64,
}

/// Sample `k` holds over `[t_k, t_{k+1})`. The last sample holds for as long
/// as the gap before it (one second for single-sample traces), which fixes
/// the trace end and the wrap-around period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    samples: Vec<TracePoint>,
    end: f64,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<TracePoint>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("bandwidth trace"));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() || !s.mbps.is_finite() {
                return Err(invalid(format!("trace sample {i} is not finite")));
            }
            if s.mbps <= 0.0 {
                return Err(invalid(format!("trace sample {i} has non-positive bandwidth {}", s.mbps)));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(invalid(format!("trace timestamps not strictly increasing at sample {i}")));
            }
        }
        let n = samples.len();
        let last_gap = if n > 1 { samples[n - 1].t - samples[n - 2].t } else { 1.0 };
        let end = samples[n - 1].t + last_gap;
        Ok(BandwidthTrace { samples, end })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(t, mbps)| TracePoint { t, mbps }).collect())
    }

    /// Constant rate over `[0, duration)` sampled once per second.
    pub fn constant(mbps: f64, duration: f64) -> Result<Self> {
        let n = libm::ceil(duration).max(1.0) as usize;
        Self::new((0..n).map(|i| TracePoint { t: i as f64, mbps }).collect())
    }

    pub fn samples(&self) -> &[TracePoint] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn period(&self) -> f64 {
        self.end - self.start()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|s| s.mbps).sum::<f64>() / self.samples.len() as f64
    }

    /// Coefficient of variation of the sample values.
    pub fn cv(&self) -> f64 {
        let m = self.mean();
        let var = self.samples.iter().map(|s| (s.mbps - m) * (s.mbps - m)).sum::<f64>()
            / self.samples.len() as f64;
        libm::sqrt(var) / m
    }

    fn local_time(&self, t: f64, wrap: bool) -> Result<f64> {
        if t < self.start() {
            return Err(invalid(format!("time {t} precedes trace start {}", self.start())));
        }
        if t < self.end {
            return Ok(t);
        }
        if !wrap {
            return Err(Error::TraceExhausted(t));
        }
        let p = self.period();
        let mut local = self.start() + libm::fmod(t - self.start(), p);
        if local >= self.end {
            local = self.start();
        }
        Ok(local)
    }

    fn index_at(&self, local: f64) -> usize {
        // last sample with t_k <= local (left-closed intervals)
        self.samples.partition_point(|s| s.t <= local) - 1
    }

    /// Rate of the interval containing `t`; intervals are left-closed.
    pub fn value_at(&self, t: f64, wrap: bool) -> Result<f64> {
        let local = self.local_time(t, wrap)?;
        Ok(self.samples[self.index_at(local)].mbps)
    }

    /// `(rate, absolute end time of the constant segment containing t)`.
    pub fn segment_at(&self, t: f64, wrap: bool) -> Result<(f64, f64)> {
        let local = self.local_time(t, wrap)?;
        let k = self.index_at(local);
        let seg_end = self.samples.get(k + 1).map_or(self.end, |s| s.t);
        Ok((self.samples[k].mbps, t + (seg_end - local)))
    }

    /// Time needed to move `size` Mbit starting at `start`, integrating the
    /// piecewise-constant rate exactly.
    pub fn transfer_time(&self, start: f64, size: f64, wrap: bool) -> Result<f64> {
        if !(size >= 0.0) {
            return Err(invalid(format!("transfer size {size} must be >= 0")));
        }
        let mut t = start;
        let mut remaining = size;
        // bounded: each iteration either finishes or crosses a segment boundary
        loop {
            let (bw, seg_end) = self.segment_at(t, wrap)?;
            let span = seg_end - t;
            let capacity = bw * span;
            if capacity >= remaining {
                t += remaining / bw;
                return Ok(t - start);
            }
            remaining -= capacity;
            t = seg_end;
        }
    }
}
