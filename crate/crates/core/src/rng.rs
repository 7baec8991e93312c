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

//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha8 stream selected by
//! `(seed, stream)`, so adding draws in one component never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream identifiers. Kept in one place so no two components share a stream.
pub mod streams {
    pub const ABR_TRACE_PICK: u64 = 1;
    pub const ABR_MEASURED_FAMILY: u64 = 2;
    pub const ABR_SYNTH_FAMILY: u64 = 3;
    pub const ABR_VIDEO: u64 = 4;
    pub const SYNTH_TRACE: u64 = 5;
    pub const CJS_WORKLOAD: u64 = 10;
    pub const CC_LINK: u64 = 20;
    pub const CC_REQUEST: u64 = 21;
    pub const APC_POPULATION: u64 = 30;
    pub const TRAIN_INIT: u64 = 40;
    pub const TRAIN_SHUFFLE: u64 = 41;
    pub const POLICY_BEHAVIOR: u64 = 50;
}

pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two integers into one seed (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
