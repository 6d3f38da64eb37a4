//! Named random-number sub-streams.
//!
//! Every random draw in the crate comes from a generator keyed by
//! `(master seed, purpose, area, iteration, replicate)`. Parallel schedules
//! therefore never change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    EisProposal = 1,
    SirDraws = 2,
    SirResample = 3,
    Gibbs = 4,
    OutOfSample = 5,
    BootstrapPopulation = 6,
    BootstrapEstimate = 7,
    SimPopulation = 8,
    SimCovariates = 9,
    SimSampling = 10,
    SimEstimate = 11,
    MarginalLikelihood = 12,
    SynthPopulation = 13,
    Estimator = 14,
    SimFit = 15,
}

/// Coordinates of one independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub area: u64,
    pub iteration: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(purpose: Purpose) -> Self {
        StreamKey {
            purpose,
            area: 0,
            iteration: 0,
            replicate: 0,
        }
    }

    pub fn area(mut self, area: usize) -> Self {
        self.area = area as u64;
        self
    }

    pub fn iteration(mut self, iteration: usize) -> Self {
        self.iteration = iteration as u64;
        self
    }

    pub fn replicate(mut self, replicate: usize) -> Self {
        self.replicate = replicate as u64;
        self
    }

    pub fn rng(self, master: u64) -> StreamRng {
        let mut state = splitmix(master ^ 0x243F_6A88_85A3_08D3);
        for word in [self.purpose as u64, self.area, self.iteration, self.replicate] {
            state = splitmix(state ^ splitmix(word.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Derive a child master seed, e.g. one per simulation replicate.
pub fn derive_seed(master: u64, key: StreamKey) -> u64 {
    use rand::RngCore;
    key.rng(master).next_u64()
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
