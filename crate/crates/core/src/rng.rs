//! Seed derivation for reproducible random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream whose
//! key is a hash of a [`SeedKey`] path and a [`Stream`] tag. Keys are pure
//! functions of the master seed and their path, so results never depend on
//! the order in which tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Named purposes of random streams hanging off a [`SeedKey`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    DomainSampling,
    InitState,
    ObsNoise,
    Exploration,
    Optimizer,
    Bootstrap,
    Perturbation,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::DomainSampling => 0x01,
            Stream::InitState => 0x02,
            Stream::ObsNoise => 0x03,
            Stream::Exploration => 0x04,
            Stream::Optimizer => 0x05,
            Stream::Bootstrap => 0x06,
            Stream::Perturbation => 0x07,
        }
    }
}

/// A node in a tree of seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(master: u64) -> Self {
        SeedKey(mix(0x5eed_0000_0000_0001, master))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Child key for an integer index (iteration, rollout, reference, ...).
    pub fn child(self, index: u64) -> Self {
        SeedKey(mix(self.0, index))
    }

    /// Child key for a textual label, e.g. `"candidate"`.
    pub fn label(self, name: &str) -> Self {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        SeedKey(mix(self.0 ^ 0xa5a5_a5a5_a5a5_a5a5, h))
    }

    pub fn rng(self, stream: Stream) -> StreamRng {
        let mut state = mix(self.0, stream.tag() ^ 0x7f4a_7c15_0000_0000);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    let mut s = a.rotate_left(17) ^ b.wrapping_mul(0xd6e8_feb8_6659_fd93);
    splitmix64(&mut s);
    splitmix64(&mut s)
}
