//! Deterministic random-stream derivation.
//!
//! Every random decision in a run is drawn from its own ChaCha12 stream,
//! keyed by a root seed plus a domain tag and structural indices (round,
//! client id, ...). Streams are therefore independent of evaluation order:
//! running clients in parallel, skipping diagnostics, or replaying a single
//! round all consume exactly the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Domain tags keep streams for unrelated purposes disjoint even when their
/// numeric indices collide.
const DOMAIN_SAMPLING: u64 = 1;
const DOMAIN_CLIENT: u64 = 2;
const DOMAIN_SUITE: u64 = 3;
const DOMAIN_INIT: u64 = 4;
const DOMAIN_PARTITION: u64 = 5;

/// Root seed from which all streams of one run (or one suite) are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamRoot(pub u64);

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer; good avalanche for cheap key stretching.
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a ChaCha12 generator from a list of key parts. The parts are
/// absorbed into a 64-bit sponge and expanded to the full 256-bit seed.
pub fn derive_stream(parts: &[u64]) -> ChaCha12Rng {
    let mut state: u64 = 0xA076_1D64_78BD_642F;
    for &p in parts {
        state = mix(state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix(state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

impl StreamRoot {
    /// Stream deciding which clients participate in `round`.
    pub fn sampling(self, round: u64) -> ChaCha12Rng {
        derive_stream(&[self.0, DOMAIN_SAMPLING, round])
    }

    /// Stream for one client's local work in `round` (minibatch choice,
    /// gradient noise). Independent per (round, client).
    pub fn client(self, round: u64, client: usize) -> ChaCha12Rng {
        derive_stream(&[self.0, DOMAIN_CLIENT, round, client as u64])
    }

    /// Stream for synthetic problem-suite generation.
    pub fn suite_gen(self) -> ChaCha12Rng {
        derive_stream(&[self.0, DOMAIN_SUITE])
    }

    /// Stream for drawing the initial server parameters.
    pub fn init(self) -> ChaCha12Rng {
        derive_stream(&[self.0, DOMAIN_INIT])
    }

    /// Stream for dataset partitioning.
    pub fn partition(self) -> ChaCha12Rng {
        derive_stream(&[self.0, DOMAIN_PARTITION])
    }
}
