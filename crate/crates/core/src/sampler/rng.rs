//! Seed derivation for reproducible parallel chains.
//!
//! Each chain draws from its own ChaCha stream keyed by (seed, chain id,
//! purpose tag), so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a master seed and a key tuple.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = seed ^ 0xD1B5_4A32_D192_ED03;
    let mut out = splitmix64(&mut state);
    for &p in parts {
        state ^= p
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x2545_F491_4F6C_DD1D);
        out ^= splitmix64(&mut state);
    }
    out
}

/// RNG for a derived stream.
pub fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}
