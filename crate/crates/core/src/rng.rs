//! Deterministic RNG derivation.
//!
//! Every random draw in the crate flows from a single `u64` seed through
//! named sub-streams. Streams are derived by counter, not by worker: the
//! generator for (seed, stream, step, index) is a pure function of those
//! four values, so results are bit-identical no matter how work is split
//! across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Particle initialization draws.
pub const STREAM_INIT: u64 = 1;
/// Per-particle motion noise during propagation.
pub const STREAM_PROPAGATE: u64 = 2;
/// The single uniform draw per systematic resampling round.
pub const STREAM_RESAMPLE: u64 = 3;
/// Scenario route walking.
pub const STREAM_ROUTE: u64 = 4;
/// Scenario odometry corruption.
pub const STREAM_ODOMETRY: u64 = 5;
/// Scenario scan synthesis.
pub const STREAM_SCAN: u64 = 6;

/// SplitMix64 output function. Used as a mixer, not as a generator.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes (seed, stream, step, index) into a 64-bit value with good
/// avalanche between adjacent inputs.
pub fn mix(seed: u64, stream: u64, step: u64, index: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0x6A09_E667_F3BC_C909);
    h = splitmix64(h ^ stream);
    h = splitmix64(h ^ step);
    h = splitmix64(h ^ index);
    h
}

/// Returns the generator for one (stream, step, index) cell of the
/// derivation tree rooted at `seed`.
pub fn derive_rng(seed: u64, stream: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = mix(seed, stream, step, index);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_cell_same_stream() {
        let mut a = derive_rng(7, STREAM_PROPAGATE, 3, 11);
        let mut b = derive_rng(7, STREAM_PROPAGATE, 3, 11);
        for _ in 0..64 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn neighboring_cells_decorrelate() {
        // Adjacent indices must not produce shifted copies of one stream.
        let mut a = derive_rng(7, STREAM_PROPAGATE, 3, 11);
        let mut b = derive_rng(7, STREAM_PROPAGATE, 3, 12);
        let va: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_ne!(va, vb);
        assert!(!vb.contains(&va[0]));
    }

    #[test]
    fn streams_are_disjoint_dimensions() {
        let a = mix(7, STREAM_INIT, 0, 0);
        let b = mix(7, STREAM_RESAMPLE, 0, 0);
        let c = mix(8, STREAM_INIT, 0, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mix_is_not_sensitive_to_argument_aliasing() {
        // (step, index) = (1, 0) and (0, 1) must differ: the mixer is
        // sequential over its arguments, not a plain xor of them.
        assert_ne!(mix(7, 2, 1, 0), mix(7, 2, 0, 1));
    }
}
