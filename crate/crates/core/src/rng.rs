//! Deterministic, splittable random streams.
//!
//! Every stochastic routine in this crate derives its randomness from a
//! `(global seed, stream ids...)` key, so batched generation can run in any
//! order (or in parallel) and still produce bit-identical output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 step; used to mix stream ids into the key.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha stream keyed by the global seed plus a path of stream ids
/// (e.g. `[sample_index]` or `[sample_index, mode_index]`).
pub fn stream(seed: u64, ids: &[u64]) -> ChaCha12Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    let mut key = [0u8; 32];
    splitmix64(&mut state);
    for (i, id) in ids.iter().enumerate() {
        state ^= id.wrapping_add(0x243f_6a88_85a3_08d3).rotate_left((i as u32 * 7) % 64);
        splitmix64(&mut state);
    }
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Derive a sub-seed along an id path; feeding it back into [`stream`]
/// yields independent child streams.
pub fn derive(seed: u64, ids: &[u64]) -> u64 {
    let mut state = seed ^ 0xbb67_ae85_84ca_a73b;
    splitmix64(&mut state);
    for (i, id) in ids.iter().enumerate() {
        state ^= id.wrapping_add(0x1319_8a2e_0370_7344).rotate_left((i as u32 * 11) % 64);
        splitmix64(&mut state);
    }
    splitmix64(&mut state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic() {
        let a: Vec<f64> = stream(7, &[3, 1]).sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<f64> = stream(7, &[3, 1]).sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ_across_ids() {
        let a: f64 = stream(7, &[3, 1]).gen();
        let b: f64 = stream(7, &[3, 2]).gen();
        let c: f64 = stream(8, &[3, 1]).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn id_path_order_matters() {
        let a: f64 = stream(1, &[2, 3]).gen();
        let b: f64 = stream(1, &[3, 2]).gen();
        assert_ne!(a, b);
    }
}
