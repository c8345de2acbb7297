//! Deterministic derivation of per-draw random streams.
//!
//! Every stochastic quantity in the pipeline (scene layout, mention bags,
//! attention logits, feature noise, question sampling) is keyed by a chain of
//! integers: the root seed, a domain tag, and the ids that locate the draw
//! (scene, word, object, anchor, ...). The chain is folded through splitmix64
//! and the result seeds a ChaCha stream. A draw is therefore a pure function
//! of its key, independent of iteration order, thread count, or what else ran
//! before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_SCENE: u64 = 0x01;
pub const TAG_MENTIONS: u64 = 0x02;
pub const TAG_TOPUP: u64 = 0x03;
pub const TAG_UNARY_LOGIT: u64 = 0x04;
pub const TAG_BINARY_LOGIT: u64 = 0x05;
pub const TAG_FEATURES: u64 = 0x06;
pub const TAG_TEMPLATE: u64 = 0x07;
pub const TAG_QUESTION: u64 = 0x08;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key chain into a single 64-bit stream seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ p))
}

/// Opens the deterministic stream addressed by `parts`.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: f64 = stream(&[7, TAG_SCENE, 3]).gen();
        let b: f64 = stream(&[7, TAG_SCENE, 3]).gen();
        assert_eq!(a, b);
    }

    #[test]
    fn different_keys_diverge() {
        let a: u64 = stream(&[7, TAG_SCENE, 3]).gen();
        let b: u64 = stream(&[7, TAG_SCENE, 4]).gen();
        let c: u64 = stream(&[8, TAG_SCENE, 3]).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
        assert_ne!(mix(&[0]), mix(&[0, 0]));
    }
}
