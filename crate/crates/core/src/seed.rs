//! Seed derivation: one global seed fans out to every seeded stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64 of `stage`, added (wrapping) to `seed`. Stable across
/// platforms and releases, unlike `std`'s hasher.
pub fn derive(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed.wrapping_add(h)
}

pub fn rng(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // FNV-1a 64 test vectors
        assert_eq!(derive(0, ""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(derive(0, "a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(derive(1, "probe"), derive(1, "fscil"));
    }
}
