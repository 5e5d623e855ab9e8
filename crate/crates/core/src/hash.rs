//! Small, platform-stable hashing helpers.
//!
//! `std`'s `DefaultHasher` is explicitly not stable across releases, so every
//! seed derivation and feature hash in the crate goes through these instead.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer. Bijective on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
///
/// `derive_seed(s, label) = splitmix64(s ^ fnv1a(label))`. The pipeline uses
/// this to fan one global seed out to per-stage seeds.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a(label.as_bytes()))
}

/// Derives a child seed from a parent seed and an index.
pub fn derive_seed_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Maps a 64-bit hash to a float uniformly distributed in `[-1, 1)`.
pub(crate) fn unit_signed(h: u64) -> f64 {
    // 53 high bits -> [0, 1)
    let u = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * u - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(7, "reduce"), derive_seed(7, "cluster"));
        assert_eq!(derive_seed(7, "reduce"), derive_seed(7, "reduce"));
    }

    #[test]
    fn unit_signed_range() {
        for i in 0..1000u64 {
            let v = unit_signed(splitmix64(i));
            assert!((-1.0..1.0).contains(&v));
        }
        assert_eq!(unit_signed(0), -1.0);
    }
}
