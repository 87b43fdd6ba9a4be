//! Deterministic seed derivation.
//!
//! Every role (dealer, client, party-0 noise, workload) gets its own ChaCha
//! stream keyed by the top-level seed plus a tag path, so a run is a pure
//! function of its seed and no role can observe another's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const DEALER: u64 = 0x6465_616c;
pub const CLIENT: u64 = 0x636c_6e74;
pub const NOISE: u64 = 0x6e6f_6973;
pub const WORKLOAD: u64 = 0x776b_6c64;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(root), |acc, &tag| splitmix(acc ^ splitmix(tag)))
}

pub fn rng(root: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(root, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_order_sensitive() {
        assert_ne!(derive(1, &[2, 3]), derive(1, &[3, 2]));
        assert_ne!(derive(1, &[2]), derive(2, &[2]));
        assert_eq!(derive(7, &[DEALER, 4]), derive(7, &[DEALER, 4]));
    }
}
