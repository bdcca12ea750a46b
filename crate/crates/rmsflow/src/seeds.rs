//! Per-subsystem RNG streams split from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit seed for `(root, tag, indices...)`.
pub fn derive(root: u64, tag: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the tag keeps streams for different subsystems apart.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut s = splitmix(root ^ splitmix(h));
    for &i in indices {
        s = splitmix(s ^ i);
    }
    s
}

pub fn rng(root: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag, indices))
}
