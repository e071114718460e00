//! Seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha8 generator keyed by the
//! root seed, with the ChaCha stream id selected from a subsystem label and
//! an integer counter. Streams for distinct `(label, index)` pairs never
//! overlap, and the result is independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a; stable across platforms and toolchain versions.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `(label, index)` under `root`.
pub fn stream(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(splitmix64(label_hash(label) ^ splitmix64(index)));
    rng
}

/// Derive a child root seed, for handing a whole subsystem its own seed.
pub fn child_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(label_hash(label).wrapping_add(index)))
}
