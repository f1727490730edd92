//! Deterministic named random streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a; stable across platforms and toolchains, unlike std's
/// hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent stream for `(seed, label, index)`. Distinct labels or
/// indices give unrelated sequences; identical triples give identical ones.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()));
    rng.set_stream(index);
    rng
}
