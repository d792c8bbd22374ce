//! Seeded random streams and small sampling helpers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator used for every seeded run.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for run `run` of cell `cell`, independent of scheduling order.
pub fn derive_seed(base: u64, cell: u64, run: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(cell)) ^ run)
}

/// Draws an index from a probability row by inversion.
pub fn sample_index<R: RngCore + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total; fall back to the last positive entry
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}
