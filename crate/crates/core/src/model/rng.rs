//! Per-path random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed, a domain
//! tag and two indices (cohort and path, or probe and sub-path), so the draws
//! a path sees never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Forward simulation of income and initial conditions.
pub const DOMAIN_PATHS: u64 = 0x5041_5448;
/// Nested Monte Carlo sub-paths for conditional-expectation oracles.
pub const DOMAIN_NESTED: u64 = 0x4e45_5354;
/// Random perturbations used by optimality diagnostics.
pub const DOMAIN_PERTURB: u64 = 0x5045_5254;

pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
