//! Seeded random streams.
//!
//! Every random quantity is drawn from its own ChaCha20 stream. The 256-bit
//! key comes from the global seed (expanded by `SeedableRng::seed_from_u64`),
//! and the 64-bit stream id is `mix64(mix64(domain) ^ index)` where `mix64`
//! is the SplitMix64 finalizer. A mapper and a reducer that agree on
//! `(seed, domain, index)` therefore draw identical values without talking to
//! each other, independent of scheduling or thread count.
//!
//! Gaussian draws use the ziggurat sampler of `rand_distr::StandardNormal`
//! (rand_distr 0.5) in `f64`; uniforms use `Rng::random::<f64>()` on `[0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Independent families of draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Row `i` of the inner projection family.
    InnerRow = 1,
    /// The outer one-dimensional hash.
    OuterHash = 2,
    /// Query offsets, indexed by query id.
    Offsets = 3,
    PlantedData = 4,
    PlantedQuery = 5,
    /// Sub-seed derivation (inner family, outer hash, offsets from one run seed).
    SeedSplit = 6,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_id(domain: Domain, index: u64) -> u64 {
    mix64(mix64(domain as u64) ^ index)
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(domain, index));
    rng
}

/// Derives a child seed, e.g. separate seeds for the inner and outer hashes of one run.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    stream(seed, Domain::SeedSplit, label).random()
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}
