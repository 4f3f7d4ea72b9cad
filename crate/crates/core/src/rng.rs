//! Counter-style random streams keyed by `(seed, unit, tag)`.
//!
//! Every simulated quantity is drawn from a stream derived only from its key,
//! so a dataset is identical whether units are generated sequentially or on a
//! thread pool, and replication `i` is reproducible in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-variable stream tags used by the simulators.
pub mod tag {
    pub const COVARIATE: u64 = 1;
    pub const UNTREATED: u64 = 2;
    pub const TREATED: u64 = 3;
    pub const ASSIGNMENT: u64 = 4;
    pub const ARM: u64 = 5;
    pub const CHAIN: u64 = 16;
    pub const REPLICATION: u64 = 17;
    pub const ORACLE: u64 = 18;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of key words.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Stream for one `(seed, unit, tag)` key.
pub fn keyed_rng(seed: u64, unit: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[unit]));
    rng.set_stream(tag);
    rng
}

/// Independent stream for MCMC chain `chain_id`.
pub fn chain_rng(seed: u64, chain_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::CHAIN, chain_id]))
}

/// One standard-normal draw.
#[inline]
pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}
