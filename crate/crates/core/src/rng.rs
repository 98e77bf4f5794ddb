//! Deterministic seeding.
//!
//! Every sampling operation takes an explicit u64 seed; nothing in the crate
//! shares a mutable generator. Experiments derive per-trial seeds from a root
//! seed and a stream label so that parallel and serial runs draw identical
//! randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; decorrelates structured seed inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for (root, stream, index).
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    mix(mix(root ^ mix(stream)) ^ index)
}

/// Stream labels used by the experiment harness. Values are arbitrary but
/// frozen: changing them changes every derived artifact.
pub mod streams {
    pub const HMM_GENERATION: u64 = 0x01;
    pub const PROMPT: u64 = 0x02;
    pub const MOMENT_MC: u64 = 0x03;
    pub const KL_MC: u64 = 0x04;
    pub const EPSILON_R_MC: u64 = 0x05;
    pub const MARGIN_SAMPLING: u64 = 0x06;
    pub const IDENTITY: u64 = 0x07;
    pub const HOEFFDING: u64 = 0x08;
    pub const CONCENTRATION: u64 = 0x09;
    pub const ABLATION: u64 = 0x0a;
    pub const EQ2: u64 = 0x0b;
    pub const AGREEMENT: u64 = 0x0c;
}

/// Draw an index from a discrete distribution by cumulative scan.
/// `weights` need not be normalized; total mass must be positive.
pub fn sample_discrete(rng: &mut Rng, weights: &[f64]) -> usize {
    use rand::Rng as _;
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "sample_discrete needs positive mass");
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // fall through on round-off: last index with positive weight
    weights.iter().rposition(|&w| w > 0.0).expect("positive mass")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_deterministic_and_spreads() {
        let a = derive_seed(42, streams::PROMPT, 0);
        let b = derive_seed(42, streams::PROMPT, 0);
        let c = derive_seed(42, streams::PROMPT, 1);
        let d = derive_seed(42, streams::AGREEMENT, 0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn sample_discrete_respects_support() {
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let i = sample_discrete(&mut rng, &[0.0, 2.0, 0.0, 1.0]);
            assert!(i == 1 || i == 3);
        }
    }
}
