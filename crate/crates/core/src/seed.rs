//! Seed derivation for independent random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream seeded by
//! `stream_seed(master, tag, a, b)`: the master seed is folded with the
//! purpose tag and the two indices through successive SplitMix64 finalizers,
//!
//! ```text
//! h0 = splitmix64(master ^ tag.salt())
//! h1 = splitmix64(h0 ^ a)
//! h2 = splitmix64(h1 ^ b.rotate_left(32))
//! ```
//!
//! For worker streams `a` is the worker index and `b` the round; for
//! adversary and master streams `a` is the round. Distinct tags keep the
//! adversary's randomness disjoint from the workers' sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Worker,
    Adversary,
    Master,
    Probe,
    Data,
    Replicate,
}

impl StreamTag {
    pub const fn salt(self) -> u64 {
        match self {
            StreamTag::Worker => 0x5752_4b52_0000_0001,
            StreamTag::Adversary => 0x4144_5652_0000_0002,
            StreamTag::Master => 0x4d53_5452_0000_0003,
            StreamTag::Probe => 0x5052_4f42_0000_0004,
            StreamTag::Data => 0x4441_5441_0000_0005,
            StreamTag::Replicate => 0x5245_504c_0000_0006,
        }
    }
}

/// SplitMix64 finalizer.
pub const fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const fn stream_seed(master: u64, tag: StreamTag, a: u64, b: u64) -> u64 {
    let h0 = splitmix64(master ^ tag.salt());
    let h1 = splitmix64(h0 ^ a);
    splitmix64(h1 ^ b.rotate_left(32))
}

pub fn stream(master: u64, tag: StreamTag, a: u64, b: u64) -> Rng {
    Rng::seed_from_u64(stream_seed(master, tag, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_separate_streams() {
        let w = stream_seed(7, StreamTag::Worker, 3, 4);
        let a = stream_seed(7, StreamTag::Adversary, 3, 4);
        assert_ne!(w, a);
        assert_eq!(w, stream_seed(7, StreamTag::Worker, 3, 4));
        assert_ne!(stream_seed(7, StreamTag::Worker, 3, 4), stream_seed(7, StreamTag::Worker, 4, 3));
    }
}
