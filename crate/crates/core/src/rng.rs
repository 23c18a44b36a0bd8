//! Deterministic, independently seeded random streams.
//!
//! Every random quantity in an experiment is drawn from a stream whose seed is
//! a splitmix-style mix of `(master_seed, purpose, index)`. Streams can fork
//! further sub-streams keyed by `(lane, index)`, so per-prompt randomness is a
//! pure function of the prompt index and never depends on how work is split
//! across threads.

use core::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checksum::fnv1a;

/// What a stream is used for. The tag participates in the seed mix, so two
/// purposes never share a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    Task,
    Prompt,
    Features,
    SurrogateNoise,
    Calibration,
    Test,
}

impl Purpose {
    pub const ALL: [Purpose; 6] = [
        Purpose::Task,
        Purpose::Prompt,
        Purpose::Features,
        Purpose::SurrogateNoise,
        Purpose::Calibration,
        Purpose::Test,
    ];

    pub const fn tag(self) -> &'static str {
        match self {
            Purpose::Task => "task",
            Purpose::Prompt => "prompt",
            Purpose::Features => "features",
            Purpose::SurrogateNoise => "surrogate_noise",
            Purpose::Calibration => "calibration",
            Purpose::Test => "test",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag)
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// splitmix64 output function.
pub const fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3_u64;
    for &w in words {
        h = splitmix64(h ^ w);
    }
    h
}

/// Root coordinates of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub master_seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

pub struct RngStream {
    rng: ChaCha8Rng,
    provenance: Provenance,
    key: u64,
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("provenance", &self.provenance)
            .field("key", &format_args!("{:#018x}", self.key))
            .finish()
    }
}

/// Creates the stream for `(master_seed, purpose, index)`.
pub fn derive_stream(master_seed: u64, purpose: Purpose, index: u64) -> RngStream {
    let key = mix(&[master_seed, fnv1a(purpose.tag().as_bytes()), index]);
    RngStream::from_key(
        key,
        Provenance {
            master_seed,
            purpose,
            index,
        },
    )
}

impl RngStream {
    fn from_key(key: u64, provenance: Provenance) -> Self {
        let mut seed = [0u8; 32];
        let mut s = key;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(seed),
            provenance,
            key,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// The mixed seed key; unique per root provenance and sub-stream path.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream for `(lane, index)`. Depends only on this stream's key,
    /// not on how many values have been drawn from it.
    pub fn substream(&self, lane: u64, index: u64) -> RngStream {
        RngStream::from_key(mix(&[self.key, lane, index]), self.provenance)
    }

    /// The stream with the same master seed and index but another purpose.
    pub fn sibling(&self, purpose: Purpose) -> RngStream {
        derive_stream(self.provenance.master_seed, purpose, self.provenance.index)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], scale: f64) {
        for v in out {
            *v = scale * self.normal();
        }
    }
}
