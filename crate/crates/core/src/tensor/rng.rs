//! Seeded, splittable randomness.
//!
//! A run seed is expanded into independent substreams so that, for example,
//! switching augmentation off never perturbs initialization or data order.
//! Stream `(substream, index)` is seeded by running SplitMix64 from
//! `seed ^ (id + 1)·0x9E3779B97F4A7C15 ^ index·0xD1B54A32D192ED03` and taking
//! four outputs as the xoshiro256** state, where `id` is the substream's
//! position in [`Substream::ALL`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_xoshiro::rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Substream {
    Init,
    DataOrder,
    Augmentation,
    MaskPermutation,
    PruningBatch,
}

impl Substream {
    pub const ALL: [Substream; 5] = [
        Substream::Init,
        Substream::DataOrder,
        Substream::Augmentation,
        Substream::MaskPermutation,
        Substream::PruningBatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Substream::Init => "init",
            Substream::DataOrder => "data-order",
            Substream::Augmentation => "augmentation",
            Substream::MaskPermutation => "mask-permutation",
            Substream::PruningBatch => "pruning-batch",
        }
    }

    fn id(self) -> u64 {
        Substream::ALL.iter().position(|&s| s == self).unwrap() as u64
    }
}

impl fmt::Display for Substream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Substream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Substream::ALL
            .into_iter()
            .find(|sub| sub.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown random substream {s:?}; expected one of init, data-order, \
                     augmentation, mask-permutation, pruning-batch"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    Uniform01,
    StandardNormal,
}

/// One deterministic random sequence.
#[derive(Clone, Debug)]
pub struct Stream {
    gen: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, substream: Substream, index: u64) -> Self {
        let mix = seed
            ^ (substream.id() + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut sm = SplitMix64::seed_from_u64(mix);
        let mut state = [0u8; 32];
        for chunk in state.chunks_exact_mut(8) {
            chunk.copy_from_slice(&sm.next_u64().to_le_bytes());
        }
        Stream {
            gen: Xoshiro256StarStar::from_seed(state),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 1)` with 24 random bits.
    pub fn uniform(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Box–Muller on a pair of uniforms; the second variate of each pair is
    /// kept for the next call so split and unsplit draws agree.
    pub fn normal_f64(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform_f64();
        let u2 = self.uniform_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Integer uniform on `[0, n)` by 128-bit multiply-high.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Fisher–Yates, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// A run seed plus the live state of every substream touched so far.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    streams: BTreeMap<(Substream, u64), Stream>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&mut self, substream: Substream) -> &mut Stream {
        self.stream_at(substream, 0)
    }

    /// Indexed child of a substream, e.g. the data order of one epoch.
    pub fn stream_at(&mut self, substream: Substream, index: u64) -> &mut Stream {
        let seed = self.seed;
        self.streams
            .entry((substream, index))
            .or_insert_with(|| Stream::new(seed, substream, index))
    }

    /// Draws `n` variates from the named substream, continuing its state.
    pub fn draw(&mut self, substream: &str, n: usize, dist: Distribution) -> Result<Tensor> {
        let sub: Substream = substream.parse()?;
        let stream = self.stream(sub);
        let data = match dist {
            Distribution::Uniform01 => (0..n).map(|_| stream.uniform()).collect(),
            Distribution::StandardNormal => (0..n).map(|_| stream.normal_f64() as f32).collect(),
        };
        Tensor::new(vec![n], data)
    }
}
