//! Keyed random streams.
//!
//! Every draw is identified by `(master seed, level, channel, counter)`. The key
//! is packed injectively into a 32-byte ChaCha20 seed, so a draw can be
//! replayed from its key alone and distinct keys give independent streams.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Independent purposes that must never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Noise,
    Proposal,
    Accept,
    Data,
    Other(u32),
}

impl Channel {
    fn code(self) -> u32 {
        match self {
            Channel::Noise => 0,
            Channel::Proposal => 1,
            Channel::Accept => 2,
            Channel::Data => 3,
            Channel::Other(c) => 16 + c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DrawKey {
    pub master: u64,
    pub level: u32,
    pub channel: Channel,
    pub counter: u64,
}

impl DrawKey {
    pub fn rng(&self) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master.to_le_bytes());
        seed[8..12].copy_from_slice(&self.level.to_le_bytes());
        seed[12..16].copy_from_slice(&self.channel.code().to_le_bytes());
        seed[16..24].copy_from_slice(&self.counter.to_le_bytes());
        ChaCha20Rng::from_seed(seed)
    }

    /// The `n` standard normals drawn under this key.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// The `n` uniforms in `(0, 1]` drawn under this key.
    pub fn uniforms(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| 1.0 - rng.random::<f64>()).collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter state per `(level, channel)` on top of one master seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStreams {
    master: u64,
    counters: BTreeMap<(u32, Channel), u64>,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        Self { master, counters: BTreeMap::new() }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Fresh streams with a master seed derived from this one and `tag`.
    pub fn substream(&self, tag: u64) -> Self {
        Self::new(splitmix64(self.master ^ splitmix64(tag.wrapping_add(1))))
    }

    pub fn counter(&self, level: usize, channel: Channel) -> u64 {
        self.counters.get(&(level as u32, channel)).copied().unwrap_or(0)
    }

    /// Moves the counter, e.g. to resume a stream.
    pub fn set_counter(&mut self, level: usize, channel: Channel, counter: u64) {
        self.counters.insert((level as u32, channel), counter);
    }

    /// Returns the next key on `(level, channel)` and advances its counter.
    pub fn next_key(&mut self, level: usize, channel: Channel) -> DrawKey {
        let c = self.counters.entry((level as u32, channel)).or_insert(0);
        let key = DrawKey { master: self.master, level: level as u32, channel, counter: *c };
        *c += 1;
        key
    }

    /// `n` standard normals on the noise channel of `level`.
    pub fn sample_standard_normal(&mut self, level: usize, n: usize) -> (Vec<f64>, DrawKey) {
        self.normals(level, Channel::Noise, n)
    }

    pub fn normals(&mut self, level: usize, channel: Channel, n: usize) -> (Vec<f64>, DrawKey) {
        let key = self.next_key(level, channel);
        (key.normals(n), key)
    }

    /// One uniform in `(0, 1]`.
    pub fn uniform(&mut self, level: usize, channel: Channel) -> f64 {
        self.next_key(level, channel).uniforms(1)[0]
    }
}
