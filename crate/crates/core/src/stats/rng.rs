//! Replicable, stream-indexed random numbers.
//!
//! Every stream is a ChaCha8 keystream selected by `(master_seed, stream_id)`.
//! ChaCha is counter based, so a stream's output depends only on that pair
//! and the position inside it, never on which thread created it or when.
//! Hierarchical work (macro-run → phase → replication → solution) is keyed
//! through [`StreamKey`], which folds a path of integers into a stream id.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One independent random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position inside the stream, in 32-bit words consumed.
    pub fn cursor(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Jump to an absolute position inside the stream.
    pub fn seek(&mut self, word_pos: u128) {
        self.inner.set_word_pos(word_pos);
    }

    /// Uniform draw on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// A node in a tree of streams: a master seed plus a hashed path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    path: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: 0x6a09_e667_f3bc_c909,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Descend one level. Distinct tags give distinct (with overwhelming
    /// probability) stream ids.
    pub fn child(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            path: splitmix64(self.path ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn children(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |k, &t| k.child(t))
    }

    pub fn stream_id(&self) -> u64 {
        self.path
    }

    pub fn stream(self) -> RngStream {
        RngStream::new(self.seed, self.path)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
