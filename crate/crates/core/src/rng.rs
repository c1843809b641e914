//! Deterministic, splittable random-number streams.
//!
//! Every stochastic operation draws from a [`StreamSeed`] — a node in a
//! labelled seed-derivation tree — plus a substream index that selects an
//! independent ChaCha stream. Work on an ensemble is always carved into
//! fixed-size chunks of [`CHUNK`] items and chunk `c` always draws from
//! substream `c`, so the bytes a chunk consumes never depend on how many
//! rayon threads happen to exist. Running serially, with 2 threads, or with
//! 64 produces bit-identical output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Number of items generated or transformed per RNG substream.
///
/// Fixed by contract, not tuned per machine: changing it changes which
/// substream each sample draws from and therefore the realized samples.
pub const CHUNK: usize = 8192;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a bijective 64-bit mix with full avalanche.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A node in the seed-derivation tree.
///
/// The root is built from the user-facing `u64` seed; children are derived
/// with integer labels (`child(label)`), e.g. one child per pipeline, per
/// channel application, per bootstrap. Two distinct label paths yield
/// unrelated streams; the same path always yields the same stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(mix64(seed ^ GOLDEN))
    }

    /// Derive the child seed for a labelled purpose.
    pub fn child(self, label: u64) -> Self {
        StreamSeed(mix64(self.0 ^ mix64(label.wrapping_add(GOLDEN))))
    }

    /// The RNG for one chunk of work under this seed: the ChaCha key comes
    /// from the tree node, the ChaCha stream number from the chunk index.
    pub fn rng(self, chunk: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut word = self.0;
        for bytes in key.chunks_exact_mut(8) {
            word = mix64(word.wrapping_add(GOLDEN));
            bytes.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(chunk);
        rng
    }

    /// Opaque identity of this node, recorded on ensembles so the protocol
    /// can reject accidentally shared seeds.
    pub fn fingerprint(self) -> u64 {
        self.0
    }
}

/// Combine two stream fingerprints into one (order-sensitive), for tracking
/// the identity of an ensemble that passed through a stochastic channel.
pub fn combine_fingerprints(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b.rotate_left(17)))
}

/// Produce `n` items by calling `f(rng, index)` for `index` in `0..n`,
/// chunked so that chunk `c` draws from substream `c` of `seed`.
///
/// The result is bit-identical for every rayon pool size, including 1.
pub fn fill_chunked<T, F>(n: usize, seed: StreamSeed, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks: Vec<Vec<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.rng(c as u64);
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            (start..end).map(|i| f(&mut rng, i)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for chunk in chunks {
        out.extend(chunk);
    }
    out
}

/// Transform existing items with per-chunk substreams: item `i` is mapped by
/// `f` using the RNG of chunk `i / CHUNK`. Deterministic like
/// [`fill_chunked`].
pub fn map_chunked<T, U, F>(items: &[T], seed: StreamSeed, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&mut ChaCha8Rng, &T) -> U + Sync,
{
    let chunks: Vec<Vec<U>> = items
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut rng = seed.rng(c as u64);
            chunk.iter().map(|item| f(&mut rng, item)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for chunk in chunks {
        out.extend(chunk);
    }
    out
}
