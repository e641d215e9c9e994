//! Counter-based Gaussian streams.
//!
//! Each stream is a ChaCha8 keystream selected by `(seed, stream)`. Normals are
//! produced in Box–Muller pairs that always consume exactly two 64-bit words,
//! so the position of the `k`-th normal in a stream is a fixed function of `k`
//! and any block of draws can be addressed directly with [`NoiseStream::seek`].
//! Results therefore never depend on which thread runs which stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed with a sequence of keys (SplitMix64 finalizer).
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15;
    for &k in keys {
        h = mix64(h ^ mix64(k.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    mix64(h)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seekable stream of uniform and standard-normal variates.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    /// 32-bit words consumed by one block of `width` normals.
    pub fn words_per_block(width: usize) -> u128 {
        4 * width.div_ceil(2) as u128
    }

    /// Positions the stream at the start of block `index`, where every block
    /// holds `width` normals.
    pub fn seek(&mut self, index: u64, width: usize) {
        self.rng
            .set_word_pos(index as u128 * Self::words_per_block(width));
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift, one word per draw).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fills `out` with standard normals, consuming `words_per_block(out.len())`
    /// words.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_mut(2);
        for pair in &mut chunks {
            let u1 = self.uniform();
            let u2 = self.uniform();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            pair[0] = r * theta.cos();
            if pair.len() > 1 {
                pair[1] = r * theta.sin();
            }
        }
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normals(&mut v);
        v
    }
}
