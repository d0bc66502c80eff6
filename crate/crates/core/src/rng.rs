//! Counter-based, splittable random streams.
//!
//! Every path draws from its own ChaCha8 stream. The 256-bit key is the
//! little-endian encoding of `(seed, lane, 0, 0)` and the 64-bit stream id is
//! the path index, so path `k` never depends on how many other paths are
//! simulated or in which order. `lane` separates independent experiments that
//! share a seed (e.g. the cells of a coverage grid).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, lane: u64, path: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&lane.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(path);
        PathRng(inner)
    }

    /// Stream for `path` on lane 0.
    pub fn for_path(seed: u64, path: u64) -> Self {
        Self::new(seed, 0, path)
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits
            let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for PathRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
