//! SplitMix64 generator: the single randomness source for a run.
//!
//! The algorithm is the public-domain `splitmix64` by Sebastiano Vigna
//! (finalizer constants 0xbf58476d1ce4e5b9 / 0x94d049bb133111eb). It is fixed
//! here rather than taken from a crate so that a recorded seed reproduces the
//! same draw sequence forever, independent of dependency upgrades.

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw from `[0, bound]` via rejection sampling (no modulo bias).
    pub fn next_inclusive(&mut self, bound: u64) -> u64 {
        if bound == 0 {
            return 0;
        }
        if bound == u64::MAX {
            return self.next_u64();
        }
        let span = bound + 1;
        let zone = (u64::MAX / span) * span;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % span;
            }
        }
    }

    /// Fills `buf` with generated bytes (used for synthetic image pixels).
    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let word = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }
}
