//! Seeded RNG streams with exact save/restore.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed, stream id and word position; enough to rebuild the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub const WORDS: usize = 4 + 1 + 2;

    pub fn capture(rng: &SimRng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> SimRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    pub fn to_words(&self) -> [u64; Self::WORDS] {
        let mut w = [0u64; Self::WORDS];
        for (i, chunk) in self.seed.chunks_exact(8).enumerate() {
            w[i] = u64::from_le_bytes(chunk.try_into().unwrap());
        }
        w[4] = self.stream;
        w[5] = self.word_pos as u64;
        w[6] = (self.word_pos >> 64) as u64;
        w
    }

    pub fn from_words(w: &[u64]) -> Self {
        let mut seed = [0u8; 32];
        for i in 0..4 {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&w[i].to_le_bytes());
        }
        Self { seed, stream: w[4], word_pos: (w[5] as u128) | ((w[6] as u128) << 64) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn restore_continues_stream() {
        let mut a = seeded(17);
        for _ in 0..13 {
            a.random::<u32>();
        }
        let state = RngState::capture(&a);
        let mut b = RngState::from_words(&state.to_words()).restore();
        let xs: Vec<u64> = (0..50).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..50).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }
}
