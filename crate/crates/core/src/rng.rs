//! Seeded, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type NcaRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> NcaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream derived from `seed`, used to give each worker or run
/// its own generator without consuming the parent.
pub fn split(seed: u64, stream: u64) -> NcaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Complete position of a generator, enough to resume it bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &NcaRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> NcaRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn capture_restore_resumes_stream() {
        let mut a = split(7, 3);
        for _ in 0..13 {
            let _: u32 = a.gen();
        }
        let mut b = RngState::capture(&a).restore();
        for _ in 0..100 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
