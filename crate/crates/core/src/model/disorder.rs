//! Reproducible on-site disorder.
//!
//! Generator: ChaCha8 keystream (`rand_chacha` 0.3, `ChaCha8Rng`), keyed by
//! `seed_from_u64(seed)`, stream 0. The value for lattice cell `(n1, n2)` and
//! orbital `o` is read at word position `2 * idx` with
//! `idx = zz(n1) << 32 | zz(n2) << 8 | o` (`zz` = 24-bit zigzag code), and
//! mapped to `[-1, 1)` from the top 53 bits of the 64-bit word. Values are a
//! pure function of `(seed, n, o)`, independent of sample shape, platform and
//! evaluation order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const GENERATOR: &str = "ChaCha8 (rand_chacha 0.3) counter layout v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disorder {
    pub seed: u64,
    /// Field translation: the realization is `V(n - shift)`.
    pub shift: [i64; 2],
}

fn zigzag(v: i64) -> u64 {
    let z = ((v << 1) ^ (v >> 63)) as u64;
    assert!(z < (1 << 24), "cell coordinate {v} outside the disorder counter range");
    z
}

impl Disorder {
    pub fn new(seed: u64) -> Self {
        Disorder { seed, shift: [0, 0] }
    }

    /// The realization `T_a omega`, i.e. the field translated by `a`.
    pub fn translated(self, a: [i64; 2]) -> Self {
        Disorder { seed: self.seed, shift: [self.shift[0] + a[0], self.shift[1] + a[1]] }
    }

    /// Uniform draw on `[-1, 1)` for the untranslated field.
    pub fn raw(seed: u64, cell: [i64; 2], orbital: usize) -> f64 {
        assert!(orbital < 256);
        let idx = (zigzag(cell[0]) << 32) | (zigzag(cell[1]) << 8) | orbital as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(2 * idx as u128);
        let bits = rng.next_u64() >> 11;
        2.0 * (bits as f64 / (1u64 << 53) as f64) - 1.0
    }

    /// Field value at `cell`, with optional periodic wrapping of the
    /// translated coordinate (`period[i] = 0` means no wrap).
    pub fn value(&self, cell: [i64; 2], orbital: usize, period: [i64; 2]) -> f64 {
        let mut c = [cell[0] - self.shift[0], cell[1] - self.shift[1]];
        for i in 0..2 {
            if period[i] > 0 {
                c[i] = c[i].rem_euclid(period[i]);
            }
        }
        Self::raw(self.seed, c, orbital)
    }
}
