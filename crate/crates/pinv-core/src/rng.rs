//! Splittable, seeded random streams.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 generator tagged with a key from which child streams derive.
///
/// Children depend only on the parent key and the child index, never on how
/// many values the parent has produced, so work split across streams gives
/// the same results in any order.
#[derive(Clone, Debug)]
pub struct RandomStream {
    key: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        let key = splitmix(seed);
        RandomStream { key, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn split(&self, index: u64) -> RandomStream {
        let key = splitmix(self.key ^ splitmix(index.wrapping_add(0x632b_e59b_d9b4_e019)));
        RandomStream { key, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi].
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [lo, hi].
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return lo + (x % span) as i64;
            }
        }
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_independent_of_consumption() {
        let mut a = RandomStream::new(7);
        let b = RandomStream::new(7);
        a.next_f64();
        assert_eq!(a.split(3).next_f64(), b.split(3).next_f64());
        assert_ne!(b.split(3).next_f64(), b.split(4).next_f64());
    }

    #[test]
    fn ranges() {
        let mut r = RandomStream::new(1);
        for _ in 0..1000 {
            let k = r.uniform_int(-2, 3);
            assert!((-2..=3).contains(&k));
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
        assert_eq!(r.uniform_int(5, 5), 5);
    }
}
