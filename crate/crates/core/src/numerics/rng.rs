//! Seeded, portable random streams.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): a Weyl sequence
//! with increment `0x9E3779B97F4A7C15` passed through a fixed 64-bit mixer.
//! Its output for a given seed is fully specified by integer arithmetic, so
//! identical seeds produce identical draws on every platform.
//!
//! Reference sequence for seed `1234567`:
//! `6457827717110365317, 3203168211198807973, 9817491932198370423, ...`

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single-consumer random stream.
///
/// Independent consumers should each take a [`RngStream::child`] rather than
/// sharing one stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    state: u64,
    spare_normal: Option<u64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: seed,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream number `stream_id` derived from this stream's seed.
    ///
    /// The child seed is `mix64(seed ^ mix64(stream_id + 1))`, independent of
    /// how many draws the parent has already made.
    pub fn child(&self, stream_id: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, stream_id))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the bias for n far below 2^64 is negligible.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller, both outputs used).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(bits) = self.spare_normal.take() {
            return f64::from_bits(bits);
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some((radius * theta.sin()).to_bits());
        radius * theta.cos()
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Seed of child stream `stream_id` under `seed`.
pub fn derive_seed(seed: u64, stream_id: u64) -> u64 {
    mix64(seed ^ mix64(stream_id.wrapping_add(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_sequence() {
        let mut rng = RngStream::new(1_234_567);
        let got: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        assert_eq!(
            got,
            vec![
                6_457_827_717_110_365_317,
                3_203_168_211_198_807_973,
                9_817_491_932_198_370_423,
                4_593_380_528_125_082_431,
                16_408_922_859_458_223_821,
            ]
        );
        let mut zero = RngStream::new(0);
        assert_eq!(zero.next_u64(), 16_294_208_416_658_607_535);
    }

    #[test]
    fn children_are_distinct_and_stable() {
        let parent = RngStream::new(9);
        let mut a = parent.child(0);
        let mut b = parent.child(1);
        assert_ne!(a.next_u64(), b.next_u64());

        let mut used = RngStream::new(9);
        used.next_u64();
        assert_eq!(used.child(0), RngStream::new(9).child(0));
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = RngStream::new(3);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.below(7) < 7);
        }
    }

    #[test]
    fn permutation_is_bijection() {
        let mut rng = RngStream::new(11);
        let mut p = rng.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
