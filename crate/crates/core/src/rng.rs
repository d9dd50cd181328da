//! Deterministic counter-based random streams.
//!
//! The generator is a SplitMix64-style counter construction: draw `i` of a
//! stream with key `k` is `mix(k + (i+1)*GAMMA)` where `mix` is the 64-bit
//! avalanche finalizer. Child streams re-key with a domain-separated hash of
//! `(parent key, label)`, so a child's draws depend only on the parent's seed
//! and the label, never on how many draws the parent has made. The exact
//! constants below are part of the on-disk contract for every seeded
//! artifact (golden files, labels, checkpoints) and must not change.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const DOMAIN_LABEL: u64 = 0xA5A5_0F0F_3C3C_9696;
const DOMAIN_INDEX: u64 = 0x5A5A_F0F0_C3C3_6969;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seeded, splittable random stream.
///
/// Instances are single-owner; share randomness across tasks by deriving
/// child streams with [`SeededRng::child_label`] or
/// [`SeededRng::child_index`].
#[derive(Debug)]
pub struct SeededRng {
    key: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            key: mix64(seed ^ GAMMA),
            counter: 0,
        }
    }

    /// Child stream keyed by a string label, independent of the parent's
    /// draw position.
    pub fn child_label(&self, label: &str) -> SeededRng {
        let tag = fnv1a(label.as_bytes());
        SeededRng {
            key: mix64(self.key ^ tag.wrapping_mul(GAMMA) ^ DOMAIN_LABEL),
            counter: 0,
        }
    }

    /// Child stream keyed by an integer index (e.g. per noise component or
    /// per manifest row).
    pub fn child_index(&self, index: u64) -> SeededRng {
        SeededRng {
            key: mix64(self.key ^ index.wrapping_mul(GAMMA) ^ DOMAIN_INDEX),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection (unbiased).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Standard normal via Box-Muller; consumes exactly two raw draws.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // in (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson draw by Knuth's product method, chunked so the running
    /// product never underflows (sums of independent Poissons are Poisson).
    pub fn poisson(&mut self, mean: f64) -> u64 {
        assert!(mean.is_finite() && mean >= 0.0, "poisson mean must be >= 0");
        let mut remaining = mean;
        let mut total = 0u64;
        while remaining > 0.0 {
            let chunk = remaining.min(60.0);
            remaining -= chunk;
            let limit = (-chunk).exp();
            let mut product = 1.0;
            let mut count = 0u64;
            loop {
                product *= self.next_f64();
                if product <= limit {
                    break;
                }
                count += 1;
            }
            total += count;
        }
        total
    }

    /// ±1 with equal probability.
    #[inline]
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_sequences() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn child_streams_ignore_parent_position() {
        let parent_fresh = SeededRng::new(7);
        let mut parent_used = SeededRng::new(7);
        for _ in 0..17 {
            parent_used.next_u64();
        }
        let mut c1 = parent_fresh.child_label("noise");
        let mut c2 = parent_used.child_label("noise");
        for _ in 0..100 {
            assert_eq!(c1.next_u64(), c2.next_u64());
        }
    }

    #[test]
    fn children_with_distinct_labels_differ() {
        let parent = SeededRng::new(7);
        let mut a = parent.child_label("a");
        let mut b = parent.child_label("b");
        let mut i = parent.child_index(0);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_ne!(parent.child_label("0").next_u64(), i.next_u64());
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            let v = rng.uniform(2.0, 3.0);
            assert!((2.0..3.0).contains(&v));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = SeededRng::new(3);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.normal();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn poisson_mean_matches() {
        let mut rng = SeededRng::new(4);
        for &lambda in &[0.5, 4.0, 30.0, 128.0] {
            let n = 20_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += rng.poisson(lambda) as f64;
            }
            let mean = sum / n as f64;
            // 5 sigma of the sample-mean distribution
            let tol = 5.0 * (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < tol, "lambda {lambda} mean {mean}");
        }
    }

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut rng = SeededRng::new(5);
        for _ in 0..100 {
            assert_eq!(rng.poisson(0.0), 0);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = SeededRng::new(6);
        let mut v: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
