//! Exactly rounded floating-point summation.
//!
//! Forward reductions on the tape sum with `ExactAcc` instead of a naive
//! running total. The result is the f64 nearest the exact real sum, which
//! makes every reduction independent of operand order — permuting the ads
//! in an instance then permutes network activations bitwise, with no
//! last-ulp drift from re-associated additions. Shewchuk's nonoverlapping
//! expansions, with the final rounding fix-up from Hettinger's recipe.

/// Running exactly-rounded sum. `add` maintains the invariant that
/// `partials` holds nonoverlapping components of the exact partial sum in
/// increasing magnitude; `sum` rounds them to the nearest f64.
pub(crate) struct ExactAcc {
    // 40 components cover the full f64 exponent range; 64 is headroom.
    partials: [f64; 64],
    len: usize,
    // Non-finite inputs bypass the expansion; combined by IEEE addition
    // (sticky NaN, matching what a naive sum would produce).
    poison: Option<f64>,
}

impl ExactAcc {
    pub fn new() -> Self {
        ExactAcc {
            partials: [0.0; 64],
            len: 0,
            poison: None,
        }
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.poison = Some(match self.poison {
                None => x,
                Some(p) => p + x,
            });
            return;
        }
        let mut i = 0;
        for j in 0..self.len {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.len = i;
        if x != 0.0 {
            if !x.is_finite() {
                // Intermediate overflow: the exact sum left f64 range.
                self.poison = Some(x);
                self.len = 0;
                return;
            }
            self.partials[self.len] = x;
            self.len += 1;
        }
    }

    pub fn sum(&self) -> f64 {
        if let Some(p) = self.poison {
            return p;
        }
        if self.len == 0 {
            return 0.0;
        }
        // Add components from largest down until the running sum goes
        // inexact, then nudge for the round-half-even boundary case where
        // the discarded tail decides the direction.
        let mut n = self.len - 1;
        let mut hi = self.partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = self.partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && self.partials[n - 1] < 0.0) || (lo > 0.0 && self.partials[n - 1] > 0.0))
        {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

pub(crate) fn fsum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = ExactAcc::new();
    for x in xs {
        acc.add(x);
    }
    acc.sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_plain_addition_when_exact() {
        assert_eq!(fsum([1.0, 2.0, 3.0]), 6.0);
        assert_eq!(fsum([]), 0.0);
        assert_eq!(fsum([-5.25]), -5.25);
        assert_eq!(fsum([0.5, 0.25, 0.125]), 0.875);
    }

    #[test]
    fn survives_catastrophic_cancellation() {
        assert_eq!(fsum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(fsum([1e16, 1.0, -1e16, 1.0]), 2.0);
        // Naive left-to-right gets this one wrong.
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(fsum(xs), 2.0);
        assert_ne!(xs.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn every_permutation_gives_identical_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..30);
            let mut xs: Vec<f64> = (0..n)
                .map(|_| {
                    let mag = rng.gen_range(-30.0..30.0);
                    rng.gen_range(-1.0..1.0) * f64::powf(2.0, mag)
                })
                .collect();
            let reference = fsum(xs.iter().copied());
            for _ in 0..8 {
                xs.shuffle(&mut rng);
                let shuffled = fsum(xs.iter().copied());
                assert_eq!(reference.to_bits(), shuffled.to_bits());
            }
        }
    }

    #[test]
    fn agrees_with_two_term_ieee_addition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a: f64 = rng.gen_range(-1e6..1e6);
            let b: f64 = rng.gen_range(-1e-6..1e-6);
            // Two-term rounded sum is already exact-rounded by IEEE.
            assert_eq!(fsum([a, b]).to_bits(), (a + b).to_bits());
        }
    }

    #[test]
    fn half_ulp_boundaries_round_correctly() {
        // 2^53 is the first integer whose successor is not representable;
        // the tail decides whether the odd half rounds up.
        let big = 2f64.powi(53);
        assert_eq!(fsum([big, 1.0]), big); // ties to even
        assert_eq!(fsum([big, 1.0, f64::MIN_POSITIVE]), big + 2.0);
        assert_eq!(fsum([big, 1.0, -f64::MIN_POSITIVE]), big);
    }

    #[test]
    fn non_finite_inputs_poison_like_naive_addition() {
        assert_eq!(fsum([1.0, f64::INFINITY, 2.0]), f64::INFINITY);
        assert!(fsum([f64::INFINITY, f64::NEG_INFINITY]).is_nan());
        assert!(fsum([1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn signed_zeros_collapse_to_positive_zero() {
        let s = fsum([0.0, -0.0]);
        assert_eq!(s, 0.0);
        assert!(s.is_sign_positive());
    }
}
