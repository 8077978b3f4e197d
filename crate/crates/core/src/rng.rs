//! Counter-based splittable random number generation.
//!
//! Every random quantity in this crate is drawn from an [`RngStream`], a
//! counter-based generator keyed by `(seed, stream_id)`: the n-th output is a
//! pure function of the key and n, computed with integer arithmetic only, so
//! identical keys yield identical sequences on every platform. Streams can be
//! split ([`RngStream::substream`]) into independent child streams without
//! touching the parent, which lets model initialization, mini-batch order,
//! and dataset noise each own a private stream derived from one master seed.
//! That separation is what keeps mini-batch sequences identical across
//! baseline and controlled runs regardless of how often the controller rolls
//! back.
//!
//! The core is the SplitMix64 output function: the stream key is avalanched
//! into a base value and the k-th output is `mix64(base + k * GOLDEN)`.

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const SPLIT_SALT: u64 = 0xa076_1d64_78bd_642f;

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic pseudo-random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    base: u64,
    counter: u64,
}

impl RngStream {
    /// Creates the stream for `(seed, stream_id)`, positioned at its start.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        // Both halves go through the full avalanche so that related seeds or
        // stream ids (0, 1, 2, ...) still produce unrelated bases.
        let base = mix64(
            mix64(seed.wrapping_add(GOLDEN)) ^ mix64(stream_id.wrapping_add(STREAM_SALT)),
        );
        RngStream { base, counter: 0 }
    }

    /// Derives an independent child stream. Does not advance `self`, so a
    /// parent can be split any number of times in any order.
    pub fn substream(&self, id: u64) -> Self {
        RngStream {
            base: mix64(self.base.wrapping_add(mix64(id ^ SPLIT_SALT))),
            counter: 0,
        }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform `f64` in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via the multiply-shift reduction.
    ///
    /// `n` must be positive.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0, "next_below requires n > 0");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Draws `n` samples from N(`mean`, `std`²) by the Box–Muller transform.
///
/// `std == 0` yields exactly `mean` for every sample; a negative or
/// non-finite `std` (or non-finite `mean`) is a parameter error. Each call
/// consumes a deterministic number of raw draws, so the stream position
/// after the call depends only on `n`.
pub fn gaussian(rng: &mut RngStream, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    if !mean.is_finite() || !std.is_finite() || std < 0.0 {
        return Err(Error::Parameter(format!(
            "gaussian requires finite mean and std >= 0, got mean={mean}, std={std}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // u1 in (0, 1] so the logarithm is always finite.
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        out.push(mean + std * (r * c));
        if out.len() < n {
            out.push(mean + std * (r * s));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_give_identical_sequences() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_stream_ids_give_distinct_sequences() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let differs = (0..16).any(|_| a.next_u64() != b.next_u64());
        assert!(differs, "streams 0 and 1 should not coincide");
    }

    #[test]
    fn distinct_seeds_give_distinct_sequences() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(2, 0);
        let differs = (0..16).any(|_| a.next_u64() != b.next_u64());
        assert!(differs);
    }

    #[test]
    fn clone_replays_from_current_position() {
        let mut a = RngStream::new(9, 3);
        for _ in 0..17 {
            a.next_u64();
        }
        let mut b = a.clone();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substream_does_not_advance_parent() {
        let mut a = RngStream::new(5, 5);
        let before = a.clone().next_u64();
        let _child = a.substream(123);
        assert_eq!(a.next_u64(), before);
    }

    #[test]
    fn substreams_are_distinct_and_reproducible() {
        let parent = RngStream::new(77, 1);
        let mut c1 = parent.substream(1);
        let mut c2 = parent.substream(2);
        let mut c1_again = parent.substream(1);
        assert_ne!(c1.next_u64(), c2.next_u64());
        let mut c1b = parent.substream(1);
        c1_again.next_u64();
        assert_eq!(c1_again.next_u64(), {
            c1b.next_u64();
            c1b.next_u64()
        });
    }

    #[test]
    fn next_f64_is_in_unit_interval() {
        let mut r = RngStream::new(3, 3);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn next_below_respects_bound() {
        let mut r = RngStream::new(11, 0);
        for _ in 0..10_000 {
            assert!(r.next_below(7) < 7);
        }
        for _ in 0..100 {
            assert_eq!(r.next_below(1), 0);
        }
    }

    #[test]
    fn gaussian_matches_law_of_large_numbers() {
        let mut r = RngStream::new(2024, 0);
        let n = 100_000;
        let xs = gaussian(&mut r, n, 0.0, 1.0).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!(mean.abs() < 0.02, "sample mean {mean} too far from 0");
        assert!((std - 1.0).abs() < 0.02, "sample std {std} too far from 1");
    }

    #[test]
    fn gaussian_zero_std_is_exactly_mean() {
        let mut r = RngStream::new(1, 1);
        let xs = gaussian(&mut r, 100, 2.5, 0.0).unwrap();
        assert!(xs.iter().all(|x| x.to_bits() == 2.5f64.to_bits()));
    }

    #[test]
    fn gaussian_rejects_bad_parameters() {
        let mut r = RngStream::new(1, 1);
        assert!(matches!(
            gaussian(&mut r, 4, 0.0, -1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            gaussian(&mut r, 4, f64::NAN, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn gaussian_zero_samples_is_empty() {
        let mut r = RngStream::new(1, 1);
        assert!(gaussian(&mut r, 0, 0.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn gaussian_is_deterministic_per_stream() {
        let mut a = RngStream::new(8, 2);
        let mut b = RngStream::new(8, 2);
        let xa = gaussian(&mut a, 33, 1.0, 2.0).unwrap();
        let xb = gaussian(&mut b, 33, 1.0, 2.0).unwrap();
        assert!(xa
            .iter()
            .zip(&xb)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
