//! Seeded randomness for reproducible experiments.
//!
//! The generator is SplitMix64, chosen because it is fully specified by
//! three 64-bit constants and therefore reproducible bit-for-bit in any
//! implementation language:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z  = state
//! z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
//! z ^= z >> 27;  z *= 0x94D049BB133111EB
//! z ^= z >> 31
//! ```
//!
//! Uniform doubles take the top 53 bits of `z`. Gaussian samples use the
//! Box-Muller transform on two consecutive uniforms, again to keep streams
//! portable across languages.

use crate::linalg::C64;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const MIX1: u64 = 0xBF58476D1CE4E5B9;
const MIX2: u64 = 0x94D049BB133111EB;

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream for a labelled sub-task (a trial index,
    /// an experiment phase, ...). Splitting is one mixing step applied to
    /// `seed XOR (label+1)*GOLDEN`, so sub-streams are reproducible from the
    /// root seed alone.
    pub fn derive(seed: u64, label: u64) -> Self {
        let mut probe = SplitMix64::new(seed ^ label.wrapping_add(1).wrapping_mul(GOLDEN));
        SplitMix64::new(probe.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX2);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; never returns zero, so it is safe under `ln`.
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn next_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// A standard-normal pair via Box-Muller.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Complex number with independent standard-normal real and imaginary
    /// parts (one Box-Muller pair per sample).
    pub fn complex_gaussian(&mut self) -> C64 {
        let (re, im) = self.normal_pair();
        C64::new(re, im)
    }
}
