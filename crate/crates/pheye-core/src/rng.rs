//! Seeded pseudo-random generator used for every stochastic choice in the
//! crate (weight init, dropout masks, synthetic data). The algorithm is
//! pinned so that runs replicate bit-for-bit across platforms:
//!
//! * integer stream: SplitMix64 (Steele, Lea & Flood's finalizer constants)
//! * uniform doubles: top 53 bits mapped into (0, 1]
//! * normal samples: Box-Muller on consecutive uniform pairs, with the
//!   sine half of each pair cached and returned on the next call

/// Deterministic SplitMix64 generator with Box-Muller normal sampling.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in the half-open interval (0, 1].
    pub fn next_uniform(&mut self) -> f64 {
        // 53-bit mantissa; the +1 keeps the result strictly positive so
        // that ln(u) below is always finite.
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn next_normal_scaled(&mut self, std: f64) -> f64 {
        self.next_normal() * std
    }

    /// Uniform integer in [0, bound) by rejection-free modulo; bound must
    /// be small relative to 2^64 (true for every use here).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        self.next_u64() % bound
    }

    /// Derive an independent stream for a named sub-component.
    pub fn fork(&mut self, tag: u64) -> Rng {
        Rng::new(self.next_u64() ^ tag.wrapping_mul(0x9e3779b97f4a7c15))
    }
}
