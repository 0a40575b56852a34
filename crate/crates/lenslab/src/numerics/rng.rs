//! Counter-based pseudo-random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so streams can
//! be handed to parallel workers in any order without changing what each one
//! produces. Seeds are first-class experimental inputs here: the same
//! `(seed, stream)` pair must yield the same sequence on every platform.

/// Identifier of the mixing function, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "splitmix64-counter-v1";

/// Deterministic counter-based RNG.
///
/// `draw(n)` for any `n` is independent of how many draws happened before on
/// other streams, and two `Rng`s with the same `(seed, stream)` walk the same
/// sequence.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    counter: u64,
    /// Spare Gaussian from Box-Muller, consumed before the next pair is drawn.
    cached_normal: Option<f32>,
}

#[inline]
fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn mix(seed: u64, stream: u64, counter: u64) -> u64 {
    // Two finalization rounds; one round leaves visible structure when only
    // the counter changes by 1.
    let z = seed
        ^ splitmix_finalize(stream.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x6a09e667f3bcc909))
        ^ counter.wrapping_mul(0xd6e8feb86659fd93);
    splitmix_finalize(splitmix_finalize(z).wrapping_add(counter))
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Rng { seed, stream, counter: 0, cached_normal: None }
    }

    /// Child RNG on an unrelated stream, for fan-out to parallel work items.
    pub fn substream(&self, id: u64) -> Rng {
        Rng::new(self.seed, splitmix_finalize(self.stream.wrapping_add(0x9e3779b97f4a7c15).wrapping_mul(2).wrapping_add(id)) ^ id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.seed, self.stream, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 24 bits of mantissa.
    pub fn uniform(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / 16_777_216.0)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 128-bit multiply keeps the bias below 2^-64; fine at lab scale.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f32 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        // Avoid ln(0); the offset keeps u1 in (0, 1].
        let u1 = (self.next_u64() >> 40) as f64 * (1.0 / 16_777_216.0);
        let u1 = (u1 + 1.0 / 16_777_216.0).min(1.0);
        let u2 = (self.next_u64() >> 40) as f64 * (1.0 / 16_777_216.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some((r * theta.sin()) as f32);
        (r * theta.cos()) as f32
    }

    pub fn fill_normal(&mut self, out: &mut [f32]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Fisher-Yates shuffle of indices `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
