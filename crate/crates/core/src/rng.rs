//! Portable seeded random streams.
//!
//! The generator is xoshiro256++ whose 256-bit state is filled from a 64-bit
//! seed by SplitMix64. Every derived quantity (uniforms, normals, bounded
//! integers, shuffles) is defined here by explicit algorithm so that a seed
//! produces the same stream in any implementation.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 step: advances `state` and returns the next output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent sub-stream `stream` under the root `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut s = stream;
    let tag = splitmix64(&mut s);
    let mut t = seed ^ tag;
    splitmix64(&mut t)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// Independent stream number `stream` derived from `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self::seed_from_u64(derive_seed(seed, stream))
    }

    /// Splits off a child stream, advancing this one by a single draw.
    pub fn fork(&mut self) -> Self {
        let s = self.next_u64();
        Self::seed_from_u64(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the cosine branch of Box-Muller (two uniforms per draw).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n) by widening multiply. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates, swapping from the last position down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Flat Dirichlet draw on the (n-1)-simplex via normalized exponentials.
    pub fn simplex(&mut self, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - self.uniform()).ln()).collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
        } else {
            v.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        }
        v
    }

    /// Uniform point in the d-ball of the given radius.
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let r = radius * self.uniform().powf(1.0 / dim as f64);
        v.iter_mut().for_each(|x| *x *= r / norm);
        v
    }
}
