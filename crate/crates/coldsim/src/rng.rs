//! Deterministic, splittable pseudo-random streams.
//!
//! Cell profiles must be reproducible independent of iteration order, so
//! every draw is keyed by coordinate: the generator for a cell is seeded by
//! mixing the master seed with (bank, subarray, row, column). The same
//! mixing function derives per-module streams from the CLI master seed, so
//! adding an experiment never perturbs the draws of an existing one.
//!
//! splitmix64 is used for mixing and generation. It is not cryptographic.

/// FNV-1a 64-bit hash, used to turn domain labels into seed material.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a domain label.
///
/// This is the documented master-seed mixing function: every subsystem draws
/// from `seed_for(master, "<domain>", index)` so streams never overlap.
pub fn seed_for(master: u64, domain: &str, index: u64) -> u64 {
    let mut s = master ^ fnv1a(domain.as_bytes()) ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    splitmix64(&mut s)
}

/// Deterministic stream of pseudo-random values.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        // Fold the seed once so consecutive seeds do not yield correlated
        // first outputs.
        let mut s = seed;
        splitmix64(&mut s);
        Stream { state: s }
    }

    /// Stream keyed by a cell coordinate.
    pub fn for_cell(master: u64, bank: usize, subarray: usize, row: usize, col: usize) -> Self {
        let mut s = master;
        for part in [bank as u64, subarray as u64, row as u64, col as u64] {
            s = s.rotate_left(17) ^ part.wrapping_mul(0xD6E8FEB86659FD93);
            splitmix64(&mut s);
        }
        Stream::new(s)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the ranges used here (n << 2^64).
        self.next_u64() % n
    }

    pub fn next_bool(&mut self, p_true: f64) -> bool {
        self.next_f64() < p_true
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        if u1 <= f64::MIN_POSITIVE {
            u1 = f64::MIN_POSITIVE;
        }
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Log-normal with the given median and log-space sigma.
    /// `sigma == 0` degenerates to the median exactly.
    pub fn next_log_normal(&mut self, median: f64, sigma: f64) -> f64 {
        if !median.is_finite() {
            return median;
        }
        if sigma == 0.0 {
            return median;
        }
        median * (sigma * self.next_normal()).exp()
    }

    /// Sample `k` distinct values from [0, n). Order is draw order.
    pub fn sample_distinct(&mut self, n: u64, k: usize) -> Vec<u64> {
        debug_assert!((k as u64) <= n);
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let v = self.next_below(n);
            if !picked.contains(&v) {
                picked.push(v);
            }
        }
        picked
    }
}
