//! Deterministic 64-bit PRNG with labeled stream splitting.
//!
//! The generator is splitmix64: state advances by the additive constant
//! 0x9E3779B97F4A7C15 and each output is the mixed previous state
//! (xor-shift/multiply finalizer, constants 0xBF58476D1CE4E5B9 and
//! 0x94D049BB133111EB). Identical seeds produce bit-identical sequences on
//! every platform because all arithmetic is wrapping u64.
//!
//! Stream split rule: `split(label)` derives a child seed as
//! `mix64(parent_seed XOR fnv1a64(label))` where `fnv1a64` is the standard
//! FNV-1a hash of the label bytes (offset basis 0xcbf29ce484222325, prime
//! 0x100000001b3) and `mix64` is the splitmix64 output finalizer. The parent
//! keeps its original seed; distinct labels give decorrelated child streams.
//! Every reproducibility guarantee in this crate (checkpoints, synthetic
//! datasets, training runs) reduces to this one rule.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Splitmix64 generator. Cheap to copy; treat copies as forks of the stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed, seed }
    }

    /// The seed this stream was created with (not the current state).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for `label`; see the module doc for the derivation rule.
    /// The parent stream is unaffected.
    pub fn split(&self, label: &str) -> Rng {
        Rng::new(mix64(self.seed ^ fnv1a64(label.as_bytes())))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1): top 53 bits scaled by 2^-53.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Multiply-shift reduction; the modulo bias
    /// is below 2^-32 for any n representable here, irrelevant at our scales.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller. The second value of each pair is
    /// discarded so consumption is exactly two uniforms per draw, which keeps
    /// stream alignment independent of call parity.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle, descending index order.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `n` standard-normal draws.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// `n` draws uniform in [lo, hi).
    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform_in(lo, hi)).collect()
    }
}
