//! Seeded random streams.
//!
//! Every component draws from its own named substream so that adding draws in
//! one place never shifts the sequence seen by another. Streams are ChaCha8
//! generators keyed by a stable hash of `(seed, label)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Well-known substream labels.
pub mod labels {
    pub const ENV: &str = "env";
    pub const POLICY: &str = "policy";
    pub const MODEL_INIT: &str = "model-init";
    pub const MPPI: &str = "mppi";
    pub const LATENT: &str = "latent";
    pub const MINIBATCH: &str = "minibatch";
    pub const INTRINSIC: &str = "intrinsic";
    pub const PROBE: &str = "probe";
    pub const EVAL: &str = "eval";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A reproducible random stream identified by a 64-bit seed and a label.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let key = splitmix64(seed ^ splitmix64(fnv1a(label.as_bytes())));
        let mut bytes = [0u8; 32];
        let mut k = key;
        for chunk in bytes.chunks_mut(8) {
            k = splitmix64(k);
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        Self { seed, label: label.to_owned(), rng: ChaCha8Rng::from_seed(bytes) }
    }

    /// Derives an independent child stream; the parent's position is untouched.
    pub fn substream(&self, label: &str) -> Self {
        Self::new(self.seed, &format!("{}/{}", self.label, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform on the box `[-1, 1]^dim`.
    pub fn uniform_box(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.uniform_range(-1.0, 1.0)).collect()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Symmetric Dirichlet(1) sample, i.e. uniform on the simplex.
    pub fn dirichlet_uniform(&mut self, n: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - self.uniform()).ln()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    /// Index drawn from a categorical distribution.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
