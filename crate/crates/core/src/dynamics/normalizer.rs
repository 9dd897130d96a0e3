use serde::{Deserialize, Serialize};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension running mean and standard deviation (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: u64,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0 }
    }

    /// Rebuilds a normalizer from stored statistics.
    pub fn from_stats(mean: Vec<f64>, std: Vec<f64>, count: u64) -> Self {
        let m2 = std.iter().map(|s| s * s * count.saturating_sub(1) as f64).collect();
        Self { mean, m2, count }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample standard deviation floored at 1e-6; 1 before any data arrives.
    pub fn std(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.std_at(i)).collect()
    }

    #[inline]
    pub fn std_at(&self, i: usize) -> f64 {
        if self.count < 2 {
            1.0
        } else {
            (self.m2[i] / (self.count - 1) as f64).sqrt().max(STD_FLOOR)
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for (i, v) in x.iter().enumerate() {
            let delta = v - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (v - self.mean[i]);
        }
    }

    pub fn update_many<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) {
        for r in rows {
            self.update(r);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| (v - self.mean[i]) / self.std_at(i)).collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, v)| v * self.std_at(i) + self.mean[i]).collect()
    }
}
