//! Streaming mean/variance accumulators (Welford, with Chan's merge).

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        libm::sqrt(self.variance() / self.count as f64)
    }
}

/// One [`RunningStats`] per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VecStats {
    coords: Vec<RunningStats>,
}

impl VecStats {
    pub fn new(dim: usize) -> Self {
        Self { coords: alloc::vec![RunningStats::new(); dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.coords.len());
        self.coords.iter_mut().zip(x).for_each(|(c, &v)| c.push(v));
    }

    pub fn merge(&mut self, other: &Self) {
        self.coords.iter_mut().zip(&other.coords).for_each(|(a, b)| a.merge(b));
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coord(&self, i: usize) -> &RunningStats {
        &self.coords[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.coords.iter().map(RunningStats::mean).collect()
    }

    pub fn std_errs(&self) -> Vec<f64> {
        self.coords.iter().map(RunningStats::std_err).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.coords.iter().map(RunningStats::variance).collect()
    }
}
