//! Deterministic accumulation and small statistical helpers.

use serde::{Deserialize, Serialize};

/// Number of values buffered before a pairwise flush. Batches are cut into
/// blocks of this many trajectories, so each block flushes exactly once.
pub const BLOCK: usize = 4096;

/// Pairwise (tree) summation of a slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Running sum of values and squared values with a fixed reduction order:
/// values are buffered and reduced pairwise in blocks of [`BLOCK`], block
/// totals are added in arrival order.
#[derive(Debug, Clone, Default)]
pub struct SumAccumulator {
    buf: Vec<f64>,
    sq_buf: Vec<f64>,
    sum: f64,
    sum_sq: f64,
    count: u64,
}

impl SumAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.buf.push(v);
        self.sq_buf.push(v * v);
        self.count += 1;
        if self.buf.len() == BLOCK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        self.sum += pairwise_sum(&self.buf);
        self.sum_sq += pairwise_sum(&self.sq_buf);
        // Release the buffers: finished block accumulators wait for merging.
        self.buf = Vec::new();
        self.sq_buf = Vec::new();
    }

    /// Absorbs an accumulator holding later values.
    pub fn merge(&mut self, mut later: SumAccumulator) {
        self.flush();
        later.flush();
        self.sum += later.sum;
        self.sum_sq += later.sum_sq;
        self.count += later.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn totals(&self) -> (f64, f64) {
        (
            self.sum + pairwise_sum(&self.buf),
            self.sum_sq + pairwise_sum(&self.sq_buf),
        )
    }

    pub fn sum(&self) -> f64 {
        self.totals().0
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum() / self.count as f64
    }

    /// Standard error of the mean, from the unbiased sample variance.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let (s, sq) = self.totals();
        let mean = s / n;
        let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub method: String,
}

impl ConfidenceEstimate {
    pub fn from_accumulator(acc: &SumAccumulator, method: impl Into<String>) -> Self {
        Self {
            value: acc.mean(),
            stderr: acc.stderr(),
            n_samples: acc.count(),
            method: method.into(),
        }
    }

    /// `|self - target| <= k * stderr + slack`.
    pub fn agrees_with(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr + slack
    }
}

/// Binomial proportion and its standard error.
pub fn binomial(hits: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// `sqrt(a^2 + b^2)`, the standard error of a difference of independent estimates.
pub fn joint_stderr(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and a
/// continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = cdf(s);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
