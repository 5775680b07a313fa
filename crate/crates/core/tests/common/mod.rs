#![allow(dead_code)]

use conewalk::walk::{Collector, TrajectoryOutcome};
use conewalk::Result;

/// Lyapunov exponent of the two-matrix test ensemble (grid transfer operator, converged to 1e-9).
pub const TWO_MATRIX_LAMBDA: f64 = 0.915_479_541_6;

/// Exact law of `(S_n, min_k S_k)` for a finite ensemble, by enumerating all
/// words with unnormalized vector products.
pub struct Enumeration {
    /// `(probability, S_n, prefix_min)` per word.
    pub leaves: Vec<(f64, f64, f64)>,
}

impl Enumeration {
    /// `atoms` are `(row-major d x d entries, probability)`; `shift` is added
    /// to every increment.
    pub fn new(atoms: &[(Vec<f64>, f64)], x: &[f64], n: usize, shift: f64) -> Self {
        let mut leaves = Vec::with_capacity(atoms.len().pow(n as u32));
        let x_norm: f64 = x.iter().sum();
        walk(atoms, x.to_vec(), x_norm, 1.0, 0, n, f64::INFINITY, shift, &mut leaves);
        Self { leaves }
    }

    pub fn expect(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.leaves.iter().map(|&(p, s, m)| p * f(s, m)).sum()
    }
}

#[allow(clippy::too_many_arguments)]
fn walk(
    atoms: &[(Vec<f64>, f64)],
    v: Vec<f64>,
    x_norm: f64,
    prob: f64,
    depth: usize,
    n: usize,
    prefix_min: f64,
    shift: f64,
    out: &mut Vec<(f64, f64, f64)>,
) {
    if depth == n {
        let s = (v.iter().sum::<f64>() / x_norm).ln() + shift * n as f64;
        out.push((prob, s, prefix_min));
        return;
    }
    let d = v.len();
    for (g, p) in atoms {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| g[i * d + j] * v[j]).sum()).collect();
        let s = (w.iter().sum::<f64>() / x_norm).ln() + shift * (depth + 1) as f64;
        walk(atoms, w, x_norm, prob * p, depth + 1, n, prefix_min.min(s), shift, out);
    }
}

/// Moments, survival and window counts at a single time.
#[derive(Default)]
pub struct MomentCollector {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub sum_4: f64,
    pub levels: Vec<f64>,
    pub survivors: Vec<u64>,
    /// `(y, lo, hi)`
    pub windows: Vec<(f64, f64, f64)>,
    pub hits: Vec<u64>,
}

impl MomentCollector {
    pub fn new(levels: &[f64], windows: &[(f64, f64, f64)]) -> Self {
        Self {
            levels: levels.to_vec(),
            survivors: vec![0; levels.len()],
            windows: windows.to_vec(),
            hits: vec![0; windows.len()],
            ..Self::default()
        }
    }
}

impl Collector for MomentCollector {
    fn observe(&mut self, o: &TrajectoryOutcome) -> Result<()> {
        let s = o.final_log_norm;
        self.count += 1;
        self.sum += s;
        self.sum_sq += s * s;
        self.sum_4 += s.powi(4);
        for (c, &y) in self.survivors.iter_mut().zip(&self.levels) {
            *c += u64::from(o.survives(y));
        }
        for (c, &(y, lo, hi)) in self.hits.iter_mut().zip(&self.windows) {
            *c += u64::from(o.survives(y) && (lo..=hi).contains(&(y + s)));
        }
        Ok(())
    }

    fn merge(&mut self, later: Self) -> Result<()> {
        self.count += later.count;
        self.sum += later.sum;
        self.sum_sq += later.sum_sq;
        self.sum_4 += later.sum_4;
        self.survivors.iter_mut().zip(later.survivors).for_each(|(a, b)| *a += b);
        self.hits.iter_mut().zip(later.hits).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

pub fn two_matrix_atoms() -> Vec<(Vec<f64>, f64)> {
    vec![(vec![2.0, 1.0, 1.0, 1.0], 0.5), (vec![1.0, 1.0, 1.0, 2.0], 0.5)]
}
