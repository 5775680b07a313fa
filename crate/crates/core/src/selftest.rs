//! Property suites for the analytic kernels and the cone geometry, shared by
//! the `selftest` command and the test suite.

use serde::{Deserialize, Serialize};

use crate::geometry::{hilbert_metric, Direction, PositiveMatrix};
use crate::kernels::{
    conv_identity_check, h_norm, psi, rayleigh_pdf, smooth_indicator, KernelConfig,
};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub pass: bool,
    /// Worst observed deviation, or a count, depending on the check.
    pub worst: f64,
}

fn check(suite: &str, name: &str, pass: bool, worst: f64) -> Check {
    Check { suite: suite.into(), name: name.into(), pass, worst }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

pub fn kernel_suite(cfg: &KernelConfig) -> Vec<Check> {
    let suite = "kernels";
    let mut out = Vec::new();

    // symmetry, zero line and positivity on a 100 x 100 grid
    let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.06).collect();
    let mut worst_sym = 0.0f64;
    let mut positive = true;
    for &y in &grid {
        for &z in &grid {
            worst_sym = worst_sym.max((psi(y, z) - psi(z, y)).abs());
            positive &= psi(y, z) > 0.0;
        }
    }
    let zero_line = grid.iter().all(|&y| psi(y, 0.0) == 0.0 && psi(-y, 0.0) == 0.0);
    out.push(check(suite, "psi_symmetric", worst_sym == 0.0, worst_sym));
    out.push(check(suite, "psi_zero_line", zero_line, 0.0));
    out.push(check(suite, "psi_positive_quadrant", positive, 0.0));

    // ell is a probability density on R+
    let mut worst_mass = 0.0f64;
    let mut failed = false;
    for y in [0.0, 0.01, 0.1, 1.0, 3.0, 10.0] {
        match cfg.quadrature.integrate(|z| cfg.ell(y, z), 0.0, y + 12.0) {
            Ok(m) => worst_mass = worst_mass.max((m - 1.0).abs()),
            Err(_) => failed = true,
        }
    }
    out.push(check(suite, "ell_unit_mass", !failed && worst_mass <= 1e-8, worst_mass));

    let l0 = (cfg.l_func(0.0) - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs();
    out.push(check(suite, "l_at_zero", l0 <= 1e-12, l0));

    // convolution identity on a 5 x 5 x 5 grid
    let mut worst_conv = 0.0f64;
    let mut failed = false;
    for v in [0.05, 0.25, 0.5, 0.75, 0.95] {
        for x in [-2.0, -0.5, 0.3, 1.0, 2.5] {
            for y in [-1.5, -0.2, 0.0, 0.8, 2.0] {
                match conv_identity_check(cfg, v, x, y) {
                    Ok((lhs, rhs)) => worst_conv = worst_conv.max((lhs - rhs).abs()),
                    Err(_) => failed = true,
                }
            }
        }
    }
    out.push(check(suite, "convolution_identity", !failed && worst_conv <= 1e-8, worst_conv));

    // smooth indicator sandwich
    let mut sandwich = true;
    for eps in [0.01, 0.3, 2.0] {
        for i in -400..=400 {
            let t = i as f64 * eps / 100.0;
            let ind = if t > 0.0 { 1.0 } else { 0.0 };
            sandwich &= smooth_indicator(eps, t - eps) <= ind && ind <= smooth_indicator(eps, t);
        }
    }
    out.push(check(suite, "indicator_sandwich", sandwich, 0.0));

    // no seam where ell switches to its limit
    let y = cfg.y_zero_threshold;
    let seam = (0..=500)
        .map(|i| {
            let z = i as f64 * 0.01;
            (psi(y, z) / h_norm(y) - rayleigh_pdf(z)).abs()
        })
        .fold(0.0, f64::max);
    out.push(check(suite, "ell_limit_stitching", seam <= 1e-6, seam));
    out
}

fn random_direction(d: usize, s: &mut RandomStream) -> Direction {
    let v: Vec<f64> = (0..d).map(|_| s.next_f64() + 1e-3).collect();
    Direction::normalize(&v).expect("positive vector")
}

fn random_matrix(d: usize, lo: f64, hi: f64, s: &mut RandomStream) -> PositiveMatrix {
    let entries = (0..d * d).map(|_| lo + (hi - lo) * s.next_f64()).collect();
    PositiveMatrix::new(d, entries).expect("positive entries")
}

/// Every point of the simplex grid with spacing `1/k` in dimension `d` (2 or 3).
fn simplex_grid(d: usize, k: usize) -> Vec<Direction> {
    let kf = k as f64;
    match d {
        2 => (0..=k)
            .map(|i| Direction::from_normalized_unchecked(vec![i as f64 / kf, (k - i) as f64 / kf]))
            .collect(),
        3 => (0..=k)
            .flat_map(|i| {
                (0..=k - i).map(move |j| {
                    Direction::from_normalized_unchecked(vec![
                        i as f64 / kf,
                        j as f64 / kf,
                        (k - i - j) as f64 / kf,
                    ])
                })
            })
            .collect(),
        _ => unreachable!("grid only for d = 2, 3"),
    }
}

pub fn geometry_suite(seed: u64) -> Vec<Check> {
    let suite = "geometry";
    let mut out = Vec::new();
    let mut s = RandomStream::new(seed, 0);

    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let d = 2 + i % 4;
        let g1 = random_matrix(d, 0.05, 3.0, &mut s);
        let g2 = random_matrix(d, 0.05, 3.0, &mut s);
        let x = random_direction(d, &mut s);
        let err = g2.mul(&g1).cocycle(&x) - g2.cocycle(&g1.act(&x)) - g1.cocycle(&x);
        worst = worst.max(err.abs());
    }
    out.push(check(suite, "cocycle_identity", worst <= 1e-10, worst));

    // ||g||/κ² <= |gx| <= ||g|| for 10^4 pairs with κ <= 2
    let mut violations = 0u32;
    for i in 0..10_000 {
        let d = 2 + i % 4;
        let g = random_matrix(d, 1.0, 2.0, &mut s);
        let x = random_direction(d, &mut s);
        let kappa = g.fk_ratio();
        let (norm, gain) = (g.norm(), g.cocycle(&x).exp());
        let slack = 1e-12 * norm;
        if kappa > 2.0 || gain > norm + slack || gain < norm / (kappa * kappa) - slack {
            violations += 1;
        }
    }
    out.push(check(suite, "norm_sandwich", violations == 0, f64::from(violations)));

    // contraction for positive matrices, non-expansion for allowable ones
    let mut strict = true;
    let mut worst_expand = 0.0f64;
    let sparse = [
        PositiveMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).expect("allowable"),
        PositiveMatrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]).expect("allowable"),
        PositiveMatrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 0.0], vec![1.0, 0.0, 1.0]]).expect("allowable"),
    ];
    for i in 0..2_000 {
        let d = 2 + i % 3;
        let g = random_matrix(d, 0.1, 2.0, &mut s);
        let (x, xp) = (random_direction(d, &mut s), random_direction(d, &mut s));
        let before = hilbert_metric(&x, &xp);
        let after = hilbert_metric(&g.act(&x), &g.act(&xp));
        if x != xp && after >= before {
            strict = false;
        }
        let h = &sparse[i % sparse.len()];
        let (x, xp) = (random_direction(h.dim(), &mut s), random_direction(h.dim(), &mut s));
        worst_expand = worst_expand.max(hilbert_metric(&h.act(&x), &h.act(&xp)) - hilbert_metric(&x, &xp));
    }
    out.push(check(suite, "strict_contraction", strict, 0.0));
    out.push(check(suite, "non_expansion", worst_expand <= 1e-12, worst_expand.max(0.0)));

    let mut symmetric = true;
    for _ in 0..1_000 {
        let (x, xp) = (random_direction(3, &mut s), random_direction(3, &mut s));
        symmetric &= hilbert_metric(&x, &xp) == hilbert_metric(&xp, &x) && hilbert_metric(&x, &x) == 0.0;
        symmetric &= x == xp || hilbert_metric(&x, &xp) > 0.0;
    }
    out.push(check(suite, "metric_symmetry_identity", symmetric, 0.0));

    // min_gain against a 10^4-point simplex grid
    let mut worst = 0.0f64;
    for (d, k) in [(2, 9_999), (3, 140)] {
        let grid = simplex_grid(d, k);
        for _ in 0..20 {
            let g = random_matrix(d, 0.0, 3.0, &mut s);
            let brute = grid.iter().map(|x| g.gain(x)).fold(f64::INFINITY, f64::min);
            worst = worst.max((brute - g.min_gain()).abs());
        }
    }
    out.push(check(suite, "min_gain_vs_grid", worst <= 1e-9, worst));
    out
}
