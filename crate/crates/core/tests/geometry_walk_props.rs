use conewalk::walk::{
    batch, duality_gap, norm_sandwich_violation, run_forward, run_path, SimulationPlan, SummaryCollector,
};
use conewalk::{hilbert_metric, Direction, DrawRecord, MatrixLaw, PositiveMatrix, RandomStream};
use proptest::prelude::*;

fn matrix(d: usize, lo: f64, hi: f64) -> impl Strategy<Value = PositiveMatrix> {
    prop::collection::vec(lo..hi, d * d).prop_map(move |e| PositiveMatrix::new(d, e).unwrap())
}

fn direction(d: usize) -> impl Strategy<Value = Direction> {
    prop::collection::vec(1e-3..1.0f64, d).prop_map(|v| Direction::normalize(&v).unwrap())
}

fn matrix_and_dir() -> impl Strategy<Value = (PositiveMatrix, PositiveMatrix, Direction, Direction)> {
    (2usize..=5).prop_flat_map(|d| (matrix(d, 0.05, 3.0), matrix(d, 0.05, 3.0), direction(d), direction(d)))
}

proptest! {
    #[test]
    fn cocycle_identity((g1, g2, x, _) in matrix_and_dir()) {
        let lhs = g2.mul(&g1).cocycle(&x);
        let rhs = g2.cocycle(&g1.act(&x)) + g1.cocycle(&x);
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }

    #[test]
    fn norm_sandwich((g, _, x, _) in matrix_and_dir()) {
        let kappa = g.fk_ratio();
        let (norm, gain) = (g.norm(), g.gain(&x));
        let slack = 1e-12 * norm;
        prop_assert!(gain <= norm + slack);
        prop_assert!(gain >= norm / (kappa * kappa) - slack);
    }

    #[test]
    fn positive_matrices_contract((g, _, x, xp) in matrix_and_dir()) {
        let before = hilbert_metric(&x, &xp);
        let after = hilbert_metric(&g.act(&x), &g.act(&xp));
        prop_assert!(after <= before);
        if before > 1e-9 {
            prop_assert!(after < before);
        }
    }

    #[test]
    fn metric_symmetric_with_identity((_, _, x, xp) in matrix_and_dir()) {
        prop_assert_eq!(hilbert_metric(&x, &xp), hilbert_metric(&xp, &x));
        prop_assert_eq!(hilbert_metric(&x, &x), 0.0);
    }

    #[test]
    fn scaling_is_projectively_invisible((g, _, x, _) in matrix_and_dir(), k in -20i32..20, c in 0.01..100.0f64) {
        // Powers of two scale exactly; other factors up to rounding.
        let exact = g.scaled(2f64.powi(k)).unwrap();
        prop_assert_eq!(exact.act(&x), g.act(&x));
        let scaled = g.scaled(c).unwrap();
        for (a, b) in scaled.act(&x).coords().iter().zip(g.act(&x).coords()) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON);
        }
        prop_assert!((scaled.cocycle(&x) - g.cocycle(&x) - c.ln()).abs() <= 1e-12);
    }

    #[test]
    fn min_gain_is_below_every_gain((g, _, x, _) in matrix_and_dir()) {
        prop_assert!(g.min_gain() <= g.gain(&x) * (1.0 + 1e-12));
    }
}

fn finite_law_2d() -> impl Strategy<Value = MatrixLaw> {
    prop::collection::vec((matrix(2, 0.1, 3.0), 0.1..1.0f64), 1..4).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        MatrixLaw::finite(atoms.into_iter().map(|(g, p)| (g, p / total)).collect()).unwrap()
    })
}

/// `log |g_n ... g_1 x|` from the raw product, no renormalization.
fn direct_log_norm(mats: &[PositiveMatrix], x: &Direction) -> f64 {
    let mut v = x.coords().to_vec();
    for g in mats {
        v = g.apply(&v);
    }
    v.iter().sum::<f64>().ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn renormalized_walk_matches_direct_product(law in finite_law_2d(), seed in any::<u64>(), n in 1usize..=25) {
        let x = Direction::barycenter(2);
        let draw = DrawRecord::draw(&law, seed, 0, n, true);
        let direct = direct_log_norm(draw.matrices.as_ref().unwrap(), &x);
        let fast = run_forward(&law, &x, n, RandomStream::new(seed, 0)).unwrap();
        let (path, _) = run_path(&law, &x, n, RandomStream::new(seed, 0)).unwrap();
        prop_assert!((fast.final_log_norm - direct).abs() <= 1e-8);
        prop_assert!((path[n - 1] - direct).abs() <= 1e-8);
        let min = path.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((fast.prefix_min - min).abs() <= 1e-8);
    }

    #[test]
    fn pathwise_norm_sandwich_and_duality(law in finite_law_2d(), seed in any::<u64>(), n in 1usize..=30) {
        let kappa = law.kappa_sup().value;
        let x = Direction::barycenter(2);
        let xp = Direction::normalize(&[0.3, 0.7]).unwrap();
        let draw = DrawRecord::draw(&law, seed, 3, n, true);
        prop_assert!(norm_sandwich_violation(&draw, &x, n, kappa).unwrap() <= 1e-9);
        let gamma = 2.0 * kappa.ln() + 2f64.ln();
        prop_assert!(duality_gap(&draw, &x, &xp, n).unwrap() <= gamma + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn batches_do_not_depend_on_thread_count(law in finite_law_2d(), seed in any::<u64>()) {
        let plan = SimulationPlan::new(law, Direction::barycenter(2), 40, 9000, seed).unwrap();
        let run = |k: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
            pool.install(|| batch(&plan, || SummaryCollector::new(40, &[0.0, 1.0])).unwrap().report())
        };
        let (a, b) = (run(1), run(4));
        prop_assert_eq!(a.mean_log_norm.to_bits(), b.mean_log_norm.to_bits());
        prop_assert_eq!(a, b);
    }
}
