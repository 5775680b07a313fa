use conewalk::estimators::harmonic_v;
use conewalk::harness::{
    prepare, verify_caravenna, verify_large_y, verify_local_theorem, verify_target, Budgets, CellGrid,
    ExperimentSpec, TargetFunction, Theorem, Units,
};
use conewalk::kernels::{main_term_thm1, KernelConfig, TheoremInputs};
use conewalk::stats::linear_fit;
use conewalk::walk::duality_gap;
use conewalk::{Direction, DrawRecord, MatrixLaw, PositiveMatrix};

fn budgets() -> Budgets {
    Budgets { lyapunov_m: 8192, sigma_m: 16384, n_v: 500, m_v: 200_000, nu_samples: 200_000, ..Budgets::default() }
}

fn spec(theorem: Theorem, grid: CellGrid, num_traj: u64, seed: u64) -> ExperimentSpec {
    ExperimentSpec {
        ensemble: MatrixLaw::two_matrix_test().spec(),
        center: true,
        assert_non_arithmetic: true,
        start_x: None,
        start_x_dual: None,
        grid,
        num_traj,
        budgets: budgets(),
        seed,
        theorem,
        tol: 0.15,
        delta_floor: 0.1,
        target: None,
        regime: None,
        ks_tol: 0.03,
        min_survivors: 10_000,
        kernel: KernelConfig::default(),
    }
}

fn grid(n: usize, y: f64, y_units: Units, z: f64, delta: f64) -> CellGrid {
    CellGrid { n: vec![n], y: vec![y], y_units, z: vec![z], z_units: Units::SigmaSqrtN, delta: vec![delta] }
}

#[test]
fn harmonic_function_is_harmonic_for_the_killed_walk() {
    let s = spec(Theorem::Thm1, grid(64, 1.0, Units::Absolute, 0.5, 1.0), 1000, 11);
    let prep = prepare(&s).unwrap();
    let x = Direction::barycenter(2);
    let (y, n_v, m) = (1.0, 400, 200_000);
    let here = harmonic_v(&prep.law, &x, y, n_v, m, 21).unwrap();
    let (mut next, mut var) = (0.0, 0.0);
    for (k, (g, p)) in prep.law.scaled_support().unwrap().into_iter().enumerate() {
        let y1 = y + g.cocycle(&x);
        if y1 >= 0.0 {
            let v = harmonic_v(&prep.law, &g.act(&x), y1, n_v, m, 22 + k as u64).unwrap();
            next += p * v.value;
            var += (p * v.stderr).powi(2);
        }
    }
    let se = (here.stderr.powi(2) + var).sqrt();
    assert!((here.value - next).abs() <= 4.0 * se, "{} vs {} (se {se})", here.value, next);
}

#[test]
fn finite_time_harmonic_function_grows_at_most_like_sqrt_n() {
    let cfg = KernelConfig::default();
    let sigma = 0.04;
    for (y, v) in [(0.5, 1.1), (2.0, 2.6), (8.0, 8.7)] {
        let bound = sigma * v / y;
        for n in [64u64, 256, 1024, 4096, 16384, 65536] {
            let inp = TheoremInputs { y, z: 0.0, delta_window: 1.0, n, sigma_hat: sigma, v_hat: v, v_star_hat: None };
            let ratio = inp.v_n(&cfg) / (n as f64).sqrt();
            assert!(ratio <= bound * (1.0 + 1e-9), "y = {y}, n = {n}: {ratio} > {bound}");
        }
    }
}

#[test]
fn target_sandwich_and_zero_target() {
    let (z, delta, eps) = (0.5, 1.0, 0.25);
    let s = spec(Theorem::Thm1, grid(256, 1.0, Units::Absolute, z, delta), 100_000, 5);
    let ind = verify_local_theorem(&s).unwrap().cells[0].clone();
    let inner = verify_target(&s, &TargetFunction::hat(0.0, delta)).unwrap().cells[0].clone();
    let outer = verify_target(&s, &TargetFunction::trapezoid(-eps, delta + eps, eps)).unwrap().cells[0].clone();
    // Same trajectories, so the ordering holds path by path.
    assert!(inner.mc_prob <= ind.mc_prob + 1e-12, "{} {}", inner.mc_prob, ind.mc_prob);
    assert!(ind.mc_prob <= outer.mc_prob + 1e-12, "{} {}", ind.mc_prob, outer.mc_prob);
    assert!(inner.theory <= ind.theory * (1.0 + 1e-6));
    assert!(ind.theory <= outer.theory * (1.0 + 1e-6));

    let zero = TargetFunction { a: vec![1.0, 1.0], b_knots: vec![(0.0, 0.0), (1.0, 0.0)] };
    let r = verify_target(&s, &zero).unwrap();
    assert_eq!(r.cells[0].mc_prob, 0.0);
    assert_eq!(r.cells[0].theory, 0.0);
    assert!(r.pass);
}

#[test]
fn separable_target_with_a_first_coordinate() {
    let s = spec(Theorem::Target, grid(1024, 2.0, Units::Absolute, 0.5, 1.0), 300_000, 8);
    let f = TargetFunction { a: vec![0.0, 1.0], b_knots: vec![(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)] };
    let r = verify_target(&s, &f).unwrap();
    let nu_a = r.metrics["nu_hat_of_a"];
    assert!(nu_a > 0.05 && nu_a < 0.95, "{nu_a}");
    let c = &r.cells[0];
    assert!(c.ratio.is_some_and(|q| (q - 1.0).abs() <= 0.15), "{c:?}");
}

#[test]
fn caravenna_term_degrades_as_y_grows() {
    let n = 4096;
    let run = |y: f64| {
        let r = verify_caravenna(&spec(Theorem::Caravenna, grid(n, y, Units::Absolute, 0.5, 1.0), 200_000, 3)).unwrap();
        r.cells[0].ratio.expect("above floor")
    };
    let small = run(1.0);
    assert!((small - 1.0).abs() <= 0.15, "{small}");
    let near = run((n as f64).powf(0.1));
    let far = run((n as f64).powf(0.4));
    assert!((far - 1.0).abs() > (near - 1.0).abs(), "{near} {far}");
}

#[test]
fn large_y_term_at_two_sigma_sqrt_n() {
    let r = verify_large_y(&spec(Theorem::LargeY, grid(1024, 2.0, Units::SigmaSqrtN, 0.5, 1.0), 400_000, 4)).unwrap();
    let c = &r.cells[0];
    assert!(c.ratio.is_some_and(|q| (q - 1.0).abs() <= 0.15), "{c:?}");
    assert!(!r.metrics.contains_key("cells_outside_regime"));
}

#[test]
fn far_windows_pass_by_floor_and_reports_carry_provenance() {
    let r = verify_local_theorem(&spec(Theorem::Thm1, grid(256, 1.0, Units::Absolute, 10.0, 1.0), 20_000, 9)).unwrap();
    let c = &r.cells[0];
    assert!(c.floor && c.pass && c.ratio.is_none(), "{c:?}");
    let p = &r.provenance;
    assert_eq!(p.ensemble_sha256.len(), 64);
    assert_eq!(p.seed, 9);
    assert_eq!(p.derived_seeds.len(), 7);
    assert!(!p.software_version.is_empty());
    assert!(p.v_table.is_some());
    assert!(r.to_csv().starts_with("n,y,z,delta,mc_prob,mc_stderr,theory,ratio,pass\n"));
}

#[test]
fn dropping_the_dual_factor_breaks_the_rate() {
    // With z = σ√n / 2 the window probability decays like n^{-1/2}; the
    // bound without (1 + V*_n) would need n^{-3/2} and drifts upward.
    let cfg = KernelConfig::default();
    let (sigma, y, v) = (0.04, 1.0, 1.6);
    let ns = [256u64, 1024, 4096, 16384];
    let scaled: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let z = 0.5 * sigma * (n as f64).sqrt();
            let inp = TheoremInputs { y, z, delta_window: 1.0, n, sigma_hat: sigma, v_hat: v, v_star_hat: None };
            main_term_thm1(&cfg, &inp).unwrap() / (1.0 + inp.v_n(&cfg)) * (n as f64).powf(1.5)
        })
        .collect();
    assert!(scaled.windows(2).all(|w| w[1] > w[0]), "{scaled:?}");
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = ns.iter().map(|&n| (n as f64).powf(-1.5).ln()).collect();
    assert!((linear_fit(&xs, &ys).0 + 1.5).abs() <= 1e-12);
}

#[test]
fn identity_walk_has_no_duality_gap() {
    let law = MatrixLaw::point_mass(PositiveMatrix::identity(3));
    let draw = DrawRecord::draw(&law, 1, 0, 20, true);
    let x = Direction::normalize(&[0.2, 0.3, 0.5]).unwrap();
    let xp = Direction::barycenter(3);
    assert!(duality_gap(&draw, &x, &xp, 20).unwrap().abs() <= 1e-12);
}
