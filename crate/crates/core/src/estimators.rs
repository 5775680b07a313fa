//! Monte Carlo and grid estimators of the quantities the limit theorems
//! consume: the Lyapunov exponent, the asymptotic variance, the stationary
//! law of the projective chain, the harmonic functions `V` and `V*`, and a
//! Poisson-equation solve for `d = 2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ContractionCheck, MatrixLaw};
use crate::error::{Error, Result};
use crate::geometry::Direction;
use crate::rng::RandomStream;
use crate::stats::{joint_stderr, ConfidenceEstimate, SumAccumulator, BLOCK};
use crate::walk::{batch, Collector, Orientation, SimulationPlan, TrajectoryOutcome};

// ---------------------------------------------------------------------------
// Lyapunov exponent and variance

/// Accumulates `f(S_last - S_first)` per trajectory.
struct IncrementCollector {
    first: usize,
    last: usize,
    pending: f64,
    acc: SumAccumulator,
    transform: fn(f64, usize, usize) -> f64,
}

impl Collector for IncrementCollector {
    fn observe(&mut self, o: &TrajectoryOutcome) -> Result<()> {
        if o.n == self.first {
            self.pending = o.final_log_norm;
        }
        if o.n == self.last {
            let start = if self.first == 0 { 0.0 } else { self.pending };
            self.acc.push((self.transform)(o.final_log_norm - start, self.first, self.last));
        }
        Ok(())
    }

    fn merge(&mut self, later: Self) -> Result<()> {
        self.acc.merge(later.acc);
        Ok(())
    }
}

/// Mean of `(S_n - S_b)/(n - b)` over `m` trajectories from `start`.
///
/// A positive `burn_in = b` discards the transient of the projective chain,
/// which otherwise biases the estimate by `O(1/n)`.
pub fn lyapunov(
    law: &MatrixLaw,
    start: &Direction,
    n: usize,
    burn_in: usize,
    m: u64,
    seed: u64,
) -> Result<ConfidenceEstimate> {
    if burn_in >= n {
        return Err(Error::InvalidParameter("burn_in must be below n".into()));
    }
    let mut plan = SimulationPlan::new(law.clone(), start.clone(), n, m, seed)?;
    if burn_in > 0 {
        plan = plan.with_checkpoints(vec![burn_in]);
    }
    let col = batch(&plan, || IncrementCollector {
        first: burn_in,
        last: n,
        pending: 0.0,
        acc: SumAccumulator::new(),
        transform: |d, b, n| d / (n - b) as f64,
    })?;
    Ok(ConfidenceEstimate::from_accumulator(&col.acc, "mc_mean_increment_rate"))
}

/// Variance estimates at `n` and `2n`; their difference exposes the
/// residual `1/n` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub at_n: ConfidenceEstimate,
    pub at_2n: ConfidenceEstimate,
}

struct SquareCollector {
    times: [usize; 2],
    lyapunov_hat: f64,
    accs: [SumAccumulator; 2],
}

impl Collector for SquareCollector {
    fn observe(&mut self, o: &TrajectoryOutcome) -> Result<()> {
        for (t, acc) in self.times.iter().zip(&mut self.accs) {
            if o.n == *t {
                let c = o.final_log_norm - *t as f64 * self.lyapunov_hat;
                acc.push(c * c / *t as f64);
            }
        }
        Ok(())
    }

    fn merge(&mut self, later: Self) -> Result<()> {
        let [a, b] = later.accs;
        self.accs[0].merge(a);
        self.accs[1].merge(b);
        Ok(())
    }
}

/// Mean of `(S_n - n λ̂)² / n` over `m` trajectories, reported at `n` and `2n`.
pub fn sigma2(
    law: &MatrixLaw,
    start: &Direction,
    lyapunov_hat: f64,
    n: usize,
    m: u64,
    seed: u64,
) -> Result<Sigma2Estimate> {
    let plan = SimulationPlan::new(law.clone(), start.clone(), 2 * n, m, seed)?.with_checkpoints(vec![n]);
    let col = batch(&plan, || SquareCollector {
        times: [n, 2 * n],
        lyapunov_hat,
        accs: Default::default(),
    })?;
    Ok(Sigma2Estimate {
        at_n: ConfidenceEstimate::from_accumulator(&col.accs[0], "mc_centered_square"),
        at_2n: ConfidenceEstimate::from_accumulator(&col.accs[1], "mc_centered_square"),
    })
}

// ---------------------------------------------------------------------------
// Stationary measure

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    pub points: Vec<Direction>,
    pub weights: Vec<f64>,
    /// Masses of `bins` equal bins of the first coordinate on `[0, 1]`; `d = 2` only.
    pub histogram: Option<Vec<f64>>,
    /// Whether the law reached a strictly positive product (A1); when false
    /// the chain need not forget its start.
    pub contracting: bool,
}

impl EmpiricalMeasure {
    pub fn from_points(dim: usize, points: Vec<Direction>, bins: usize, contracting: bool) -> Self {
        let w = 1.0 / points.len() as f64;
        let histogram = (dim == 2 && bins > 0).then(|| {
            let mut h = vec![0.0; bins];
            for p in &points {
                h[bin_of(p.coords()[0], bins)] += w;
            }
            h
        });
        Self { dim, weights: vec![w; points.len()], points, histogram, contracting }
    }

    pub fn expectation<F: Fn(&Direction) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn bin_center(&self, i: usize) -> Option<f64> {
        self.histogram.as_ref().map(|h| (i as f64 + 0.5) / h.len() as f64)
    }

    /// Center of the heaviest histogram bin.
    pub fn mode(&self) -> Option<f64> {
        let h = self.histogram.as_ref()?;
        let (i, _) = h.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        self.bin_center(i)
    }

    /// `bin_center,mass` rows.
    pub fn to_csv(&self) -> Option<String> {
        let h = self.histogram.as_ref()?;
        let mut out = String::from("bin_center,mass\n");
        for (i, m) in h.iter().enumerate() {
            out.push_str(&format!("{},{m}\n", (i as f64 + 0.5) / h.len() as f64));
        }
        Some(out)
    }

    /// The measure after one more step of the chain from each point.
    pub fn pushforward(&self, law: &MatrixLaw, seed: u64) -> Self {
        let mut stream = RandomStream::new(seed, 0);
        let points = self.points.iter().map(|p| law.sample(&mut stream).act(p)).collect();
        let bins = self.histogram.as_ref().map_or(0, Vec::len);
        Self::from_points(self.dim, points, bins, self.contracting)
    }
}

fn bin_of(t: f64, bins: usize) -> usize {
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Occupation measure of `X_k` for `k = burn_in + stride, burn_in + 2 stride, ...`
/// up to `burn_in + samples`, along one chain.
pub fn invariant_measure(
    law: &MatrixLaw,
    start: &Direction,
    burn_in: usize,
    samples: usize,
    stride: usize,
    bins: usize,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if samples == 0 || stride == 0 || stride > samples {
        return Err(Error::InvalidParameter("need 1 <= stride <= samples".into()));
    }
    if start.dim() != law.dim() {
        return Err(Error::DimensionMismatch { expected: law.dim(), got: start.dim() });
    }
    let mut stream = RandomStream::new(seed, 0);
    let mut x = start.clone();
    for _ in 0..burn_in {
        x = law.sample(&mut stream).act(&x);
    }
    let mut points = Vec::with_capacity(samples / stride);
    for k in 1..=samples {
        x = law.sample(&mut stream).act(&x);
        if k % stride == 0 {
            points.push(x.clone());
        }
    }
    let contracting = matches!(law.verify_contraction(64, seed)?, ContractionCheck::Reached(_));
    Ok(EmpiricalMeasure::from_points(law.dim(), points, bins, contracting))
}

// ---------------------------------------------------------------------------
// Harmonic functions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub x: Direction,
    pub y: f64,
    pub n_v: usize,
    pub value: f64,
    pub stderr: f64,
    /// Estimate at `n_v / 2`, the plateau reference.
    pub half_value: f64,
    pub half_stderr: f64,
    pub plateau_flag: bool,
}

impl HarmonicEstimate {
    /// `V >= 0` up to three standard errors.
    pub fn nonnegative_within_noise(&self) -> bool {
        self.value >= -3.0 * self.stderr
    }
}

/// Estimates of `V(x, ·)` (or `V*(x', ·)`) on a grid of levels, all from
/// one batch of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTable {
    pub orientation: Orientation,
    pub n_v: usize,
    pub m: u64,
    pub seed: u64,
    pub estimates: Vec<HarmonicEstimate>,
}

impl HarmonicTable {
    /// Linear interpolation between grid levels. Beyond the top level the
    /// table is continued with slope 1, since `V(x, y) / y → 1`; below the
    /// lowest level it is held constant.
    pub fn interpolate(&self, y: f64) -> f64 {
        let e = &self.estimates;
        let first = e.first().expect("nonempty table");
        let last = e.last().expect("nonempty table");
        if y <= first.y {
            return first.value;
        }
        if y >= last.y {
            return last.value + (y - last.y);
        }
        let i = e.partition_point(|h| h.y <= y);
        let (a, b) = (&e[i - 1], &e[i]);
        a.value + (b.value - a.value) * (y - a.y) / (b.y - a.y)
    }

    /// Standard error to attach to [`Self::interpolate`]: the larger of the
    /// two bracketing estimates.
    pub fn interpolate_stderr(&self, y: f64) -> f64 {
        let e = &self.estimates;
        let i = e.partition_point(|h| h.y <= y);
        let lo = e.get(i.saturating_sub(1)).map_or(0.0, |h| h.stderr);
        let hi = e.get(i).map_or(0.0, |h| h.stderr);
        lo.max(hi)
    }

    pub fn all_plateaued(&self) -> bool {
        self.estimates.iter().all(|e| e.plateau_flag)
    }
}

struct LevelCollector {
    times: [usize; 2],
    levels: Vec<f64>,
    /// `accs[t * levels + j]`
    accs: Vec<SumAccumulator>,
}

impl Collector for LevelCollector {
    fn observe(&mut self, o: &TrajectoryOutcome) -> Result<()> {
        let l = self.levels.len();
        for (ti, &t) in self.times.iter().enumerate() {
            if o.n != t {
                continue;
            }
            for (j, &y) in self.levels.iter().enumerate() {
                let v = if o.survives(y) { y + o.final_log_norm } else { 0.0 };
                self.accs[ti * l + j].push(v);
            }
        }
        Ok(())
    }

    fn merge(&mut self, later: Self) -> Result<()> {
        for (a, b) in self.accs.iter_mut().zip(later.accs) {
            a.merge(b);
        }
        Ok(())
    }
}

/// Plateau criterion: the halving comparison moves by less than
/// `max(2 joint stderr, 1%)`.
pub fn plateau(v: f64, se: f64, half: f64, half_se: f64) -> bool {
    (v - half).abs() < (2.0 * joint_stderr(se, half_se)).max(0.01 * v.abs())
}

/// `E[(y + S_{n_v}) 1{τ > n_v}]` for every level, forward (`V`) or dual (`V*`).
pub fn harmonic_table(
    law: &MatrixLaw,
    start: &Direction,
    levels: &[f64],
    n_v: usize,
    m: u64,
    seed: u64,
    orientation: Orientation,
) -> Result<HarmonicTable> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("no levels".into()));
    }
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let half = (n_v / 2).max(1);
    let plan = SimulationPlan::new(law.clone(), start.clone(), n_v, m, seed)?
        .with_checkpoints(vec![half])
        .with_orientation(orientation);
    let l = levels.len();
    let col = batch(&plan, || LevelCollector {
        times: [half, n_v],
        levels: levels.clone(),
        accs: vec![SumAccumulator::new(); 2 * l],
    })?;
    let estimates = levels
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            let (h, f) = (&col.accs[j], &col.accs[l + j]);
            let (value, stderr) = (f.mean(), f.stderr());
            let (half_value, half_stderr) = (h.mean(), h.stderr());
            HarmonicEstimate {
                x: start.clone(),
                y,
                n_v,
                value,
                stderr,
                half_value,
                half_stderr,
                plateau_flag: plateau(value, stderr, half_value, half_stderr),
            }
        })
        .collect();
    Ok(HarmonicTable { orientation, n_v, m, seed, estimates })
}

pub fn harmonic_v(law: &MatrixLaw, x: &Direction, y: f64, n_v: usize, m: u64, seed: u64) -> Result<HarmonicEstimate> {
    let mut t = harmonic_table(law, x, &[y], n_v, m, seed, Orientation::Forward)?;
    Ok(t.estimates.remove(0))
}

/// `V*` from the dual walk driven by transposed draws.
pub fn harmonic_v_star(law: &MatrixLaw, xp: &Direction, z: f64, n_v: usize, m: u64, seed: u64) -> Result<HarmonicEstimate> {
    let mut t = harmonic_table(law, xp, &[z], n_v, m, seed, Orientation::Dual)?;
    Ok(t.estimates.remove(0))
}

// ---------------------------------------------------------------------------
// Grid transfer operator (d = 2)

/// Values on the uniform grid `t_i = i/(B-1)` of directions `(t, 1-t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn<F: Fn(&Direction) -> f64>(b: usize, f: F) -> Self {
        Self { values: (0..b).map(|i| f(&grid_point(i, b))).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear interpolation at first coordinate `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let (j, w) = interp_weights(t, self.values.len());
        self.values[j] * (1.0 - w) + if w > 0.0 { self.values[j + 1] * w } else { 0.0 }
    }

    pub fn eval_at(&self, x: &Direction) -> f64 {
        self.eval(x.coords()[0])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn grid_point(i: usize, b: usize) -> Direction {
    let t = i as f64 / (b - 1) as f64;
    Direction::from_normalized_unchecked(vec![t, 1.0 - t])
}

fn interp_weights(t: f64, b: usize) -> (usize, f64) {
    let s = t.clamp(0.0, 1.0) * (b - 1) as f64;
    let j = (s.floor() as usize).min(b - 2);
    (j, s - j as f64)
}

/// Sparse matrix of `Pf(t_i) = Σ_g p_g f(g·t_i)` with `f` interpolated linearly.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    b: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

fn require_grid_law(law: &MatrixLaw) -> Result<()> {
    if law.dim() != 2 {
        return Err(Error::UnsupportedDim(law.dim()));
    }
    if !law.is_finite_support() {
        return Err(Error::InvalidLaw("grid operators need a finite-support law".into()));
    }
    Ok(())
}

impl TransferOperator {
    pub fn new(law: &MatrixLaw, b: usize) -> Result<Self> {
        require_grid_law(law)?;
        if b < 2 {
            return Err(Error::InvalidParameter("grid needs at least 2 points".into()));
        }
        let support = law.support().expect("finite");
        let rows = (0..b)
            .map(|i| {
                let x = grid_point(i, b);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * support.len());
                for (g, p) in &support {
                    let (j, w) = interp_weights(g.act(&x).coords()[0], b);
                    row.push((j, p * (1.0 - w)));
                    if w > 0.0 {
                        row.push((j + 1, p * w));
                    }
                }
                row
            })
            .collect();
        Ok(Self { b, rows })
    }

    pub fn grid_size(&self) -> usize {
        self.b
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        assert_eq!(f.len(), self.b, "grid size mismatch");
        GridFunction {
            values: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, w)| w * f.values[j]).sum())
                .collect(),
        }
    }

    /// Stationary distribution of the grid chain by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let mut pi = vec![1.0 / self.b as f64; self.b];
        for _ in 0..100_000 {
            let mut next = vec![0.0; self.b];
            for (i, r) in self.rows.iter().enumerate() {
                for &(j, w) in r {
                    next[j] += pi[i] * w;
                }
            }
            let change: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if change < 1e-15 {
                break;
            }
        }
        pi
    }
}

pub fn transfer_apply(law: &MatrixLaw, f: &GridFunction) -> Result<GridFunction> {
    Ok(TransferOperator::new(law, f.len())?.apply(f))
}

/// `θ(x) = Σ_g p_g log|g x|` on the grid, the mean cocycle increment.
pub fn mean_cocycle(law: &MatrixLaw, b: usize) -> Result<GridFunction> {
    require_grid_law(law)?;
    let support = law.scaled_support().expect("finite");
    Ok(GridFunction::from_fn(b, |x| support.iter().map(|(g, p)| p * g.cocycle(x)).sum()))
}

/// Grid value of `λ = ν(θ)` for an uncentered law.
pub fn lyapunov_grid(law: &MatrixLaw, b: usize) -> Result<f64> {
    let op = TransferOperator::new(law, b)?;
    let theta = mean_cocycle(law, b)?;
    Ok(op.stationary().iter().zip(&theta.values).map(|(p, t)| p * t).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub grid_size: usize,
    /// `ψ̃ = Σ_{k ≤ K} P^k θ₀` on the grid.
    pub values: GridFunction,
    pub truncation_k: usize,
    /// `‖θ₀ − (ψ̃ − Pψ̃)‖∞`.
    pub residual: f64,
    /// `ν̂(θ)` before re-centering.
    pub theta_mean: f64,
    /// `θ₀ = θ − ν̂(θ)`.
    pub theta: GridFunction,
}

pub const DEFAULT_CENTERING_TOL: f64 = 1e-3;

pub fn poisson_solve(law: &MatrixLaw, k: usize, b: usize) -> Result<PoissonSolution> {
    poisson_solve_with_tol(law, k, b, DEFAULT_CENTERING_TOL)
}

/// Truncated Neumann series for `θ = ψ̃ − Pψ̃`. The grid stationary mean of
/// `θ` must be within `tol` of zero; it is then subtracted so the series
/// converges on the grid.
pub fn poisson_solve_with_tol(law: &MatrixLaw, k: usize, b: usize, tol: f64) -> Result<PoissonSolution> {
    let op = TransferOperator::new(law, b)?;
    let raw = mean_cocycle(law, b)?;
    let pi = op.stationary();
    let theta_mean: f64 = pi.iter().zip(&raw.values).map(|(p, t)| p * t).sum();
    if theta_mean.abs() > tol {
        return Err(Error::NotCentered(theta_mean));
    }
    let theta = GridFunction { values: raw.values.iter().map(|t| t - theta_mean).collect() };
    let mut term = theta.clone();
    let mut sum = theta.clone();
    for _ in 0..k {
        term = op.apply(&term);
        for (s, t) in sum.values.iter_mut().zip(&term.values) {
            *s += t;
        }
    }
    // θ₀ − (ψ̃ − Pψ̃) = P^{K+1} θ₀
    let residual = op.apply(&term).sup_norm();
    Ok(PoissonSolution { grid_size: b, values: sum, truncation_k: k, residual, theta_mean, theta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub num_traj: u64,
    /// `(n, max over trajectories of |S_n − M_n|)`.
    pub sup_gap: Vec<(usize, f64)>,
    /// `2 sup|ψ̃|`.
    pub bound: f64,
    /// Mean martingale increment `ρ + ψ̃(X_{k+1}) − ψ̃(X_k)` per bin of `X_k`.
    pub bin_means: Vec<Option<ConfidenceEstimate>>,
    /// Allowed systematic offset of a bin mean: `|ν̂(θ)| + residual` plus rounding slack.
    pub systematic: f64,
}

impl MartingaleCheck {
    pub fn gap_within_bound(&self) -> bool {
        self.sup_gap.iter().all(|&(_, g)| g <= self.bound + 1e-12)
    }

    /// Every populated bin mean within `k` standard errors plus the systematic offset.
    pub fn increments_centered(&self, k: f64) -> bool {
        self.bin_means
            .iter()
            .flatten()
            .all(|e| e.agrees_with(0.0, k, self.systematic))
    }
}

/// Rounding in a single increment; matters for deterministic steps such as
/// the first one from a symmetric start.
const INCREMENT_ROUNDING: f64 = 1e-12;

struct MartingalePart {
    gaps: Vec<f64>,
    bins: Vec<SumAccumulator>,
}

/// Simulates `m` trajectories and checks the martingale approximation
/// `M_n = S_n − ψ̃(x) + ψ̃(X_n)` built from `sol`.
pub fn martingale_check(
    law: &MatrixLaw,
    sol: &PoissonSolution,
    start: &Direction,
    checkpoints: &[usize],
    m: u64,
    bins: usize,
    seed: u64,
) -> Result<MartingaleCheck> {
    require_grid_law(law)?;
    if bins == 0 || checkpoints.is_empty() || m == 0 {
        return Err(Error::InvalidParameter("need bins, checkpoints and trajectories".into()));
    }
    let mut times = checkpoints.to_vec();
    times.sort_unstable();
    let n = *times.last().expect("nonempty");
    let psi = &sol.values;
    let psi0 = psi.eval_at(start);
    let nblocks = m.div_ceil(BLOCK as u64);
    let parts: Vec<MartingalePart> = (0..nblocks)
        .into_par_iter()
        .map(|blk| {
            let mut part = MartingalePart { gaps: vec![0.0; times.len()], bins: vec![SumAccumulator::new(); bins] };
            let lo = blk * BLOCK as u64;
            for index in lo..(lo + BLOCK as u64).min(m) {
                let mut stream = RandomStream::new(seed, index);
                let mut x = start.clone();
                let mut psi_x = psi0;
                let mut ti = 0;
                for step in 1..=n {
                    let g = law.sample(&mut stream);
                    let rho = g.cocycle(&x);
                    let next = g.act(&x);
                    let psi_next = psi.eval_at(&next);
                    part.bins[bin_of(x.coords()[0], bins)].push(rho + psi_next - psi_x);
                    x = next;
                    psi_x = psi_next;
                    if step == times[ti] {
                        part.gaps[ti] = part.gaps[ti].max((psi0 - psi_x).abs());
                        ti += 1;
                    }
                }
            }
            part
        })
        .collect();
    let mut gaps = vec![0.0f64; times.len()];
    let mut acc = vec![SumAccumulator::new(); bins];
    for p in parts {
        for (g, v) in gaps.iter_mut().zip(p.gaps) {
            *g = g.max(v);
        }
        for (a, b) in acc.iter_mut().zip(p.bins) {
            a.merge(b);
        }
    }
    Ok(MartingaleCheck {
        num_traj: m,
        sup_gap: times.into_iter().zip(gaps).collect(),
        bound: 2.0 * psi.sup_norm(),
        bin_means: acc
            .iter()
            .map(|a| (a.count() >= 2).then(|| ConfidenceEstimate::from_accumulator(a, "bin_mean_increment")))
            .collect(),
        systematic: sol.theta_mean.abs() + sol.residual + INCREMENT_ROUNDING,
    })
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Which theorem variant the moment and positivity conditions support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremVariant {
    /// Contraction (A1) with moments of order `2 + δ`, `δ ≥ 1`.
    PositivityDeltaAtLeastOne,
    /// Furstenberg–Kesten bound with `δ > 0`.
    FurstenbergKesten,
    NotCovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDiagnostics {
    pub lyapunov_hat: ConfidenceEstimate,
    pub sigma2_hat: ConfidenceEstimate,
    /// `None` encodes `+∞`.
    pub kappa_sup: Option<f64>,
    pub kappa_from_family_bound: bool,
    pub moment_2_delta: f64,
    pub delta: f64,
    /// Smallest length reaching a strictly positive product, `None` when failed.
    pub a1_horizon: Option<usize>,
    pub theorem_variant: TheoremVariant,
}

impl EnsembleDiagnostics {
    pub fn assemble(
        law: &MatrixLaw,
        lyapunov_hat: ConfidenceEstimate,
        sigma2_hat: ConfidenceEstimate,
        delta: f64,
        a1_search: usize,
        seed: u64,
    ) -> Result<Self> {
        let kappa = law.kappa_sup();
        let a1_horizon = match law.verify_contraction(a1_search, seed)? {
            ContractionCheck::Reached(n) => Some(n),
            ContractionCheck::Failed => None,
        };
        let moment = law.estimate_moment(delta, 100_000, seed)?;
        let theorem_variant = if a1_horizon.is_some() && delta >= 1.0 && moment.is_finite() {
            TheoremVariant::PositivityDeltaAtLeastOne
        } else if kappa.is_finite() && moment.is_finite() {
            TheoremVariant::FurstenbergKesten
        } else {
            TheoremVariant::NotCovered
        };
        Ok(Self {
            lyapunov_hat,
            sigma2_hat,
            kappa_sup: kappa.is_finite().then_some(kappa.value),
            kappa_from_family_bound: kappa.from_family_bound,
            moment_2_delta: moment,
            delta,
            a1_horizon,
            theorem_variant,
        })
    }
}

/// Empirical `inf_x P(log|g x| > c0)` over grid directions, for finite laws.
/// Reported, not certified: the infimum runs over finitely many `x`.
pub fn positivity_witness(law: &MatrixLaw, c0: f64, grid: usize) -> Result<f64> {
    let support = law
        .scaled_support()
        .ok_or_else(|| Error::InvalidLaw("positivity witness needs finite support".into()))?;
    let d = law.dim();
    let mut dirs: Vec<Direction> = (0..d).map(|i| Direction::basis(d, i)).collect();
    dirs.push(Direction::barycenter(d));
    if d == 2 && grid >= 2 {
        dirs.extend((0..grid).map(|i| grid_point(i, grid)));
    }
    Ok(dirs
        .iter()
        .map(|x| support.iter().filter(|(g, _)| g.cocycle(x) > c0).map(|(_, p)| p).sum::<f64>())
        .fold(1.0, f64::min))
}
