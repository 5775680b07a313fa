//! The Markov walk `(X_n, S_n)`, its dual, and reproducible batches.
//!
//! The fast path applies the sampled matrices to an unnormalized iterate
//! for a short block of steps (at most 64, fewer if the iterate leaves a
//! safe range), reads the step gains off the iterate's L1 mass, then
//! renormalizes the direction and takes one logarithm per block. Prefix minima and exit times are resolved from the per-step
//! partial products of the block, so they are consistent with the final
//! log-norm to the last bit: a path survives level `y` exactly when
//! `y + prefix_min >= 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::MatrixLaw;
use crate::error::{Error, Result};
use crate::geometry::{Direction, PositiveMatrix};
use crate::rng::RandomStream;
use crate::stats::{SumAccumulator, BLOCK};

const FLUSH: usize = 64;
const SAFE_LOW: f64 = 1e-120;
const SAFE_HIGH: f64 = 1e120;
/// Blocks handed to the thread pool per reduction round.
const BLOCKS_PER_ROUND: usize = 256;

/// Which walk a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `S_n = log |g_n ... g_1 x|`.
    #[default]
    Forward,
    /// `S*_n = -log |h_n ... h_1 x|` with `h_i` i.i.d. copies of `g^T`.
    Dual,
}

/// First `k >= 1` with `y + S_k < 0`, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStep {
    Exited(usize),
    Survived,
}

/// Values of the dual walk attached to a retained forward trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualValues {
    pub final_log_norm: f64,
    pub prefix_min: f64,
    /// `max_k |(-S_n + S_k) - S*_{n-k}|`.
    pub duality_gap: f64,
    /// Largest violation of `log||g_n..g_{k+1}|| - 2 log kappa <= S_n - S_k <= log||g_n..g_{k+1}||`
    /// over `k`, zero when the sandwich holds.
    pub norm_sandwich_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub index: u64,
    pub n: usize,
    pub final_direction: Direction,
    pub final_log_norm: f64,
    /// `min_{1 <= j <= n} S_j`.
    pub prefix_min: f64,
    /// Exit relative to the plan's `exit_level`; `Survived` when none was set.
    pub exit_step: ExitStep,
    pub dual: Option<DualValues>,
}

impl TrajectoryOutcome {
    /// `tau_{x,y} > n`.
    #[inline]
    pub fn survives(&self, y: f64) -> bool {
        y + self.prefix_min >= 0.0
    }
}

/// Incremental walker over one random stream.
pub(crate) struct Walker<'a> {
    law: &'a MatrixLaw,
    sign: f64,
    stream: RandomStream,
    x: Vec<f64>,
    buf: Vec<f64>,
    out: Vec<f64>,
    steps: usize,
    raw: f64,
    prefix_min: f64,
    exit_level: Option<f64>,
    exit_step: Option<usize>,
}

impl<'a> Walker<'a> {
    /// `law` must already be transposed for the dual orientation.
    pub(crate) fn new(
        law: &'a MatrixLaw,
        start: &Direction,
        stream: RandomStream,
        orientation: Orientation,
        exit_level: Option<f64>,
    ) -> Self {
        let d = law.dim();
        Self {
            law,
            sign: match orientation {
                Orientation::Forward => 1.0,
                Orientation::Dual => -1.0,
            },
            stream,
            x: start.coords().to_vec(),
            buf: vec![0.0; d * d],
            out: vec![0.0; d],
            steps: 0,
            raw: 0.0,
            prefix_min: f64::INFINITY,
            exit_level,
            exit_step: None,
        }
    }

    pub(crate) fn advance_to(&mut self, n: usize) {
        let mut prods = [0.0f64; FLUSH];
        let scale = self.law.scale();
        while self.steps < n {
            let want = FLUSH.min(n - self.steps);
            // `x` is L1-normalized here, so the sum of the unnormalized
            // iterate is the product of the step gains so far.
            let mut scale_pow = 1.0;
            let mut len = 0;
            while len < want {
                let mass = self.law.apply_draw(&mut self.stream, &mut self.x, &mut self.buf, &mut self.out);
                scale_pow *= scale;
                let prod = mass * scale_pow;
                prods[len] = prod;
                len += 1;
                if !(SAFE_LOW..SAFE_HIGH).contains(&mass) || !(SAFE_LOW..SAFE_HIGH).contains(&prod) {
                    break;
                }
            }
            let mass: f64 = self.x.iter().sum();
            for xi in &mut self.x {
                *xi /= mass;
            }
            let block = &prods[..len];
            let base = self.raw;
            // Only the extreme that bounds the oriented walk from below is needed.
            let extreme = if self.sign > 0.0 {
                block.iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                block.iter().copied().fold(0.0, f64::max)
            };
            let block_min = self.sign * (base + extreme.ln());
            self.prefix_min = self.prefix_min.min(block_min);
            if let (Some(y), None) = (self.exit_level, self.exit_step) {
                if y + block_min < 0.0 {
                    let j = block
                        .iter()
                        .position(|&p| y + self.sign * (base + p.ln()) < 0.0)
                        .expect("block extreme crosses the level");
                    self.exit_step = Some(self.steps + j + 1);
                }
            }
            self.raw = base + block[len - 1].ln();
            self.steps += len;
        }
    }

    pub(crate) fn value(&self) -> f64 {
        self.sign * self.raw
    }

    pub(crate) fn prefix_min(&self) -> f64 {
        self.prefix_min
    }

    pub(crate) fn direction(&self) -> Direction {
        Direction::from_normalized_unchecked(self.x.clone())
    }

    pub(crate) fn outcome(&self, index: u64) -> TrajectoryOutcome {
        TrajectoryOutcome {
            index,
            n: self.steps,
            final_direction: self.direction(),
            final_log_norm: self.value(),
            prefix_min: self.prefix_min(),
            exit_step: self.exit_step.map_or(ExitStep::Survived, ExitStep::Exited),
            dual: None,
        }
    }
}

/// Runs the forward walk for `n` steps from `x`.
pub fn run_forward(law: &MatrixLaw, x: &Direction, n: usize, stream: RandomStream) -> Result<TrajectoryOutcome> {
    run_forward_with_exit(law, x, n, stream, None)
}

/// As [`run_forward`], additionally resolving the exit time for level `y`
/// while streaming.
pub fn run_forward_with_exit(
    law: &MatrixLaw,
    x: &Direction,
    n: usize,
    stream: RandomStream,
    exit_level: Option<f64>,
) -> Result<TrajectoryOutcome> {
    check_start(law, x)?;
    if n == 0 {
        return Err(Error::InvalidParameter("number of steps must be at least 1".into()));
    }
    let mut w = Walker::new(law, x, stream, Orientation::Forward, exit_level);
    w.advance_to(n);
    Ok(w.outcome(0))
}

/// `S_1, ..., S_n` computed step by step as sums of cocycles, with the
/// final direction.
pub fn run_path(law: &MatrixLaw, x: &Direction, n: usize, mut stream: RandomStream) -> Result<(Vec<f64>, Direction)> {
    check_start(law, x)?;
    let mut dir = x.clone();
    let mut s = 0.0;
    let mut path = Vec::with_capacity(n);
    for _ in 0..n {
        let g = law.sample(&mut stream);
        s += g.cocycle(&dir);
        dir = g.act(&dir);
        path.push(s);
    }
    Ok((path, dir))
}

/// First `k >= 1` with `y + S_k < 0` along a path `S_1, ..., S_n`.
pub fn exit_time(path: &[f64], y: f64) -> ExitStep {
    path.iter()
        .position(|s| y + s < 0.0)
        .map_or(ExitStep::Survived, |k| ExitStep::Exited(k + 1))
}

fn check_start(law: &MatrixLaw, x: &Direction) -> Result<()> {
    if law.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: x.dim(),
        });
    }
    Ok(())
}

/// Replay key of a trajectory, optionally with its sampled matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub seed: u64,
    pub index: u64,
    pub matrices: Option<Vec<PositiveMatrix>>,
}

impl DrawRecord {
    /// Regenerates the first `n` draws of trajectory `(seed, index)`.
    pub fn draw(law: &MatrixLaw, seed: u64, index: u64, n: usize, retain: bool) -> Self {
        let matrices = retain.then(|| {
            let mut stream = RandomStream::new(seed, index);
            (0..n).map(|_| law.sample(&mut stream)).collect()
        });
        Self { seed, index, matrices }
    }

    fn matrices(&self, n: usize) -> Result<&[PositiveMatrix]> {
        let m = self.matrices.as_deref().ok_or(Error::MissingMatrices)?;
        if m.len() < n {
            return Err(Error::InvalidParameter(format!(
                "draw retains {} matrices, {n} requested",
                m.len()
            )));
        }
        Ok(&m[..n])
    }

    /// `S_0 = 0, S_1, ..., S_n` of the forward walk driven by the retained matrices.
    pub fn forward_log_norms(&self, x: &Direction, n: usize) -> Result<(Vec<f64>, Direction)> {
        let mats = self.matrices(n)?;
        let mut dir = x.clone();
        let mut s = 0.0;
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        for g in mats {
            s += g.cocycle(&dir);
            dir = g.act(&dir);
            out.push(s);
        }
        Ok((out, dir))
    }
}

/// `S*_1, ..., S*_n` for `h_i = g_{n-i+1}^T`, i.e. the transposed matrices
/// in reverse order.
pub fn run_dual(draw: &DrawRecord, xp: &Direction, n: usize) -> Result<Vec<f64>> {
    let mats = draw.matrices(n)?;
    let mut dir = xp.clone();
    let mut s = 0.0;
    let mut out = Vec::with_capacity(n);
    for g in mats.iter().rev() {
        let h = g.transpose();
        s -= h.cocycle(&dir);
        dir = h.act(&dir);
        out.push(s);
    }
    Ok(out)
}

/// `max_{0 <= k <= n} |(-S_n + S_k) - S*_{n-k}|` on shared matrices.
pub fn duality_gap(draw: &DrawRecord, x: &Direction, xp: &Direction, n: usize) -> Result<f64> {
    let (fwd, _) = draw.forward_log_norms(x, n)?;
    let dual = run_dual(draw, xp, n)?;
    Ok(gap_from_paths(&fwd, &dual))
}

fn gap_from_paths(fwd: &[f64], dual: &[f64]) -> f64 {
    let n = fwd.len() - 1;
    (0..=n)
        .map(|k| {
            let dual_val = if k == n { 0.0 } else { dual[n - k - 1] };
            ((fwd[k] - fwd[n]) - dual_val).abs()
        })
        .fold(0.0, f64::max)
}

/// `log ||g_n ... g_{k+1}||` for `k = 0..n` (last entry is `log ||I|| = 0`),
/// accumulated with renormalization so long products do not overflow.
pub fn suffix_product_log_norms(mats: &[PositiveMatrix]) -> Vec<f64> {
    let n = mats.len();
    let mut out = vec![0.0; n + 1];
    let Some(last) = mats.last() else {
        return out;
    };
    let d = last.dim();
    let mut m = PositiveMatrix::identity(d);
    let mut log_scale = 0.0;
    for k in (0..n).rev() {
        m = m.mul(&mats[k]);
        let c = m.entries().iter().copied().fold(0.0, f64::max);
        m = m.scaled(1.0 / c).expect("positive maximum entry");
        log_scale += c.ln();
        out[k] = log_scale + m.norm().ln();
    }
    out
}

/// Largest violation of the pathwise norm sandwich for a retained draw.
pub fn norm_sandwich_violation(draw: &DrawRecord, x: &Direction, n: usize, kappa: f64) -> Result<f64> {
    let (fwd, _) = draw.forward_log_norms(x, n)?;
    let norms = suffix_product_log_norms(draw.matrices(n)?);
    let slack = 2.0 * kappa.ln();
    Ok((0..=n)
        .map(|k| {
            let inc = fwd[n] - fwd[k];
            (inc - norms[k]).max(norms[k] - slack - inc).max(0.0)
        })
        .fold(0.0, f64::max))
}

/// Consumer of trajectory outcomes inside [`batch`].
pub trait Collector: Send + Sized {
    fn observe(&mut self, outcome: &TrajectoryOutcome) -> Result<()>;
    /// Absorbs a collector that saw later trajectory indices.
    fn merge(&mut self, later: Self) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub law: MatrixLaw,
    pub start: Direction,
    pub n: usize,
    pub num_traj: u64,
    pub seed: u64,
    #[serde(default)]
    pub retain_matrices: bool,
    #[serde(default)]
    pub dual_start: Option<Direction>,
    /// Extra observation times below `n`; every trajectory is reported at
    /// each checkpoint and at `n`.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub exit_level: Option<f64>,
    #[serde(default)]
    pub orientation: Orientation,
}

impl SimulationPlan {
    pub fn new(law: MatrixLaw, start: Direction, n: usize, num_traj: u64, seed: u64) -> Result<Self> {
        let plan = Self {
            law,
            start,
            n,
            num_traj,
            seed,
            retain_matrices: false,
            dual_start: None,
            checkpoints: Vec::new(),
            exit_level: None,
            orientation: Orientation::Forward,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_checkpoints(mut self, mut checkpoints: Vec<usize>) -> Self {
        checkpoints.sort_unstable();
        checkpoints.dedup();
        self.checkpoints = checkpoints;
        self
    }

    pub fn with_exit_level(mut self, y: f64) -> Self {
        self.exit_level = Some(y);
        self
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_retained_matrices(mut self, dual_start: Option<Direction>) -> Self {
        self.retain_matrices = true;
        self.dual_start = dual_start;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("plan needs n >= 1".into()));
        }
        if self.num_traj == 0 {
            return Err(Error::InvalidParameter("plan needs num_traj >= 1".into()));
        }
        check_start(&self.law, &self.start)?;
        if let Some(xp) = &self.dual_start {
            check_start(&self.law, xp)?;
        }
        if self.checkpoints.iter().any(|&c| c == 0 || c > self.n) {
            return Err(Error::InvalidParameter("checkpoints must lie in 1..=n".into()));
        }
        if self.retain_matrices && self.orientation == Orientation::Dual {
            return Err(Error::InvalidParameter(
                "retained draws are replayed forward; use dual_start for dual values".into(),
            ));
        }
        Ok(())
    }

    fn observation_times(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.checkpoints.iter().copied().filter(|&c| c < self.n).collect();
        t.push(self.n);
        t
    }
}

/// Runs every trajectory of the plan and feeds its outcomes to collectors.
///
/// Trajectories are cut into blocks of [`BLOCK`] consecutive indices; each
/// block gets a fresh collector from `make`, and block collectors are merged
/// in index order. The result is therefore independent of the number of
/// worker threads.
pub fn batch<C, F>(plan: &SimulationPlan, make: F) -> Result<C>
where
    C: Collector,
    F: Fn() -> C + Sync,
{
    plan.validate()?;
    let walk_law = match plan.orientation {
        Orientation::Forward => plan.law.clone(),
        Orientation::Dual => plan.law.transposed(),
    };
    let times = plan.observation_times();
    let kappa = plan.law.kappa_sup().value;
    let block = BLOCK as u64;
    let nblocks = plan.num_traj.div_ceil(block);

    let run_block = |b: u64| -> Result<C> {
        let mut col = make();
        let lo = b * block;
        let hi = (lo + block).min(plan.num_traj);
        for index in lo..hi {
            if plan.retain_matrices {
                for out in retained_outcomes(plan, index, &times, kappa)? {
                    col.observe(&out)?;
                }
            } else {
                let stream = RandomStream::new(plan.seed, index);
                let mut w = Walker::new(&walk_law, &plan.start, stream, plan.orientation, plan.exit_level);
                for &t in &times {
                    w.advance_to(t);
                    col.observe(&w.outcome(index))?;
                }
            }
        }
        Ok(col)
    };

    let mut acc: Option<C> = None;
    let mut b = 0;
    while b < nblocks {
        let end = (b + BLOCKS_PER_ROUND as u64).min(nblocks);
        let parts: Vec<Result<C>> = (b..end).into_par_iter().map(run_block).collect();
        for part in parts {
            let part = part?;
            match acc.as_mut() {
                None => acc = Some(part),
                Some(a) => a.merge(part)?,
            }
        }
        b = end;
    }
    Ok(acc.expect("at least one block"))
}

fn retained_outcomes(plan: &SimulationPlan, index: u64, times: &[usize], kappa: f64) -> Result<Vec<TrajectoryOutcome>> {
    let draw = DrawRecord::draw(&plan.law, plan.seed, index, plan.n, true);
    let (fwd, _) = draw.forward_log_norms(&plan.start, plan.n)?;
    let mats = draw.matrices.as_deref().expect("retained");
    let mut dir = plan.start.clone();
    let mut outs = Vec::with_capacity(times.len());
    let mut prefix_min = f64::INFINITY;
    let mut exit = None;
    let mut k = 0;
    for &t in times {
        while k < t {
            dir = mats[k].act(&dir);
            k += 1;
            prefix_min = prefix_min.min(fwd[k]);
            if let (Some(y), None) = (plan.exit_level, exit) {
                if y + fwd[k] < 0.0 {
                    exit = Some(k);
                }
            }
        }
        let dual = match &plan.dual_start {
            Some(xp) => {
                let sub = DrawRecord {
                    seed: plan.seed,
                    index,
                    matrices: Some(mats[..t].to_vec()),
                };
                let dual_path = run_dual(&sub, xp, t)?;
                let violation = if kappa.is_finite() {
                    norm_sandwich_violation(&sub, &plan.start, t, kappa)?
                } else {
                    f64::NAN
                };
                Some(DualValues {
                    final_log_norm: dual_path[t - 1],
                    prefix_min: dual_path.iter().copied().fold(f64::INFINITY, f64::min),
                    duality_gap: gap_from_paths(&fwd[..=t], &dual_path),
                    norm_sandwich_violation: violation,
                })
            }
            None => None,
        };
        outs.push(TrajectoryOutcome {
            index,
            n: t,
            final_direction: dir.clone(),
            final_log_norm: fwd[t],
            prefix_min,
            exit_step: exit.map_or(ExitStep::Survived, ExitStep::Exited),
            dual,
        });
    }
    Ok(outs)
}

/// Aggregate statistics of a batch at its final time: moments of `S_n` and
/// survival counts for a list of levels.
#[derive(Debug, Clone, Default)]
pub struct SummaryCollector {
    n: usize,
    levels: Vec<f64>,
    log_norm: SumAccumulator,
    prefix_min: SumAccumulator,
    survivors: Vec<u64>,
    max_duality_gap: f64,
}

impl SummaryCollector {
    pub fn new(n: usize, levels: &[f64]) -> Self {
        Self {
            n,
            levels: levels.to_vec(),
            survivors: vec![0; levels.len()],
            ..Self::default()
        }
    }

    pub fn report(&self) -> BatchSummary {
        let count = self.log_norm.count();
        BatchSummary {
            n: self.n,
            num_traj: count,
            mean_log_norm: self.log_norm.mean(),
            mean_log_norm_stderr: self.log_norm.stderr(),
            mean_prefix_min: self.prefix_min.mean(),
            survival: self
                .levels
                .iter()
                .zip(&self.survivors)
                .map(|(&y, &s)| {
                    let (p, se) = crate::stats::binomial(s, count);
                    SurvivalCount {
                        y,
                        survivors: s,
                        probability: p,
                        stderr: se,
                    }
                })
                .collect(),
            max_duality_gap: (self.max_duality_gap > 0.0).then_some(self.max_duality_gap),
        }
    }
}

impl Collector for SummaryCollector {
    fn observe(&mut self, o: &TrajectoryOutcome) -> Result<()> {
        if o.n != self.n {
            return Ok(());
        }
        self.log_norm.push(o.final_log_norm);
        self.prefix_min.push(o.prefix_min);
        for (s, &y) in self.survivors.iter_mut().zip(&self.levels) {
            *s += u64::from(o.survives(y));
        }
        if let Some(d) = &o.dual {
            self.max_duality_gap = self.max_duality_gap.max(d.duality_gap);
        }
        Ok(())
    }

    fn merge(&mut self, later: Self) -> Result<()> {
        self.log_norm.merge(later.log_norm);
        self.prefix_min.merge(later.prefix_min);
        for (a, b) in self.survivors.iter_mut().zip(later.survivors) {
            *a += b;
        }
        self.max_duality_gap = self.max_duality_gap.max(later.max_duality_gap);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCount {
    pub y: f64,
    pub survivors: u64,
    pub probability: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: usize,
    pub num_traj: u64,
    pub mean_log_norm: f64,
    pub mean_log_norm_stderr: f64,
    pub mean_prefix_min: f64,
    pub survival: Vec<SurvivalCount>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_duality_gap: Option<f64>,
}

/// Per-trajectory rows at the final time, for CSV export.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryTable {
    n: usize,
    pub rows: Vec<(u64, f64, f64)>,
}

impl TrajectoryTable {
    pub fn new(n: usize) -> Self {
        Self { n, rows: Vec::new() }
    }

    /// CSV with columns `index,S_n,prefix_min,survived_y=<y>...`.
    pub fn to_csv(&self, levels: &[f64]) -> String {
        let mut out = String::from("index,S_n,prefix_min");
        for y in levels {
            out.push_str(&format!(",survived_y={y}"));
        }
        out.push('\n');
        for &(i, s, m) in &self.rows {
            out.push_str(&format!("{i},{s:.17e},{m:.17e}"));
            for y in levels {
                out.push_str(if y + m >= 0.0 { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

impl Collector for TrajectoryTable {
    fn observe(&mut self, o: &TrajectoryOutcome) -> Result<()> {
        if o.n == self.n {
            self.rows.push((o.index, o.final_log_norm, o.prefix_min));
        }
        Ok(())
    }

    fn merge(&mut self, later: Self) -> Result<()> {
        self.rows.extend(later.rows);
        Ok(())
    }
}
