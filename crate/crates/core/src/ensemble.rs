//! Laws on allowable matrices.
//!
//! A [`MatrixLaw`] is either a finite mixture of fixed matrices or a
//! parametric generator, together with a `log_scale`: every sampled matrix
//! is multiplied by `exp(log_scale)`. Centering the drift only touches
//! `log_scale`, so the projective chain is unchanged while `S_n` shifts by
//! exactly `n * log_scale`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_into, PositiveMatrix};
use crate::rng::RandomStream;

const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Family {
    Finite {
        atoms: Vec<PositiveMatrix>,
        probs: Vec<f64>,
        /// Cumulative probabilities scaled to `u64`; atom `i` is chosen when
        /// the drawn word is below `thresholds[i]`.
        thresholds: Vec<u64>,
    },
    /// Independent entries `exp(U[low, high])`.
    ExpUniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleSpec", into = "EnsembleSpec")]
pub struct MatrixLaw {
    dim: usize,
    family: Family,
    log_scale: f64,
    scale: f64,
}

impl MatrixLaw {
    pub fn finite(support: Vec<(PositiveMatrix, f64)>) -> Result<Self> {
        let Some(first) = support.first() else {
            return Err(Error::InvalidLaw("empty support".into()));
        };
        let dim = first.0.dim();
        if let Some((g, _)) = support.iter().find(|(g, _)| g.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.dim(),
            });
        }
        if support.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidLaw("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}, not 1")));
        }
        let (atoms, probs): (Vec<_>, Vec<_>) = support.into_iter().unzip();
        let mut thresholds = Vec::with_capacity(probs.len());
        let mut cum = 0.0;
        for p in &probs {
            cum += p;
            // saturating float-to-int cast
            thresholds.push((cum * 18_446_744_073_709_551_616.0) as u64);
        }
        *thresholds.last_mut().expect("nonempty") = u64::MAX;
        Ok(Self {
            dim,
            family: Family::Finite {
                atoms,
                probs,
                thresholds,
            },
            log_scale: 0.0,
            scale: 1.0,
        })
    }

    pub fn point_mass(g: PositiveMatrix) -> Self {
        Self::finite(vec![(g, 1.0)]).expect("point mass is a valid law")
    }

    /// Entries i.i.d. `exp(U[low, high])`; the max/min entry ratio is at most `exp(high - low)`.
    pub fn exp_uniform(dim: usize, low: f64, high: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("dimension must be at least 2, got {dim}")));
        }
        if !(low.is_finite() && high.is_finite() && low <= high) {
            return Err(Error::InvalidParameter(format!("need finite low <= high, got [{low}, {high}]")));
        }
        Ok(Self {
            dim,
            family: Family::ExpUniform { low, high },
            log_scale: 0.0,
            scale: 1.0,
        })
    }

    /// The bundled two-matrix ensemble `A = [[2,1],[1,1]]`, `B = [[1,1],[1,2]]`
    /// with probability 1/2 each (uncentered).
    pub fn two_matrix_test() -> Self {
        let a = PositiveMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).expect("A");
        let b = PositiveMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]).expect("B");
        Self::finite(vec![(a, 0.5), (b, 0.5)]).expect("bundled law")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn with_log_scale(&self, log_scale: f64) -> Self {
        Self {
            log_scale,
            scale: log_scale.exp(),
            ..self.clone()
        }
    }

    /// Support with probabilities for finite laws (unscaled matrices).
    pub fn support(&self) -> Option<Vec<(&PositiveMatrix, f64)>> {
        match &self.family {
            Family::Finite { atoms, probs, .. } => Some(atoms.iter().zip(probs.iter().copied()).collect()),
            Family::ExpUniform { .. } => None,
        }
    }

    /// Support of the law actually sampled, i.e. with `exp(log_scale)` applied.
    pub fn scaled_support(&self) -> Option<Vec<(PositiveMatrix, f64)>> {
        self.support().map(|s| {
            s.into_iter()
                .map(|(g, p)| (g.scaled(self.scale).expect("positive scale"), p))
                .collect()
        })
    }

    pub fn is_finite_support(&self) -> bool {
        matches!(self.family, Family::Finite { .. })
    }

    /// Number of 64-bit words consumed by one draw.
    pub fn words_per_step(&self) -> u64 {
        match self.family {
            Family::Finite { .. } => 1,
            Family::ExpUniform { .. } => (self.dim * self.dim) as u64,
        }
    }

    /// The law of `g^T` for `g ~ self`, which drives the dual walk.
    pub fn transposed(&self) -> Self {
        let family = match &self.family {
            Family::Finite {
                atoms,
                probs,
                thresholds,
            } => Family::Finite {
                atoms: atoms.iter().map(PositiveMatrix::transpose).collect(),
                probs: probs.clone(),
                thresholds: thresholds.clone(),
            },
            // i.i.d. entries: invariant under transposition
            f @ Family::ExpUniform { .. } => f.clone(),
        };
        Self {
            family,
            ..self.clone()
        }
    }

    /// Draws one matrix, scale included.
    pub fn sample(&self, stream: &mut RandomStream) -> PositiveMatrix {
        match &self.family {
            Family::Finite { atoms, thresholds, .. } => {
                let g = &atoms[pick(thresholds, stream.next_u64())];
                if self.scale == 1.0 {
                    g.clone()
                } else {
                    g.scaled(self.scale).expect("positive scale")
                }
            }
            Family::ExpUniform { low, high } => {
                let mut entries = vec![0.0; self.dim * self.dim];
                fill_exp_uniform(&mut entries, *low, *high, stream);
                for e in &mut entries {
                    *e *= self.scale;
                }
                PositiveMatrix::new(self.dim, entries).expect("positive entries")
            }
        }
    }

    /// Draws one matrix and replaces `v` by `g v` without renormalizing and
    /// without the scale factor; returns `|g v|`. Consumes exactly the same
    /// stream words as [`MatrixLaw::sample`].
    #[inline]
    pub(crate) fn apply_draw(&self, stream: &mut RandomStream, v: &mut [f64], buf: &mut [f64], out: &mut [f64]) -> f64 {
        let entries: &[f64] = match &self.family {
            Family::Finite { atoms, thresholds, .. } => atoms[pick(thresholds, stream.next_u64())].entries(),
            Family::ExpUniform { low, high } => {
                fill_exp_uniform(buf, *low, *high, stream);
                buf
            }
        };
        if self.dim == 2 {
            let y0 = entries[0] * v[0] + entries[1] * v[1];
            let y1 = entries[2] * v[0] + entries[3] * v[1];
            v[0] = y0;
            v[1] = y1;
            y0 + y1
        } else {
            apply_into(self.dim, entries, v, out);
            v.copy_from_slice(out);
            v.iter().sum()
        }
    }

    /// `exp(log_scale)`.
    pub(crate) fn scale(&self) -> f64 {
        self.scale
    }

    /// Returns the law with `log_scale` decreased by `lyapunov_hat`.
    pub fn center(&self, lyapunov_hat: f64) -> Result<Self> {
        if !lyapunov_hat.is_finite() {
            return Err(Error::InvalidParameter(format!("lyapunov estimate must be finite, got {lyapunov_hat}")));
        }
        Ok(self.with_log_scale(self.log_scale - lyapunov_hat))
    }

    /// Smallest `n` such that some product of `n` draws is strictly positive.
    ///
    /// Finite laws are decided exactly through zero patterns, which is all
    /// that strict positivity depends on. Generator laws are simulated.
    pub fn verify_contraction(&self, horizon: usize, seed: u64) -> Result<ContractionCheck> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let d = self.dim;
        match &self.family {
            Family::Finite { atoms, probs, .. } => {
                let patterns: Vec<Vec<bool>> = atoms
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(g, _)| g.support_pattern())
                    .collect();
                let mut level: HashSet<Vec<bool>> = patterns.iter().cloned().collect();
                for n in 1..=horizon {
                    if level.iter().any(|p| p.iter().all(|&b| b)) {
                        return Ok(ContractionCheck::Reached(n));
                    }
                    if n == horizon {
                        break;
                    }
                    let next: HashSet<Vec<bool>> = level
                        .iter()
                        .flat_map(|p| patterns.iter().map(move |q| pattern_product(d, q, p)))
                        .collect();
                    // Pattern sets are monotone in reachability; a repeated
                    // level means nothing new can appear.
                    if next == level {
                        break;
                    }
                    level = next;
                }
                Ok(ContractionCheck::Failed)
            }
            Family::ExpUniform { .. } => {
                let mut stream = RandomStream::new(seed, 0);
                let mut prod = self.sample(&mut stream);
                for n in 1..=horizon {
                    if prod.is_strictly_positive() {
                        return Ok(ContractionCheck::Reached(n));
                    }
                    prod = self.sample(&mut stream).mul(&prod);
                }
                Ok(ContractionCheck::Failed)
            }
        }
    }

    /// `E[(log N(g))^(2 + delta)]`: an exact weighted sum for finite laws, a
    /// Monte Carlo mean over `m` draws otherwise.
    pub fn estimate_moment(&self, delta: f64, m: usize, seed: u64) -> Result<f64> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("moment excess delta must be > 0, got {delta}")));
        }
        let power = 2.0 + delta;
        if let Some(support) = self.scaled_support() {
            return Ok(support.iter().map(|(g, p)| p * g.size().ln().powf(power)).sum());
        }
        if m == 0 {
            return Err(Error::InvalidParameter("need at least one draw".into()));
        }
        let mut stream = RandomStream::new(seed, 0);
        let total: f64 = (0..m).map(|_| self.sample(&mut stream).size().ln().powf(power)).sum();
        Ok(total / m as f64)
    }

    /// Largest max/min entry ratio over the support.
    pub fn kappa_sup(&self) -> KappaBound {
        match &self.family {
            Family::Finite { atoms, probs, .. } => KappaBound {
                value: atoms
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(g, _)| g.fk_ratio())
                    .fold(1.0, f64::max),
                from_family_bound: false,
            },
            Family::ExpUniform { low, high } => KappaBound {
                value: (high - low).exp(),
                from_family_bound: true,
            },
        }
    }

    pub fn spec(&self) -> EnsembleSpec {
        self.clone().into()
    }
}

#[inline]
fn pick(thresholds: &[u64], u: u64) -> usize {
    // Branch-free count of cumulative thresholds at or below `u`; the last
    // threshold is `u64::MAX` and is never counted.
    let (_, inner) = thresholds.split_last().expect("nonempty support");
    inner.iter().map(|&t| usize::from(u >= t)).sum()
}

#[inline]
fn fill_exp_uniform(buf: &mut [f64], low: f64, high: f64, stream: &mut RandomStream) {
    let width = high - low;
    for e in buf.iter_mut() {
        *e = (low + width * stream.next_f64()).exp();
    }
}

/// Zero pattern of `a * b`.
fn pattern_product(d: usize, a: &[bool], b: &[bool]) -> Vec<bool> {
    let mut out = vec![false; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).any(|k| a[i * d + k] && b[k * d + j]);
        }
    }
    out
}

/// Outcome of the primitivity (contraction) check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractionCheck {
    Reached(usize),
    Failed,
}

/// Upper bound on the max/min entry ratio. `from_family_bound` marks values
/// taken from a parametric family's analytic bound rather than enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaBound {
    pub value: f64,
    pub from_family_bound: bool,
}

impl KappaBound {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    /// `2 log kappa + log d`, the pathwise duality constant.
    pub fn duality_constant(&self, dim: usize) -> f64 {
        2.0 * self.value.ln() + (dim as f64).ln()
    }
}

/// JSON representation of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnsembleSpec {
    Finite {
        dim: usize,
        support: Vec<AtomSpec>,
        #[serde(default)]
        log_scale: f64,
    },
    Generator {
        generator: String,
        params: GeneratorParams,
        #[serde(default)]
        log_scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    pub matrix: PositiveMatrix,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub dim: usize,
    pub low: f64,
    pub high: f64,
}

pub const EXP_UNIFORM: &str = "exp_uniform";

impl TryFrom<EnsembleSpec> for MatrixLaw {
    type Error = Error;

    fn try_from(spec: EnsembleSpec) -> Result<Self> {
        match spec {
            EnsembleSpec::Finite {
                dim,
                support,
                log_scale,
            } => {
                let law = MatrixLaw::finite(support.into_iter().map(|a| (a.matrix, a.prob)).collect())?;
                if law.dim != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: law.dim,
                    });
                }
                Ok(law.with_log_scale(log_scale))
            }
            EnsembleSpec::Generator {
                generator,
                params,
                log_scale,
            } => match generator.as_str() {
                EXP_UNIFORM => Ok(MatrixLaw::exp_uniform(params.dim, params.low, params.high)?.with_log_scale(log_scale)),
                other => Err(Error::InvalidLaw(format!("unknown generator `{other}`"))),
            },
        }
    }
}

impl From<MatrixLaw> for EnsembleSpec {
    fn from(law: MatrixLaw) -> Self {
        match law.family {
            Family::Finite { atoms, probs, .. } => EnsembleSpec::Finite {
                dim: law.dim,
                support: atoms
                    .into_iter()
                    .zip(probs)
                    .map(|(matrix, prob)| AtomSpec { matrix, prob })
                    .collect(),
                log_scale: law.log_scale,
            },
            Family::ExpUniform { low, high } => EnsembleSpec::Generator {
                generator: EXP_UNIFORM.into(),
                params: GeneratorParams {
                    dim: law.dim,
                    low,
                    high,
                },
                log_scale: law.log_scale,
            },
        }
    }
}
