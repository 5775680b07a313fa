//! Geometry of the positive cone.
//!
//! All vector norms are L1 norms on the positive quadrant, so `|gx|` is the
//! sum of the coordinates of `gx`. For a direction `x` on the simplex this is
//! the convex combination `sum_j x_j colsum_j(g)`, which is why the matrix
//! norm and the minimal gain reduce to the largest and smallest column sums.
//!
//! Matrices are stored dense and row-major; the expected dimension is small
//! (d <= 10).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An allowable nonnegative `d x d` matrix: every row and every column holds
/// at least one strictly positive entry.
///
/// Column sums are cached at construction, summed sequentially in row index
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PositiveMatrix {
    dim: usize,
    entries: Vec<f64>,
    col_sums: Vec<f64>,
}

impl PositiveMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "matrix dimension must be at least 2, got {dim}"
            )));
        }
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::NotAllowable(format!("entry {bad} is not a finite nonnegative number")));
        }
        for i in 0..dim {
            if entries[i * dim..(i + 1) * dim].iter().all(|&e| e == 0.0) {
                return Err(Error::NotAllowable(format!("row {i} is zero")));
            }
        }
        let col_sums = column_sums(dim, &entries);
        if let Some(j) = col_sums.iter().position(|&s| s == 0.0) {
            return Err(Error::NotAllowable(format!("column {j} is zero")));
        }
        Ok(Self {
            dim,
            entries,
            col_sums,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self::new(dim, entries).expect("identity is allowable")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            entries[i * dim + i] = v;
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `g v` for an arbitrary vector `v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        apply_into(self.dim, &self.entries, v, &mut out);
        out
    }

    /// The product `self * rhs`, i.e. `rhs` acts first.
    pub fn mul(&self, rhs: &PositiveMatrix) -> PositiveMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in matrix product");
        let d = self.dim;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    entries[i * d + j] += a * rhs.entries[k * d + j];
                }
            }
        }
        // Products of allowable matrices are allowable.
        PositiveMatrix::new(d, entries).expect("product of allowable matrices")
    }

    pub fn scaled(&self, c: f64) -> Result<PositiveMatrix> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {c}")));
        }
        PositiveMatrix::new(self.dim, self.entries.iter().map(|e| e * c).collect())
    }

    /// Projective action `g . x = gx / |gx|`.
    pub fn act(&self, x: &Direction) -> Direction {
        let gx = self.apply(&x.coords);
        let s: f64 = gx.iter().sum();
        Direction {
            coords: gx.into_iter().map(|v| v / s).collect(),
        }
    }

    /// The cocycle `log |gx|` in nats.
    pub fn cocycle(&self, x: &Direction) -> f64 {
        self.gain(x).ln()
    }

    /// `|gx|`, computed as the convex combination of column sums.
    pub fn gain(&self, x: &Direction) -> f64 {
        self.col_sums.iter().zip(&x.coords).map(|(c, xi)| c * xi).sum()
    }

    /// Operator norm induced by L1: the largest column sum.
    pub fn norm(&self) -> f64 {
        self.col_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `inf_x |gx|` over the simplex, attained at a vertex: the smallest column sum.
    pub fn min_gain(&self) -> f64 {
        self.col_sums.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `N(g) = max(||g||, 1 / min_gain(g))`.
    pub fn size(&self) -> f64 {
        self.norm().max(1.0 / self.min_gain())
    }

    /// Ratio of the largest to the smallest entry; infinite with any zero entry.
    pub fn fk_ratio(&self) -> f64 {
        let max = self.entries.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.entries.iter().copied().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn transpose(&self) -> PositiveMatrix {
        let d = self.dim;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                entries[j * d + i] = self.entries[i * d + j];
            }
        }
        PositiveMatrix::new(d, entries).expect("transpose of an allowable matrix")
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.entries.iter().all(|&e| e > 0.0)
    }

    /// Zero pattern of the matrix, row-major (`true` = strictly positive entry).
    pub fn support_pattern(&self) -> Vec<bool> {
        self.entries.iter().map(|&e| e > 0.0).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PositiveMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        PositiveMatrix::from_rows(&rows)
    }
}

impl From<PositiveMatrix> for Vec<Vec<f64>> {
    fn from(g: PositiveMatrix) -> Self {
        g.rows()
    }
}

pub(crate) fn column_sums(dim: usize, entries: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; dim];
    for row in entries.chunks(dim) {
        for (s, &e) in sums.iter_mut().zip(row) {
            *s += e;
        }
    }
    sums
}

#[inline]
pub(crate) fn apply_into(dim: usize, entries: &[f64], v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(entries.chunks_exact(dim)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// A point of the positive part of the unit L1 sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Direction {
    coords: Vec<f64>,
}

impl Direction {
    /// `v / sum(v)` for a nonnegative nonzero vector.
    pub fn normalize(v: &[f64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "direction dimension must be at least 2, got {}",
                v.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::ZeroVector);
        }
        let s: f64 = v.iter().sum();
        if s <= 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            coords: v.iter().map(|c| c / s).collect(),
        })
    }

    /// The barycenter `(1/d, ..., 1/d)`.
    pub fn barycenter(dim: usize) -> Self {
        Self {
            coords: vec![1.0 / dim as f64; dim],
        }
    }

    /// The basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut coords = vec![0.0; dim];
        coords[i] = 1.0;
        Self { coords }
    }

    /// For d = 2: the point `(t, 1 - t)`.
    pub fn from_first_coord(t: f64) -> Result<Self> {
        Self::normalize(&[t, 1.0 - t])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn from_normalized_unchecked(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl TryFrom<Vec<f64>> for Direction {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Direction::normalize(&v)
    }
}

impl From<Direction> for Vec<f64> {
    fn from(x: Direction) -> Self {
        x.coords
    }
}

/// `m(x, x') = min_i x_i / x'_i` with the boundary convention: coordinates
/// where both vanish are skipped, `positive / 0` counts as `+inf` and
/// `0 / positive` as `0`.
fn min_ratio(x: &[f64], xp: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for (&a, &b) in x.iter().zip(xp) {
        let r = match (a > 0.0, b > 0.0) {
            (_, true) => a / b,
            (true, false) => f64::INFINITY,
            (false, false) => continue,
        };
        m = m.min(r);
    }
    m
}

/// Hilbert cross-ratio distance on the simplex, with values in `[0, 1]`.
pub fn hilbert_metric(x: &Direction, xp: &Direction) -> f64 {
    assert_eq!(x.dim(), xp.dim(), "dimension mismatch in hilbert_metric");
    let p = min_ratio(&x.coords, &xp.coords) * min_ratio(&xp.coords, &x.coords);
    if !p.is_finite() {
        // Only reachable when every coordinate pair is (0, 0), i.e. never on the simplex.
        return 0.0;
    }
    ((1.0 - p) / (1.0 + p)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> PositiveMatrix {
        PositiveMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn dir(v: &[f64]) -> Direction {
        Direction::normalize(v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(dir(&[1.0, 1.0]).coords(), &[0.5, 0.5]);
        assert_eq!(dir(&[3.0, 1.0]).coords(), &[0.75, 0.25]);
        assert!(matches!(Direction::normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(Direction::normalize(&[1.0, -0.5]), Err(Error::ZeroVector)));
    }

    #[test]
    fn allowability_is_enforced() {
        assert!(PositiveMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).is_err());
        assert!(PositiveMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
        assert!(PositiveMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).is_ok());
        assert!(PositiveMatrix::new(1, vec![1.0]).is_err());
    }

    #[test]
    fn act_examples() {
        let g = m(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let x = g.act(&Direction::basis(2, 0));
        assert!((x.coords()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x.coords()[1] - 1.0 / 3.0).abs() < 1e-15);
        let y = dir(&[0.3, 0.7]);
        assert_eq!(PositiveMatrix::identity(2).act(&y), y);
        let scaled = g.scaled(7.5).unwrap().act(&y);
        let plain = g.act(&y);
        for (a, b) in scaled.coords().iter().zip(plain.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cocycle_examples() {
        let g = m(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let x = Direction::basis(2, 0);
        assert_eq!(PositiveMatrix::identity(2).cocycle(&dir(&[0.2, 0.8])), 0.0);
        assert!((g.cocycle(&x) - 3f64.ln()).abs() < 1e-15);
        let y = dir(&[0.4, 0.6]);
        let shift = g.scaled(5.0).unwrap().cocycle(&y) - g.cocycle(&y);
        assert!((shift - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn norm_gain_size_examples() {
        let g = m(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let id = PositiveMatrix::identity(2);
        assert_eq!(id.norm(), 1.0);
        assert_eq!(g.norm(), 3.0);
        assert_eq!(m(&[&[1.0, 1.0], &[1.0, 1.0]]).norm(), 2.0);

        assert_eq!(id.min_gain(), 1.0);
        assert_eq!(g.min_gain(), 2.0);
        assert_eq!(PositiveMatrix::diagonal(&[2.0, 0.5]).unwrap().min_gain(), 0.5);

        assert_eq!(id.size(), 1.0);
        assert_eq!(g.size(), 3.0);
        assert_eq!(PositiveMatrix::diagonal(&[0.5, 0.5]).unwrap().size(), 2.0);
    }

    #[test]
    fn hilbert_metric_examples() {
        let x = dir(&[0.5, 0.5]);
        assert_eq!(hilbert_metric(&x, &x), 0.0);
        assert!((hilbert_metric(&x, &dir(&[0.25, 0.75])) - 0.5).abs() < 1e-15);
        assert_eq!(hilbert_metric(&Direction::basis(2, 0), &Direction::basis(2, 1)), 1.0);
        // shared zero coordinate is skipped
        let a = dir(&[0.5, 0.5, 0.0]);
        let b = dir(&[0.25, 0.75, 0.0]);
        assert!((hilbert_metric(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fk_ratio_transpose_positivity_examples() {
        let ones = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let g = m(&[&[2.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(ones.fk_ratio(), 1.0);
        assert_eq!(g.fk_ratio(), 2.0);
        assert_eq!(m(&[&[1.0, 0.0], &[1.0, 1.0]]).fk_ratio(), f64::INFINITY);

        assert_eq!(g.transpose(), g);
        let h = m(&[&[2.0, 1.0], &[3.0, 1.0]]);
        assert_eq!(h.transpose(), m(&[&[2.0, 3.0], &[1.0, 1.0]]));
        assert_eq!(h.transpose().transpose(), h);

        assert!(ones.is_strictly_positive());
        assert!(!PositiveMatrix::identity(2).is_strictly_positive());
        assert!(g.is_strictly_positive());
    }

    #[test]
    fn json_round_trip_is_row_major() {
        let h = m(&[&[2.0, 1.0], &[3.0, 1.0]]);
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, "[[2.0,1.0],[3.0,1.0]]");
        let back: PositiveMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<PositiveMatrix>("[[0.0,0.0],[1.0,1.0]]").is_err());
        let x: Direction = serde_json::from_str("[1.0, 3.0]").unwrap();
        assert_eq!(x.coords(), &[0.25, 0.75]);
    }
}
