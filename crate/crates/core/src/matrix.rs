//! Dense matrices, masks and observed matrices.
//!
//! All indices are 0-based inside the crate. File formats in [`crate::io`]
//! translate to and from 1-based coordinates.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Singular values at or below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// A finite-valued dense matrix with positive dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn from_nalgebra(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyDimensions {
                n_rows: m.nrows(),
                n_cols: m.ncols(),
            });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn from_row_major(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                expected: (n_rows, n_cols),
                got: (data.len(), 1),
            });
        }
        Self::from_nalgebra(DMatrix::from_row_slice(n_rows, n_cols, &data))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch {
                expected: (rows.len(), n_cols),
                got: (rows.len(), bad.len()),
            });
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_row_major(rows.len(), n_cols, data)
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        assert!(n_rows > 0 && n_cols > 0, "matrix dimensions must be positive");
        Self(DMatrix::zeros(n_rows, n_cols))
    }

    /// # Panics
    /// If `n` is zero.
    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix dimensions must be positive");
        Self(DMatrix::identity(n, n))
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..self.n_rows() {
            out.extend(self.0.row(i).iter());
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_nalgebra(&self.0 * factor)
    }
}

/// The set of observed positions of an `n_rows x n_cols` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n_rows: usize,
    n_cols: usize,
    positions: BTreeSet<(usize, usize)>,
}

impl Mask {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        positions: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut mask = Self::empty(n_rows, n_cols);
        for (row, col) in positions {
            mask.insert(row, col)?;
        }
        Ok(mask)
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            positions: BTreeSet::new(),
        }
    }

    pub fn full(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            positions: (0..n_rows)
                .flat_map(|i| (0..n_cols).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// Adds a position, rejecting duplicates and out-of-bounds coordinates.
    pub fn insert(&mut self, row: usize, col: usize) -> Result<()> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        if !self.positions.insert((row, col)) {
            return Err(Error::DuplicatePosition { row, col });
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.positions.contains(&(row, col))
    }

    /// Positions in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positions.iter().copied()
    }
}

/// Observed values of a matrix on a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    n_rows: usize,
    n_cols: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl ObservedMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        entries: impl IntoIterator<Item = ((usize, usize), f64)>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::EmptyDimensions { n_rows, n_cols });
        }
        let mut obs = Self {
            n_rows,
            n_cols,
            entries: BTreeMap::new(),
        };
        for ((row, col), value) in entries {
            obs.insert(row, col, value)?;
        }
        Ok(obs)
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, std::iter::empty())
    }

    /// Reveals `truth` on `mask`.
    pub fn from_truth(truth: &DenseMatrix, mask: &Mask) -> Result<Self> {
        if truth.shape() != (mask.n_rows(), mask.n_cols()) {
            return Err(Error::DimensionMismatch {
                expected: truth.shape(),
                got: (mask.n_rows(), mask.n_cols()),
            });
        }
        Self::new(
            truth.n_rows(),
            truth.n_cols(),
            mask.iter().map(|(i, j)| ((i, j), truth.get(i, j))),
        )
    }

    pub fn insert(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        match self.entries.entry((row, col)) {
            std::collections::btree_map::Entry::Occupied(_) => {
                Err(Error::DuplicatePosition { row, col })
            }
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(value);
                Ok(())
            }
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.entries.get(&(row, col)).copied()
    }

    /// Entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.entries.iter().map(|(&p, &v)| (p, v))
    }

    pub fn mask(&self) -> Mask {
        Mask {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            positions: self.entries.keys().copied().collect(),
        }
    }
}

/// Factors `X` (`n1 x r`) and `Y` (`r x n2`) of a rank-`r` product.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let rank = x.ncols();
        if y.nrows() != rank {
            return Err(Error::DimensionMismatch {
                expected: (rank, y.ncols()),
                got: y.shape(),
            });
        }
        if rank == 0 || rank > x.nrows().min(y.ncols()) {
            return Err(Error::RankOutOfRange {
                rank,
                n_rows: x.nrows(),
                n_cols: y.ncols(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn rank(&self) -> usize {
        self.x.ncols()
    }

    pub fn product(&self) -> Result<DenseMatrix> {
        DenseMatrix::from_nalgebra(&self.x * &self.y)
    }
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    m.as_nalgebra().norm()
}

/// `||truth - estimate||_F / ||truth||_F`.
pub fn rel_error(truth: &DenseMatrix, estimate: &DenseMatrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch {
            expected: truth.shape(),
            got: estimate.shape(),
        });
    }
    let denom = frobenius_norm(truth);
    if denom == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((truth.as_nalgebra() - estimate.as_nalgebra()).norm() / denom)
}

/// Degrees of freedom of an `n1 x n2` matrix of rank exactly `r`: `r (n1 + n2 - r)`.
pub fn critical_mask_size(n1: usize, n2: usize, rank: usize) -> Result<usize> {
    if rank > n1.min(n2) {
        return Err(Error::RankOutOfRange {
            rank,
            n_rows: n1,
            n_cols: n2,
        });
    }
    Ok(rank * (n1 + n2 - rank))
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.as_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `RANK_TOLERANCE * sigma_1`.
pub fn numerical_rank(m: &DenseMatrix) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > RANK_TOLERANCE * top).count(),
        _ => 0,
    }
}

/// Best rank-`rank` approximation in Frobenius norm (truncated SVD).
pub fn truncate_to_rank(m: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    let (n_rows, n_cols) = m.shape();
    if rank == 0 || rank > n_rows.min(n_cols) {
        return Err(Error::RankOutOfRange {
            rank,
            n_rows,
            n_cols,
        });
    }
    let svd = m.as_nalgebra().clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    // nalgebra does not guarantee ordering of singular values.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(n_rows, n_cols);
    for &k in order.iter().take(rank) {
        let sigma = svd.singular_values[k];
        out += sigma * u.column(k) * v_t.row(k);
    }
    DenseMatrix::from_nalgebra(out)
}

/// `X * Y` with i.i.d. standard normal factors, plus optional Gaussian noise of
/// standard deviation `noise_scale * ||XY||_F / sqrt(n1 * n2)`.
///
/// Draw order is fixed (X row-major, then Y row-major, then noise row-major)
/// so a seed identifies a matrix across platforms.
pub fn generate_low_rank(
    n1: usize,
    n2: usize,
    rank: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<DenseMatrix> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyDimensions {
            n_rows: n1,
            n_cols: n2,
        });
    }
    if rank == 0 || rank > n1.min(n2) {
        return Err(Error::RankOutOfRange {
            rank,
            n_rows: n1,
            n_cols: n2,
        });
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise scale must be a nonnegative finite number, got {noise_scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = DMatrix::from_row_iterator(n1, rank, (0..n1 * rank).map(|_| normal()));
    let y = DMatrix::from_row_iterator(rank, n2, (0..rank * n2).map(|_| normal()));
    let mut product = x * y;
    if noise_scale > 0.0 {
        let sd = noise_scale * product.norm() / ((n1 * n2) as f64).sqrt();
        for i in 0..n1 {
            for j in 0..n2 {
                product[(i, j)] += sd * normal();
            }
        }
    }
    DenseMatrix::from_nalgebra(product)
}

/// `m` distinct positions drawn uniformly at random.
pub fn sample_random_mask(n1: usize, n2: usize, m: usize, seed: u64) -> Result<Mask> {
    let total = n1 * n2;
    if m > total {
        return Err(Error::TooManyPositions {
            requested: m,
            available: total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, total, m);
    Mask::new(n1, n2, picked.iter().map(|idx| (idx / n2, idx % n2)))
}
