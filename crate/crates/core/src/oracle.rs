//! Budgeted access to hidden entries, and surrogate values for entries that
//! have not been revealed.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::{DenseMatrix, Mask, ObservedMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("query budget exhausted")]
    BudgetExhausted,
    #[error("position ({row}, {col}) may not be queried")]
    NotQueryable { row: usize, col: usize },
    #[error("position ({row}, {col}) was already queried")]
    DuplicateQuery { row: usize, col: usize },
    #[error("position ({row}, {col}) is outside the matrix")]
    OutOfBounds { row: usize, col: usize },
}

/// One revealed entry, 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Budgeted source of true matrix entries.
///
/// Each successful query costs one unit of budget and is appended to the
/// log. Failed queries leave both untouched.
pub trait QueryOracle {
    fn query(&mut self, row: usize, col: usize) -> Result<f64, OracleError>;

    fn remaining_budget(&self) -> usize;

    fn log(&self) -> &[Query];

    /// Whether `query(row, col)` would be allowed by position alone.
    fn is_queryable(&self, _row: usize, _col: usize) -> bool {
        true
    }
}

/// Answers queries from a fully known matrix.
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    truth: DenseMatrix,
    budget: usize,
    queryable: Option<Mask>,
    asked: HashSet<(usize, usize)>,
    log: Vec<Query>,
}

impl GroundTruthOracle {
    pub fn new(truth: DenseMatrix, budget: usize) -> Self {
        Self {
            truth,
            budget,
            queryable: None,
            asked: HashSet::new(),
            log: Vec::new(),
        }
    }

    /// Restricts queries to the positions in `mask`.
    pub fn with_queryable(mut self, mask: Mask) -> crate::Result<Self> {
        if mask.shape() != self.truth.shape() {
            return Err(crate::Error::DimensionMismatch {
                expected: self.truth.shape(),
                got: mask.shape(),
            });
        }
        self.queryable = Some(mask);
        Ok(self)
    }

    pub fn truth(&self) -> &DenseMatrix {
        &self.truth
    }

    pub fn into_log(self) -> Vec<Query> {
        self.log
    }
}

impl QueryOracle for GroundTruthOracle {
    fn query(&mut self, row: usize, col: usize) -> Result<f64, OracleError> {
        let (n_rows, n_cols) = self.truth.shape();
        if row >= n_rows || col >= n_cols {
            return Err(OracleError::OutOfBounds { row, col });
        }
        if !self.is_queryable(row, col) {
            return Err(OracleError::NotQueryable { row, col });
        }
        if self.asked.contains(&(row, col)) {
            return Err(OracleError::DuplicateQuery { row, col });
        }
        if self.budget == 0 {
            return Err(OracleError::BudgetExhausted);
        }
        let value = self.truth.get(row, col);
        self.budget -= 1;
        self.asked.insert((row, col));
        self.log.push(Query { row, col, value });
        Ok(value)
    }

    fn remaining_budget(&self) -> usize {
        self.budget
    }

    fn log(&self) -> &[Query] {
        &self.log
    }

    fn is_queryable(&self, row: usize, col: usize) -> bool {
        self.queryable.as_ref().is_none_or(|m| m.contains(row, col))
    }
}

/// Draws stand-in values for unrevealed entries.
///
/// A draw for `(i, j)` is uniform over the known values in row `i` and
/// column `j` taken together. If neither has any, it is uniform over every
/// known value, and if nothing is known at all it is `1.0`.
#[derive(Debug, Clone)]
pub struct SurrogateSampler {
    rng: ChaCha8Rng,
    by_row: Vec<Vec<f64>>,
    by_col: Vec<Vec<f64>>,
    all: Vec<f64>,
}

impl SurrogateSampler {
    pub fn new(obs: &ObservedMatrix, seed: u64) -> Self {
        let mut sampler = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            by_row: vec![Vec::new(); obs.n_rows()],
            by_col: vec![Vec::new(); obs.n_cols()],
            all: Vec::with_capacity(obs.len()),
        };
        for ((i, j), v) in obs.iter() {
            sampler.record(i, j, v);
        }
        sampler
    }

    /// Adds a newly revealed entry to the pool.
    pub fn record(&mut self, row: usize, col: usize, value: f64) {
        self.by_row[row].push(value);
        self.by_col[col].push(value);
        self.all.push(value);
    }

    pub fn sample(&mut self, row: usize, col: usize) -> f64 {
        let (in_row, in_col) = (&self.by_row[row], &self.by_col[col]);
        let local = in_row.len() + in_col.len();
        if local > 0 {
            let k = self.rng.random_range(0..local);
            return if k < in_row.len() {
                in_row[k]
            } else {
                in_col[k - in_row.len()]
            };
        }
        if self.all.is_empty() {
            return 1.0;
        }
        self.all[self.rng.random_range(0..self.all.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            &[1.0, 2.0, 3.0, 4.0],
            &[5.0, 6.0, 7.0, 8.0],
            &[9.0, 10.0, 11.0, 12.0],
        ])
        .unwrap()
    }

    #[test]
    fn query_returns_truth_and_spends_budget() {
        let mut oracle = GroundTruthOracle::new(truth(), 1);
        assert_eq!(oracle.query(1, 2), Ok(7.0));
        assert_eq!(oracle.remaining_budget(), 0);
        assert_eq!(oracle.log(), &[Query { row: 1, col: 2, value: 7.0 }]);
    }

    #[test]
    fn exhausted_budget_leaves_no_trace() {
        let mut oracle = GroundTruthOracle::new(truth(), 0);
        assert_eq!(oracle.query(0, 0), Err(OracleError::BudgetExhausted));
        assert!(oracle.log().is_empty());
    }

    #[test]
    fn rejects_duplicates_and_out_of_bounds() {
        let mut oracle = GroundTruthOracle::new(truth(), 5);
        oracle.query(0, 0).unwrap();
        assert_eq!(oracle.query(0, 0), Err(OracleError::DuplicateQuery { row: 0, col: 0 }));
        assert_eq!(oracle.query(3, 0), Err(OracleError::OutOfBounds { row: 3, col: 0 }));
        assert_eq!(oracle.remaining_budget(), 4);
        assert_eq!(oracle.log().len(), 1);
    }

    #[test]
    fn respects_queryable_mask() {
        let mut mask = Mask::empty(3, 4);
        mask.insert(2, 3).unwrap();
        let mut oracle = GroundTruthOracle::new(truth(), 5).with_queryable(mask).unwrap();
        assert!(!oracle.is_queryable(0, 0));
        assert_eq!(oracle.query(0, 0), Err(OracleError::NotQueryable { row: 0, col: 0 }));
        assert_eq!(oracle.query(2, 3), Ok(12.0));
        assert!(GroundTruthOracle::new(truth(), 1)
            .with_queryable(Mask::empty(2, 2))
            .is_err());
    }

    #[test]
    fn log_plus_budget_is_constant() {
        let mut oracle = GroundTruthOracle::new(truth(), 7);
        for (i, j) in [(0, 0), (1, 1), (0, 0), (2, 3), (5, 5), (2, 2)] {
            let _ = oracle.query(i, j);
            assert_eq!(oracle.log().len() + oracle.remaining_budget(), 7);
        }
    }

    #[test]
    fn logged_values_are_bit_exact() {
        let t = DenseMatrix::from_rows(&[&[0.1 + 0.2, std::f64::consts::PI]]).unwrap();
        let mut oracle = GroundTruthOracle::new(t.clone(), 2);
        oracle.query(0, 0).unwrap();
        oracle.query(0, 1).unwrap();
        for q in oracle.log() {
            assert_eq!(q.value.to_bits(), t.get(q.row, q.col).to_bits());
        }
    }

    #[test]
    fn surrogate_draws_from_row_and_column() {
        let mut obs = ObservedMatrix::empty(3, 3).unwrap();
        obs.insert(0, 2, 4.0).unwrap();
        obs.insert(2, 0, -1.0).unwrap();
        obs.insert(1, 1, 100.0).unwrap();
        let mut sampler = SurrogateSampler::new(&obs, 11);
        let n = 1000;
        let fours = (0..n).filter(|_| sampler.sample(0, 0) == 4.0).count();
        let mut again = SurrogateSampler::new(&obs, 11);
        for _ in 0..n {
            let v = again.sample(0, 0);
            assert!(v == 4.0 || v == -1.0);
        }
        let frac = fours as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.1, "{frac}");
    }

    #[test]
    fn surrogate_constant_pool() {
        let mut obs = ObservedMatrix::empty(4, 4).unwrap();
        for k in 0..4 {
            obs.insert(k, (k + 1) % 4, 2.5).unwrap();
        }
        let mut sampler = SurrogateSampler::new(&obs, 0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(sampler.sample(i, j), 2.5);
            }
        }
    }

    #[test]
    fn surrogate_falls_back_to_all_values() {
        let mut obs = ObservedMatrix::empty(3, 3).unwrap();
        obs.insert(0, 0, 6.0).unwrap();
        let mut sampler = SurrogateSampler::new(&obs, 3);
        assert_eq!(sampler.sample(2, 2), 6.0);
        let mut empty = SurrogateSampler::new(&ObservedMatrix::empty(2, 2).unwrap(), 3);
        assert_eq!(empty.sample(1, 1), 1.0);
        empty.record(1, 0, -3.0);
        assert_eq!(empty.sample(1, 1), -3.0);
    }

    #[test]
    fn surrogate_is_deterministic() {
        let obs = ObservedMatrix::from_truth(
            &truth(),
            &Mask::new(3, 4, [(0, 0), (1, 2), (2, 1), (2, 3)]).unwrap(),
        )
        .unwrap();
        let mut a = SurrogateSampler::new(&obs, 99);
        let mut b = SurrogateSampler::new(&obs, 99);
        for k in 0..200 {
            assert_eq!(a.sample(k % 3, k % 4), b.sample(k % 3, k % 4));
        }
    }
}
