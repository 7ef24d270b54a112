//! Small least-squares systems and how sensitive their solutions are.
//!
//! Every factor row or column is recovered from a system `A y = t` where the
//! rows of `A` are already computed factors and `t` holds known entries of
//! the matrix. The local condition number
//!
//! ```text
//! l(A, t) = ||A^+||_2 * ||t|| / ||y||,   y = A^+ t
//! ```
//!
//! bounds how much a relative perturbation of `t` is amplified in `y`. Unlike
//! the classical `kappa(A)` it depends on the particular target `t`. Since
//! `||t|| >= ||A y|| >= sigma_min ||y||`, it is never below 1.
//!
//! Extending a system by one row `alpha` with target `tau` is a rank-one
//! update of the normal matrix, so candidate extensions are scored with the
//! Sherman-Morrison formula from a single inverse of `A^T A`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::RANK_TOLERANCE;

/// Denominators `1 + alpha C alpha^T` at or below this are rejected.
const UPDATE_TOLERANCE: f64 = 1e-12;

/// `A y = t` with `A` of shape `k x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    t: DVector<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, t: DVector<f64>) -> Result<Self> {
        if a.nrows() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: (a.nrows(), a.ncols()),
                got: (t.len(), 1),
            });
        }
        if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos % a.nrows(),
                col: pos / a.nrows(),
            });
        }
        if let Some(row) = t.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: 0 });
        }
        Ok(Self { a, t })
    }

    /// An empty system with `rank` unknowns.
    pub fn empty(rank: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, rank),
            t: DVector::zeros(0),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    /// Number of equations.
    pub fn n_equations(&self) -> usize {
        self.a.nrows()
    }

    /// Number of unknowns.
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_complete(&self) -> bool {
        self.n_equations() >= self.rank()
    }

    /// Appends one equation `alpha . y = tau`.
    pub fn push(&mut self, alpha: &DVector<f64>, tau: f64) {
        let k = self.a.nrows();
        let a = std::mem::replace(&mut self.a, DMatrix::zeros(0, 0));
        self.a = a.insert_row(k, 0.0);
        self.a.row_mut(k).copy_from(&alpha.transpose());
        let t = std::mem::replace(&mut self.t, DVector::zeros(0));
        self.t = t.push(tau);
    }

    pub fn extended(&self, alpha: &DVector<f64>, tau: f64) -> Self {
        let mut out = self.clone();
        out.push(alpha, tau);
        out
    }
}

/// Singular values, largest first.
fn sorted_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `(sigma_max, sigma_min)` if `a` has full column rank, `None` otherwise.
fn full_rank_extremes(a: &DMatrix<f64>) -> Option<(f64, f64)> {
    if a.ncols() == 0 || a.nrows() < a.ncols() {
        return None;
    }
    let s = sorted_singular_values(a);
    let (max, min) = (s[0], s[a.ncols() - 1]);
    (max > 0.0 && min > RANK_TOLERANCE * max).then_some((max, min))
}

/// Minimizer of `||A y - t||_2`.
pub fn solve_least_squares(sys: &LinearSystem) -> Result<DVector<f64>> {
    let a = &sys.a;
    let ratio = if a.nrows() < a.ncols() || a.ncols() == 0 {
        0.0
    } else {
        let s = sorted_singular_values(a);
        if s[0] > 0.0 {
            s[a.ncols() - 1] / s[0]
        } else {
            0.0
        }
    };
    if ratio <= RANK_TOLERANCE {
        return Err(Error::RankDeficient { ratio });
    }
    let svd = a.clone().svd(true, true);
    svd.solve(&sys.t, 0.0)
        .map_err(|_| Error::RankDeficient { ratio })
}

/// `sigma_max / sigma_min`, or infinity when `a` lacks full column rank.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    match full_rank_extremes(a) {
        Some((max, min)) => max / min,
        None => f64::INFINITY,
    }
}

/// `||A^+||_2 * ||t|| / ||y||` with `y` the least-squares solution.
///
/// Rank-deficient systems and systems whose solution is zero map to infinity.
pub fn local_condition(sys: &LinearSystem) -> f64 {
    let Some((_, sigma_min)) = full_rank_extremes(&sys.a) else {
        return f64::INFINITY;
    };
    let Ok(y) = solve_least_squares(sys) else {
        return f64::INFINITY;
    };
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return f64::INFINITY;
    }
    sys.t.norm() / (sigma_min * y_norm)
}

/// `(A^T A)^{-1}` for a full-column-rank `a`.
pub fn gram_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if full_rank_extremes(a).is_none() {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let gram = a.transpose() * a;
    gram.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::RankDeficient { ratio: 0.0 })
}

/// `D = C - C a^T a C / (1 + a C a^T)`, which equals `(C^{-1} + a^T a)^{-1}`
/// for symmetric positive definite `C`.
pub fn sherman_morrison_update(c: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() != c.ncols() || c.nrows() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: (alpha.len(), alpha.len()),
            got: c.shape(),
        });
    }
    let c_alpha = c * alpha;
    let denom = 1.0 + alpha.dot(&c_alpha);
    if !(denom > UPDATE_TOLERANCE) {
        return Err(Error::UpdateBreakdown(denom));
    }
    // C symmetric: alpha C = (C alpha)^T.
    Ok(c - (&c_alpha * c_alpha.transpose()) / denom)
}

/// Local condition number of `[A; alpha] y = [t; tau]`, given `C = (A^T A)^{-1}`.
///
/// The solution operator of the extended system is `D [A; alpha]^T` with `D`
/// the updated inverse, and `||D [A; alpha]^T||_2^2 = lambda_max(D)` because
/// `D [A; alpha]^T [A; alpha] D = D`. No factorization of the extended
/// system is needed.
pub fn extended_local_condition(
    c: &DMatrix<f64>,
    a: &DMatrix<f64>,
    alpha: &DVector<f64>,
    t: &DVector<f64>,
    tau: f64,
) -> f64 {
    let Ok(d) = sherman_morrison_update(c, alpha) else {
        return f64::INFINITY;
    };
    let rhs = a.transpose() * t + alpha * tau;
    extended_from_parts(&d, &rhs, (t.norm_squared() + tau * tau).sqrt())
}

fn extended_from_parts(d: &DMatrix<f64>, a_t_t: &DVector<f64>, t_norm: f64) -> f64 {
    let y = d * a_t_t;
    let y_norm = y.norm();
    if !(y_norm > 0.0) {
        return f64::INFINITY;
    }
    let lambda_max = SymmetricEigen::new(d.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    let score = lambda_max.sqrt() * t_norm / y_norm;
    if score.is_finite() {
        score
    } else {
        f64::INFINITY
    }
}

/// How a complete system is judged stable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityTest {
    /// Stable when `log10 l(A, t) < theta`, i.e. fewer than `theta` decimal
    /// digits of relative accuracy are lost solving the system.
    LocalCondition { theta: f64 },
    /// Stable when `kappa(A) < kappa`. Ignores the target vector.
    ConditionNumber { kappa: f64 },
}

impl Default for StabilityTest {
    fn default() -> Self {
        StabilityTest::LocalCondition { theta: 1.0 }
    }
}

impl StabilityTest {
    /// Scores at or above this limit are unstable.
    pub fn limit(&self) -> f64 {
        match *self {
            StabilityTest::LocalCondition { theta } => 10f64.powf(theta),
            StabilityTest::ConditionNumber { kappa } => kappa,
        }
    }

    pub fn score(&self, sys: &LinearSystem) -> f64 {
        match self {
            StabilityTest::LocalCondition { .. } => local_condition(sys),
            StabilityTest::ConditionNumber { .. } => condition_number(&sys.a),
        }
    }

    pub fn verdict(&self, sys: &LinearSystem) -> StabilityVerdict {
        let score = self.score(sys);
        StabilityVerdict {
            score,
            stable: score < self.limit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    /// `l(A, t)` or `kappa(A)` depending on the test; may be infinite.
    pub score: f64,
    pub stable: bool,
}

/// A previously computed factor that could be appended to a system.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Row or column index of the factor.
    pub index: usize,
    pub alpha: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub alpha: DVector<f64>,
    /// Score of the extended system with the surrogate target.
    pub score: f64,
}

/// Scores every candidate extension of `sys` and returns the best one if it
/// passes `test`.
///
/// `surrogate(index)` stands in for the unknown target of each candidate; it
/// is called once per candidate, in candidate order. Ties go to the lowest
/// index.
pub fn stabilize(
    sys: &LinearSystem,
    test: &StabilityTest,
    candidates: &[Candidate],
    mut surrogate: impl FnMut(usize) -> f64,
) -> Option<Selection> {
    let taus: Vec<f64> = candidates.iter().map(|c| surrogate(c.index)).collect();
    let scores = score_candidates(sys, test, candidates, &taus);
    let best = argmin_by_index(candidates, &scores)?;
    (scores[best] < test.limit()).then(|| Selection {
        index: candidates[best].index,
        alpha: candidates[best].alpha.clone(),
        score: scores[best],
    })
}

/// Scores of `[A; alpha_i] y = [t; tau_i]` for each candidate.
pub fn score_candidates(
    sys: &LinearSystem,
    test: &StabilityTest,
    candidates: &[Candidate],
    taus: &[f64],
) -> Vec<f64> {
    match test {
        StabilityTest::LocalCondition { .. } => match gram_inverse(&sys.a) {
            Ok(c) => {
                let a_t_t = sys.a.transpose() * &sys.t;
                let t_sq = sys.t.norm_squared();
                candidates
                    .iter()
                    .zip(taus)
                    .map(|(cand, &tau)| match sherman_morrison_update(&c, &cand.alpha) {
                        Ok(d) => {
                            let rhs = &a_t_t + &cand.alpha * tau;
                            extended_from_parts(&d, &rhs, (t_sq + tau * tau).sqrt())
                        }
                        Err(_) => f64::INFINITY,
                    })
                    .collect()
            }
            // No inverse to update: evaluate each extension from scratch.
            Err(_) => candidates
                .iter()
                .zip(taus)
                .map(|(cand, &tau)| local_condition(&sys.extended(&cand.alpha, tau)))
                .collect(),
        },
        StabilityTest::ConditionNumber { .. } => candidates
            .iter()
            .zip(taus)
            .map(|(cand, &tau)| condition_number(sys.extended(&cand.alpha, tau).a()))
            .collect(),
    }
}

fn argmin_by_index(candidates: &[Candidate], scores: &[f64]) -> Option<usize> {
    (0..candidates.len()).min_by(|&x, &y| {
        scores[x]
            .total_cmp(&scores[y])
            .then(candidates[x].index.cmp(&candidates[y].index))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sys(rows: &[&[f64]], t: &[f64]) -> LinearSystem {
        let r = rows[0].len();
        let a = DMatrix::from_row_iterator(rows.len(), r, rows.iter().flat_map(|x| x.iter().copied()));
        LinearSystem::new(a, DVector::from_row_slice(t)).unwrap()
    }

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// `||A^+||_2 ||t|| / ||A^+ t||` with the pseudo-inverse built from a full SVD.
    fn brute_local_condition(a: &DMatrix<f64>, t: &DVector<f64>) -> f64 {
        let pinv = a.clone().pseudo_inverse(1e-300).unwrap();
        let y = &pinv * t;
        let norm = pinv.singular_values().iter().copied().fold(0.0, f64::max);
        norm * t.norm() / y.norm()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut *rng))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let b = random_matrix(rng, n, n);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn least_squares_examples() {
        let y = solve_least_squares(&sys(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], &[4.0, -1.0, 2.5])).unwrap();
        assert!((y - vec(&[4.0, -1.0, 2.5])).norm() < 1e-14);
        let y = solve_least_squares(&sys(&[&[1.0], &[1.0]], &[1.0, 3.0])).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-14);
        let y = solve_least_squares(&sys(&[&[2.0, 0.0], &[0.0, 4.0]], &[2.0, 8.0])).unwrap();
        assert!((y - vec(&[1.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn least_squares_rejects_rank_deficient() {
        let s = sys(&[&[1.0, 2.0], &[2.0, 4.0]], &[1.0, 2.0]);
        assert!(matches!(solve_least_squares(&s), Err(Error::RankDeficient { .. })));
        assert!(matches!(
            solve_least_squares(&LinearSystem::empty(2)),
            Err(Error::RankDeficient { .. })
        ));
        assert_eq!(local_condition(&s), f64::INFINITY);
        assert_eq!(condition_number(s.a()), f64::INFINITY);
    }

    #[test]
    fn local_condition_examples() {
        assert!((local_condition(&sys(&[&[1.0, 0.0], &[0.0, 1.0]], &[3.0, -7.0])) - 1.0).abs() < 1e-14);
        let eps = 1e-3;
        let weak = sys(&[&[1.0, 0.0], &[0.0, eps]], &[1.0, 0.0]);
        assert!((local_condition(&weak) / (1.0 / eps) - 1.0).abs() < 1e-12);
        let aligned = sys(&[&[1.0, 0.0], &[0.0, eps]], &[0.0, 1.0]);
        assert!((local_condition(&aligned) - 1.0).abs() < 1e-12);
        assert_eq!(local_condition(&sys(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn sherman_morrison_examples() {
        let c = DMatrix::<f64>::identity(2, 2);
        assert_eq!(sherman_morrison_update(&c, &vec(&[0.0, 0.0])).unwrap(), c);
        let d = sherman_morrison_update(&c, &vec(&[1.0, 0.0])).unwrap();
        assert!((d - DMatrix::from_diagonal(&vec(&[0.5, 1.0]))).norm() < 1e-15);
        let neg = -DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            sherman_morrison_update(&neg, &vec(&[1.0, 0.0])),
            Err(Error::UpdateBreakdown(_))
        ));
    }

    #[test]
    fn sherman_morrison_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..100 {
            let n = 1 + case % 10;
            let c = random_spd(&mut rng, n);
            let alpha = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let d = sherman_morrison_update(&c, &alpha).unwrap();
            let direct = (c.clone().try_inverse().unwrap() + &alpha * alpha.transpose())
                .try_inverse()
                .unwrap();
            assert!((&d - &direct).norm() / direct.norm() < 1e-9, "case {case}");
        }
    }

    #[test]
    fn extended_condition_examples() {
        // null extension
        let a = DMatrix::<f64>::identity(3, 3);
        let t = vec(&[1.0, 2.0, -2.0]);
        let c = gram_inverse(&a).unwrap();
        let ext = extended_local_condition(&c, &a, &vec(&[0.0, 0.0, 0.0]), &t, 0.0);
        let base = local_condition(&LinearSystem::new(a.clone(), t.clone()).unwrap());
        assert!((ext - base).abs() < 1e-10);

        // adding the weak direction repairs diag(1, eps) with t = e1
        let eps = 1e-3;
        let a = DMatrix::from_diagonal(&vec(&[1.0, eps]));
        let t = vec(&[1.0, 0.0]);
        let c = gram_inverse(&a).unwrap();
        let alpha = vec(&[0.0, 1.0]);
        let ext = extended_local_condition(&c, &a, &alpha, &t, 0.0);
        assert!(ext < 1.0 / eps);
        let direct = brute_local_condition(
            &LinearSystem::new(a.clone(), t.clone()).unwrap().extended(&alpha, 0.0).a,
            &vec(&[1.0, 0.0, 0.0]),
        );
        assert!((ext - direct).abs() / direct < 1e-9);
    }

    #[test]
    fn extended_condition_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..100 {
            let r = 1 + case % 10;
            let k = r + case % 4;
            let a = random_matrix(&mut rng, k, r);
            let t = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            let alpha = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
            let tau: f64 = StandardNormal.sample(&mut rng);
            let c = gram_inverse(&a).unwrap();
            let fast = extended_local_condition(&c, &a, &alpha, &t, tau);
            let ext = LinearSystem::new(a, t).unwrap().extended(&alpha, tau);
            let brute = brute_local_condition(ext.a(), ext.t());
            assert!((fast - brute).abs() / brute < 1e-9, "case {case}: {fast} vs {brute}");
        }
    }

    #[test]
    fn stabilize_picks_repairing_candidate() {
        let a = DMatrix::from_diagonal(&vec(&[1.0, 1e-6]));
        let s = LinearSystem::new(a, vec(&[1.0, 0.0])).unwrap();
        let test = StabilityTest::LocalCondition { theta: 1.0 };
        assert!(!test.verdict(&s).stable);
        let cands = [Candidate { index: 3, alpha: vec(&[0.0, 1.0]) }];
        let pick = stabilize(&s, &test, &cands, |_| 0.0).unwrap();
        assert_eq!(pick.index, 3);
        assert!((pick.score - 1.0).abs() < 1e-3, "{}", pick.score);
    }

    #[test]
    fn stabilize_returns_none_when_nothing_helps() {
        let a = DMatrix::from_diagonal(&vec(&[1.0, 1e-6]));
        let s = LinearSystem::new(a, vec(&[1.0, 0.0])).unwrap();
        let test = StabilityTest::LocalCondition { theta: 1.0 };
        // only the strong direction again: the weak one stays weak
        let cands = [Candidate { index: 0, alpha: vec(&[1.0, 0.0]) }];
        assert!(stabilize(&s, &test, &cands, |_| 0.5).is_none());
        assert!(stabilize(&s, &test, &[], |_| 0.5).is_none());
    }

    #[test]
    fn stabilize_breaks_ties_by_lowest_index() {
        let a = DMatrix::from_diagonal(&vec(&[1.0, 1e-6]));
        let s = LinearSystem::new(a, vec(&[1.0, 0.0])).unwrap();
        let test = StabilityTest::LocalCondition { theta: 1.0 };
        let cands = [
            Candidate { index: 9, alpha: vec(&[0.0, 1.0]) },
            Candidate { index: 4, alpha: vec(&[0.0, 1.0]) },
            Candidate { index: 7, alpha: vec(&[0.0, 1.0]) },
        ];
        let pick = stabilize(&s, &test, &cands, |_| 0.0).unwrap();
        assert_eq!(pick.index, 4);
    }

    #[test]
    fn stabilize_falls_back_for_rank_deficient_systems() {
        let s = sys(&[&[1.0, 1.0], &[1.0, 1.0]], &[2.0, 2.0]);
        let test = StabilityTest::LocalCondition { theta: 1.0 };
        let cands = [Candidate { index: 0, alpha: vec(&[1.0, -1.0]) }];
        let pick = stabilize(&s, &test, &cands, |_| 0.0).unwrap();
        assert_eq!(pick.index, 0);
    }

    #[test]
    fn condition_number_test_ignores_target() {
        let test = StabilityTest::ConditionNumber { kappa: 5.0 };
        assert!(test.verdict(&sys(&[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, 1.0])).stable);
        let a = &[&[1.0, 0.0][..], &[0.0, 0.1][..]];
        assert!(!test.verdict(&sys(a, &[1.0, 0.0])).stable);
        assert!(!test.verdict(&sys(a, &[0.0, 1.0])).stable);
    }

    #[test]
    fn push_appends_equation() {
        let mut s = LinearSystem::empty(2);
        s.push(&vec(&[1.0, 2.0]), 3.0);
        s.push(&vec(&[0.0, 1.0]), -1.0);
        assert_eq!(s.n_equations(), 2);
        assert_eq!(s.a().row(1)[1], 1.0);
        assert_eq!(s.t()[1], -1.0);
        assert!(s.is_complete());
    }

    proptest! {
        #[test]
        fn sherman_morrison_inverts_updated_matrix(seed in 0u64..10_000, n in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_spd(&mut rng, n);
            let alpha = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let d = sherman_morrison_update(&c, &alpha).unwrap();
            let updated = c.try_inverse().unwrap() + &alpha * alpha.transpose();
            let product = &d * &updated;
            let err = (product - DMatrix::identity(n, n)).norm() / (n as f64).sqrt();
            prop_assert!(err < 1e-9, "err {}", err);
        }

        #[test]
        fn local_condition_ignores_target_scale(
            seed in 0u64..10_000, scale in prop_oneof![1e-3f64..1e3, -1e3f64..-1e-3],
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 4, 3);
            let t = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let base = local_condition(&LinearSystem::new(a.clone(), t.clone()).unwrap());
            let scaled = local_condition(&LinearSystem::new(a, t * scale).unwrap());
            prop_assert!((base - scaled).abs() <= 1e-9 * base);
        }

        #[test]
        fn local_condition_bounded_by_kappa(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, n);
            let t = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let s = LinearSystem::new(a, t).unwrap();
            let l = local_condition(&s);
            let k = condition_number(s.a());
            prop_assert!(l <= k + 1e-9 * k, "l {} kappa {}", l, k);
            prop_assert!(l >= 1.0 - 1e-9);
        }

        #[test]
        fn stabilize_returns_a_minimizer(seed in 0u64..5_000, n_cand in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 3, 3);
            let t = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let s = LinearSystem::new(a, t).unwrap();
            let cands: Vec<Candidate> = (0..n_cand)
                .map(|i| Candidate {
                    index: 10 * i,
                    alpha: DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng)),
                })
                .collect();
            let taus: Vec<f64> = (0..n_cand).map(|i| i as f64 * 0.25 - 0.5).collect();
            // a loose test so a selection is always returned
            let test = StabilityTest::LocalCondition { theta: 300.0 };
            let pick = stabilize(&s, &test, &cands, |idx| taus[idx / 10]).unwrap();
            let scores = score_candidates(&s, &test, &cands, &taus);
            for (cand, &sc) in cands.iter().zip(&scores) {
                prop_assert!(pick.score <= sc);
                if sc == pick.score {
                    prop_assert!(pick.index <= cand.index);
                }
            }
        }
    }
}
