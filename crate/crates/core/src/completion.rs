//! Sequential reconstruction and the query-driven Order&Extend driver.
//!
//! Nodes of the mask graph are processed in order. A node's factor is the
//! least-squares solution of the system formed by its already computed
//! neighbors. A system with fewer than `r` equations is completed by
//! querying entries that link the node to computed non-neighbors; a complete
//! system that fails the stability test is extended one queried entry at a
//! time with the candidate chosen by [`stabilize`]. A node that cannot be
//! handled now moves to the back of the queue, at most `max_deferrals`
//! times.
//!
//! Before each node the factor basis is rebalanced (see
//! [`FactorState::rebalance`]), so stability is judged in coordinates where
//! computed rows and columns are equally well spread.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{
    adjust_order_passes, build_mask_graph, smallest_last_order, MaskGraph, NodeId, Ordering, Side,
};
use crate::matrix::{DenseMatrix, ObservedMatrix};
use crate::oracle::{OracleError, Query, QueryOracle, SurrogateSampler};
use crate::stability::{
    condition_number, solve_least_squares, stabilize, Candidate, LinearSystem, StabilityTest,
};

/// Row factors `X` (`n1 x r`) and column factors `Y` (`r x n2`), each with a
/// computed flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    rank: usize,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    row_done: Vec<bool>,
    col_done: Vec<bool>,
}

impl FactorState {
    pub fn new(n_rows: usize, n_cols: usize, rank: usize) -> Self {
        Self {
            rank,
            x: DMatrix::zeros(n_rows, rank),
            y: DMatrix::zeros(rank, n_cols),
            row_done: vec![false; n_rows],
            col_done: vec![false; n_cols],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn is_computed(&self, node: NodeId) -> bool {
        match node.side {
            Side::Row => self.row_done[node.index],
            Side::Col => self.col_done[node.index],
        }
    }

    /// Factor of a computed node as a length-`r` vector.
    pub fn factor(&self, node: NodeId) -> Option<DVector<f64>> {
        if !self.is_computed(node) {
            return None;
        }
        Some(match node.side {
            Side::Row => self.x.row(node.index).transpose(),
            Side::Col => self.y.column(node.index).into_owned(),
        })
    }

    pub fn set_factor(&mut self, node: NodeId, factor: &DVector<f64>) {
        assert_eq!(factor.len(), self.rank, "factor length must equal the rank");
        match node.side {
            Side::Row => {
                self.x.row_mut(node.index).copy_from(&factor.transpose());
                self.row_done[node.index] = true;
            }
            Side::Col => {
                self.y.column_mut(node.index).copy_from(factor);
                self.col_done[node.index] = true;
            }
        }
    }

    pub fn computed_rows(&self) -> &[bool] {
        &self.row_done
    }

    pub fn computed_cols(&self) -> &[bool] {
        &self.col_done
    }

    /// Changes the basis of the factors so the computed rows of `X` and the
    /// computed columns of `Y` have equal Gram matrices.
    ///
    /// `X Y` is unchanged: `X` becomes `X W^{-1}` and `Y` becomes `W Y`.
    /// Local condition numbers do depend on the basis, and the one fixed by
    /// the identity seeds can be badly skewed. Returns `false`, leaving the
    /// state alone, while a side has at most `r` computed factors (identity
    /// seeds are already ideal there) or spans fewer than `r` dimensions.
    pub fn rebalance(&mut self) -> bool {
        let rows: Vec<usize> = (0..self.row_done.len()).filter(|&i| self.row_done[i]).collect();
        let cols: Vec<usize> = (0..self.col_done.len()).filter(|&j| self.col_done[j]).collect();
        if rows.len() <= self.rank || cols.len() <= self.rank {
            return false;
        }
        let xc = self.x.select_rows(&rows);
        let yc = self.y.select_columns(&cols);
        let (Some(lx), Some(ly)) = (
            (xc.transpose() * &xc).cholesky(),
            (&yc * yc.transpose()).cholesky(),
        ) else {
            return false;
        };
        let rx = lx.l().transpose();
        let svd = (&rx * ly.l()).svd(true, false);
        let u = svd.u.expect("requested");
        let s = &svd.singular_values;
        let s_max = s.iter().copied().fold(0.0, f64::max);
        if s.iter().any(|&v| !(v > crate::matrix::RANK_TOLERANCE * s_max)) {
            return false;
        }
        let sqrt_s = DMatrix::from_diagonal(&s.map(f64::sqrt));
        let inv_sqrt_s = DMatrix::from_diagonal(&s.map(|v| 1.0 / v.sqrt()));
        let Some(rx_inv) = rx.clone().try_inverse() else {
            return false;
        };
        let w = &inv_sqrt_s * u.transpose() * &rx;
        let w_inv = rx_inv * &u * &sqrt_s;
        self.x = &self.x * w_inv;
        self.y = w * &self.y;
        true
    }

    /// `X Y` with every entry whose row or column is missing set to zero.
    pub fn estimate(&self) -> DenseMatrix {
        let mut m = &self.x * &self.y;
        for (i, _) in self.row_done.iter().enumerate().filter(|(_, &d)| !d) {
            m.row_mut(i).fill(0.0);
        }
        for (j, _) in self.col_done.iter().enumerate().filter(|(_, &d)| !d) {
            m.column_mut(j).fill(0.0);
        }
        DenseMatrix::from_nalgebra(m).expect("factors are finite")
    }
}

/// Nodes still to be solved, in processing order.
#[derive(Debug, Clone)]
pub struct WorkQueue {
    pending: VecDeque<NodeId>,
    deferrals: BTreeMap<NodeId, usize>,
    max_deferrals: usize,
}

impl WorkQueue {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, max_deferrals: usize) -> Self {
        Self {
            pending: nodes.into_iter().collect(),
            deferrals: BTreeMap::new(),
            max_deferrals,
        }
    }

    pub fn pop(&mut self) -> Option<NodeId> {
        self.pending.pop_front()
    }

    pub fn front(&self) -> Option<NodeId> {
        self.pending.front().copied()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn deferrals(&self, node: NodeId) -> usize {
        self.deferrals.get(&node).copied().unwrap_or(0)
    }

    /// Sends `node` to the back. Returns `false`, and drops the node, once
    /// it has used up its deferrals.
    pub fn defer(&mut self, node: NodeId) -> bool {
        let count = self.deferrals.entry(node).or_insert(0);
        if *count >= self.max_deferrals {
            return false;
        }
        *count += 1;
        self.pending.push_back(node);
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionConfig {
    pub rank: usize,
    pub test: StabilityTest,
    /// Cap on queries; the oracle's own budget also applies.
    pub budget: Option<usize>,
    pub max_deferrals: usize,
    /// Extensions per system while stabilizing; `None` means `rank`.
    pub max_extensions: Option<usize>,
    pub adjust_passes: usize,
    /// Rebalance the factor basis before each system is built.
    pub rebalance: bool,
    /// Seed of the surrogate sampler.
    pub seed: u64,
}

impl CompletionConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            test: StabilityTest::default(),
            budget: None,
            max_deferrals: 2,
            max_extensions: None,
            adjust_passes: 1,
            rebalance: true,
            seed: 0,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.test = StabilityTest::LocalCondition { theta };
        self
    }

    pub fn with_test(mut self, test: StabilityTest) -> Self {
        self.test = test;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let limit = self.test.limit();
        if !(limit.is_finite() && limit > 0.0) {
            return Err(Error::InvalidConfig(format!("stability limit {limit} must be finite and positive")));
        }
        if let StabilityTest::LocalCondition { theta } = self.test {
            if !(theta > 0.0) {
                return Err(Error::InvalidConfig(format!("theta {theta} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompletionStats {
    pub solved: usize,
    pub deferrals: usize,
    /// Systems completed by queries.
    pub incomplete_repairs: usize,
    /// Entries queried to stabilize complete systems.
    pub stabilizing_queries: usize,
}

#[derive(Debug, Clone)]
pub struct CompletionReport {
    /// `X Y` on recovered entries, zero elsewhere.
    pub estimate: DenseMatrix,
    pub factors: FactorState,
    /// Entries revealed during this run, in order.
    pub queries: Vec<Query>,
    pub queries_used: usize,
    pub unrecovered_nodes: Vec<NodeId>,
    pub stats: CompletionStats,
}

impl CompletionReport {
    /// An entry is recovered when both its row and its column were computed.
    pub fn is_recovered(&self, row: usize, col: usize) -> bool {
        self.factors.row_done[row] && self.factors.col_done[col]
    }

    pub fn recovered_count(&self) -> usize {
        let rows = self.factors.row_done.iter().filter(|&&d| d).count();
        let cols = self.factors.col_done.iter().filter(|&&d| d).count();
        rows * cols
    }

    pub fn recovered_fraction(&self) -> f64 {
        let total = self.factors.row_done.len() * self.factors.col_done.len();
        self.recovered_count() as f64 / total as f64
    }
}

/// Outcome of a repair attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repair {
    /// The system now meets its requirement; `queries` entries were revealed.
    Done { queries: usize },
    /// The node must wait; `queries` entries were revealed before giving up.
    Deferred { queries: usize },
}

/// Chooses which `r` nodes get identity factors and moves them to the front.
///
/// On each side with at least `r` nodes the `r` highest-degree nodes are
/// taken (ties to the lower index); the side with the larger total degree
/// wins, rows on a tie. Seeds keep their index order, as does the rest of
/// the ordering.
pub fn select_seed(
    graph: &MaskGraph,
    order: &Ordering,
    rank: usize,
) -> Result<(Side, Vec<NodeId>, Ordering)> {
    let pick = |side: Side| -> Option<(usize, Vec<NodeId>)> {
        let mut nodes: Vec<NodeId> = graph.nodes_on(side).collect();
        if nodes.len() < rank {
            return None;
        }
        nodes.sort_by(|&a, &b| graph.degree(b).cmp(&graph.degree(a)).then(a.index.cmp(&b.index)));
        nodes.truncate(rank);
        nodes.sort();
        Some((nodes.iter().map(|&v| graph.degree(v)).sum(), nodes))
    };
    let (side, seeds) = match (pick(Side::Row), pick(Side::Col)) {
        (Some((rd, rows)), Some((cd, cols))) => {
            if cd > rd {
                (Side::Col, cols)
            } else {
                (Side::Row, rows)
            }
        }
        (Some((_, rows)), None) => (Side::Row, rows),
        (None, Some((_, cols))) => (Side::Col, cols),
        (None, None) => return Err(Error::NoSeedSide { rank }),
    };
    let mut sequence = seeds.clone();
    sequence.extend(order.sequence().iter().filter(|v| !seeds.contains(v)));
    let reordered = Ordering::new(graph.n_rows(), graph.n_cols(), sequence)
        .expect("seeds moved within a permutation");
    Ok((side, seeds, reordered))
}

/// Known values linking each node to the opposite side, indexed by the
/// opposite node.
#[derive(Debug, Clone)]
struct KnownValues {
    by_row: Vec<BTreeMap<usize, f64>>,
    by_col: Vec<BTreeMap<usize, f64>>,
}

impl KnownValues {
    fn new(obs: &ObservedMatrix) -> Self {
        let mut known = Self {
            by_row: vec![BTreeMap::new(); obs.n_rows()],
            by_col: vec![BTreeMap::new(); obs.n_cols()],
        };
        for ((i, j), v) in obs.iter() {
            known.insert(i, j, v);
        }
        known
    }

    fn insert(&mut self, row: usize, col: usize, value: f64) {
        self.by_row[row].insert(col, value);
        self.by_col[col].insert(row, value);
    }

    fn of(&self, node: NodeId) -> &BTreeMap<usize, f64> {
        match node.side {
            Side::Row => &self.by_row[node.index],
            Side::Col => &self.by_col[node.index],
        }
    }
}

/// Matrix position of the entry linking `node` to opposite-side `other`.
fn position(node: NodeId, other: usize) -> (usize, usize) {
    match node.side {
        Side::Row => (node.index, other),
        Side::Col => (other, node.index),
    }
}

/// Mutable state of one completion run.
pub struct Engine<'o> {
    config: CompletionConfig,
    state: FactorState,
    known: KnownValues,
    sampler: SurrogateSampler,
    oracle: Option<&'o mut dyn QueryOracle>,
    budget_left: usize,
    queries: Vec<Query>,
    stats: CompletionStats,
}

impl<'o> Engine<'o> {
    pub fn new(
        obs: &ObservedMatrix,
        config: CompletionConfig,
        oracle: Option<&'o mut dyn QueryOracle>,
    ) -> Result<Self> {
        let (n1, n2) = (obs.n_rows(), obs.n_cols());
        if config.rank == 0 || config.rank > n1.min(n2) {
            return Err(Error::RankOutOfRange {
                rank: config.rank,
                n_rows: n1,
                n_cols: n2,
            });
        }
        config.validate()?;
        let budget_left = match &oracle {
            Some(o) => config.budget.map_or(o.remaining_budget(), |b| b.min(o.remaining_budget())),
            None => 0,
        };
        Ok(Self {
            config,
            state: FactorState::new(n1, n2, config.rank),
            known: KnownValues::new(obs),
            sampler: SurrogateSampler::new(obs, config.seed),
            oracle,
            budget_left,
            queries: Vec::new(),
            stats: CompletionStats::default(),
        })
    }

    pub fn state(&self) -> &FactorState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut FactorState {
        &mut self.state
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    fn rank(&self) -> usize {
        self.config.rank
    }

    /// System of `node` from its computed neighbors in the current mask,
    /// neighbors in index order.
    pub fn build_system(&self, node: NodeId) -> LinearSystem {
        let opposite = node.side.opposite();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (&other, &value) in self.known.of(node) {
            if let Some(f) = self.state.factor(NodeId { side: opposite, index: other }) {
                rows.push(f.transpose());
                targets.push(value);
            }
        }
        if rows.is_empty() {
            return LinearSystem::empty(self.rank());
        }
        LinearSystem::new(DMatrix::from_rows(&rows), DVector::from_vec(targets))
            .expect("factors and observed values are finite")
    }

    /// Computed opposite-side nodes not linked to `node` whose entry may be
    /// queried, in index order.
    fn candidates(&self, node: NodeId) -> Vec<Candidate> {
        let opposite = node.side.opposite();
        let linked = self.known.of(node);
        let count = match opposite {
            Side::Row => self.state.row_done.len(),
            Side::Col => self.state.col_done.len(),
        };
        (0..count)
            .filter(|k| !linked.contains_key(k))
            .filter_map(|k| {
                let alpha = self.state.factor(NodeId { side: opposite, index: k })?;
                let (i, j) = position(node, k);
                let allowed = self.oracle.as_ref().is_some_and(|o| o.is_queryable(i, j));
                allowed.then_some(Candidate { index: k, alpha })
            })
            .collect()
    }

    fn query(&mut self, node: NodeId, other: usize) -> Result<Option<f64>> {
        let (i, j) = position(node, other);
        let Some(oracle) = self.oracle.as_mut() else {
            return Ok(None);
        };
        if self.budget_left == 0 {
            return Ok(None);
        }
        match oracle.query(i, j) {
            Ok(value) => {
                self.budget_left -= 1;
                self.queries.push(Query { row: i, col: j, value });
                self.known.insert(i, j, value);
                self.sampler.record(i, j, value);
                Ok(Some(value))
            }
            Err(OracleError::BudgetExhausted) => {
                self.budget_left = 0;
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn surrogates(&mut self, node: NodeId, candidates: &[Candidate]) -> Vec<f64> {
        candidates
            .iter()
            .map(|c| {
                let (i, j) = position(node, c.index);
                self.sampler.sample(i, j)
            })
            .collect()
    }

    /// Queries entries until `sys` has `r` equations.
    ///
    /// Picks are greedy. While the system stays underdetermined after the
    /// pick, the candidate farthest from the span of the current rows is
    /// taken; the pick that completes it minimizes the condition number of
    /// the completed matrix. Nothing is queried unless enough candidates and
    /// budget exist for the whole repair.
    pub fn repair_incomplete(&mut self, node: NodeId, sys: &mut LinearSystem) -> Result<Repair> {
        let r = self.rank();
        let k = sys.n_equations();
        if k >= r {
            return Ok(Repair::Done { queries: 0 });
        }
        let need = r - k;
        let mut candidates = self.candidates(node);
        if self.oracle.is_none() || candidates.len() < need || self.budget_left < need {
            return Ok(Repair::Deferred { queries: 0 });
        }
        let mut made = 0;
        while sys.n_equations() < r {
            let best = if sys.n_equations() + 1 < r {
                farthest_from_span(sys, &candidates)
            } else {
                best_conditioned(sys, &candidates)
            };
            let chosen = candidates.remove(best);
            match self.query(node, chosen.index)? {
                Some(value) => {
                    sys.push(&chosen.alpha, value);
                    made += 1;
                }
                None => return Ok(Repair::Deferred { queries: made }),
            }
        }
        self.stats.incomplete_repairs += 1;
        Ok(Repair::Done { queries: made })
    }

    /// Extends an unstable complete system by queried entries chosen with
    /// [`stabilize`], re-testing the extended system after each one.
    pub fn repair_unstable(&mut self, node: NodeId, sys: &mut LinearSystem) -> Result<Repair> {
        let test = self.config.test;
        let max_extensions = self.config.max_extensions.unwrap_or(self.rank());
        let mut made = 0;
        for _ in 0..=max_extensions {
            if test.verdict(sys).stable {
                return Ok(Repair::Done { queries: made });
            }
            if made == max_extensions || self.oracle.is_none() || self.budget_left == 0 {
                break;
            }
            let candidates = self.candidates(node);
            let taus = self.surrogates(node, &candidates);
            let mut next_tau = taus.iter().copied();
            let Some(pick) = stabilize(sys, &test, &candidates, |_| {
                next_tau.next().expect("one surrogate per candidate")
            }) else {
                break;
            };
            match self.query(node, pick.index)? {
                Some(value) => {
                    sys.push(&pick.alpha, value);
                    made += 1;
                    self.stats.stabilizing_queries += 1;
                }
                None => break,
            }
        }
        Ok(Repair::Deferred { queries: made })
    }

    /// Tries to compute `node`. Returns whether it was solved and how many
    /// queries were spent.
    fn process(&mut self, node: NodeId) -> Result<(bool, usize)> {
        if self.config.rebalance {
            self.state.rebalance();
        }
        let mut sys = self.build_system(node);
        let mut spent = 0;
        match self.repair_incomplete(node, &mut sys)? {
            Repair::Done { queries } => spent += queries,
            Repair::Deferred { queries } => return Ok((false, spent + queries)),
        }
        match self.repair_unstable(node, &mut sys)? {
            Repair::Done { queries } => spent += queries,
            Repair::Deferred { queries } => return Ok((false, spent + queries)),
        }
        match solve_least_squares(&sys) {
            Ok(y) => {
                self.state.set_factor(node, &y);
                self.stats.solved += 1;
                Ok((true, spent))
            }
            Err(_) => Ok((false, spent)),
        }
    }

    /// Seeds factors and processes the rest of `order` until the queue
    /// empties or a full round makes no progress.
    pub fn run(mut self, graph: &MaskGraph, order: &Ordering) -> Result<CompletionReport> {
        let r = self.rank();
        let (_, seeds, order) = select_seed(graph, order, r)?;
        for (k, &node) in seeds.iter().enumerate() {
            let mut e = DVector::zeros(r);
            e[k] = 1.0;
            self.state.set_factor(node, &e);
        }
        let mut queue = WorkQueue::new(order.sequence()[r..].iter().copied(), self.config.max_deferrals);
        // Round in which each node was last tried; a node tried again in the
        // same round means nothing has changed since.
        let mut round = 0usize;
        let mut tried: BTreeMap<NodeId, usize> = BTreeMap::new();
        while let Some(node) = queue.front() {
            if tried.get(&node) == Some(&round) {
                break;
            }
            queue.pop();
            tried.insert(node, round);
            let (solved, spent) = self.process(node)?;
            if solved || spent > 0 {
                round += 1;
            }
            if !solved {
                self.stats.deferrals += 1;
                queue.defer(node);
            }
        }
        let unrecovered_nodes = graph.nodes().filter(|&v| !self.state.is_computed(v)).collect();
        Ok(CompletionReport {
            estimate: self.state.estimate(),
            queries_used: self.queries.len(),
            queries: self.queries,
            factors: self.state,
            unrecovered_nodes,
            stats: self.stats,
        })
    }
}

/// Index of the candidate with the largest component orthogonal to the
/// rows of `sys`; ties to the earliest.
fn farthest_from_span(sys: &LinearSystem, candidates: &[Candidate]) -> usize {
    let residual = |alpha: &DVector<f64>| -> f64 {
        if sys.n_equations() == 0 {
            return alpha.norm();
        }
        // Orthonormal basis of the row space via thin SVD.
        let svd = sys.a().clone().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let mut rest = alpha.clone();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > crate::matrix::RANK_TOLERANCE * s_max {
                let v = v_t.row(k).transpose();
                rest -= &v * v.dot(alpha);
            }
        }
        rest.norm()
    };
    let scores: Vec<f64> = candidates.iter().map(|c| residual(&c.alpha)).collect();
    (0..candidates.len())
        .max_by(|&x, &y| scores[x].total_cmp(&scores[y]).then(y.cmp(&x)))
        .expect("candidates checked non-empty")
}

/// Index of the candidate that leaves `sys` with the smallest condition
/// number; ties to the earliest.
///
/// The entry completing a system is not known before it is queried, so the
/// pick is judged on the matrix alone. A surrogate target can make a nearly
/// singular completion look well posed.
fn best_conditioned(sys: &LinearSystem, candidates: &[Candidate]) -> usize {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| condition_number(sys.extended(&c.alpha, 0.0).a()))
        .collect();
    (0..candidates.len())
        .min_by(|&x, &y| scores[x].total_cmp(&scores[y]).then(x.cmp(&y)))
        .expect("candidates checked non-empty")
}

/// Builds the ordering from the mask graph and runs the full driver.
pub fn order_and_extend(
    obs: &ObservedMatrix,
    config: CompletionConfig,
    oracle: &mut dyn QueryOracle,
) -> Result<CompletionReport> {
    let graph = build_mask_graph(&obs.mask());
    let order = adjust_order_passes(&graph, &smallest_last_order(&graph), config.rank, config.adjust_passes);
    Engine::new(obs, config, Some(oracle))?.run(&graph, &order)
}

/// Solves along `order` without queries; incomplete or unstable systems are
/// deferred and, failing that, left unrecovered.
pub fn sequential_complete(
    obs: &ObservedMatrix,
    config: CompletionConfig,
    order: &Ordering,
) -> Result<CompletionReport> {
    let graph = build_mask_graph(&obs.mask());
    if order.len() != graph.n_nodes() {
        return Err(Error::InvalidConfig(format!(
            "ordering has {} nodes, graph has {}",
            order.len(),
            graph.n_nodes()
        )));
    }
    Engine::new(obs, config, None)?.run(&graph, order)
}

/// [`sequential_complete`] on the adjusted smallest-last ordering.
pub fn sequential_default(obs: &ObservedMatrix, config: CompletionConfig) -> Result<CompletionReport> {
    let graph = build_mask_graph(&obs.mask());
    let order = adjust_order_passes(&graph, &smallest_last_order(&graph), config.rank, config.adjust_passes);
    Engine::new(obs, config, None)?.run(&graph, &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{critical_mask_size, generate_low_rank, rel_error, sample_random_mask, Mask};
    use crate::oracle::GroundTruthOracle;

    fn r(i: usize) -> NodeId {
        NodeId::row(i - 1)
    }

    fn c(j: usize) -> NodeId {
        NodeId::col(j - 1)
    }

    fn fig1_mask() -> Mask {
        Mask::new(3, 3, [(0, 0), (0, 1), (0, 2), (1, 1), (2, 0)]).unwrap()
    }

    #[test]
    fn seed_on_equal_degrees_is_first_row() {
        let g = build_mask_graph(&Mask::full(3, 3));
        let pi = smallest_last_order(&g);
        let (side, seeds, order) = select_seed(&g, &pi, 1).unwrap();
        assert_eq!(side, Side::Row);
        assert_eq!(seeds, vec![r(1)]);
        assert_eq!(order.sequence()[0], r(1));
    }

    #[test]
    fn seed_on_fig1_ties_to_rows() {
        let g = build_mask_graph(&fig1_mask());
        let pi = smallest_last_order(&g);
        let (side, seeds, order) = select_seed(&g, &pi, 2).unwrap();
        assert_eq!(side, Side::Row);
        assert_eq!(seeds, vec![r(1), r(2)]);
        assert_eq!(&order.sequence()[..2], &[r(1), r(2)]);
        let rest: Vec<NodeId> = pi.sequence().iter().copied().filter(|v| !seeds.contains(v)).collect();
        assert_eq!(&order.sequence()[2..], &rest[..]);
    }

    #[test]
    fn seed_prefers_heavier_side() {
        // every row links to column 1 only: column side wins for r = 1
        let g = build_mask_graph(&Mask::new(3, 2, [(0, 0), (1, 0), (2, 0)]).unwrap());
        let (side, seeds, _) = select_seed(&g, &smallest_last_order(&g), 1).unwrap();
        assert_eq!(side, Side::Col);
        assert_eq!(seeds, vec![c(1)]);
    }

    #[test]
    fn seed_needs_enough_nodes() {
        let g = build_mask_graph(&Mask::empty(2, 2));
        assert!(matches!(
            select_seed(&g, &smallest_last_order(&g), 3),
            Err(Error::NoSeedSide { rank: 3 })
        ));
    }

    #[test]
    fn seeding_all_rows_determines_columns() {
        let truth = generate_low_rank(3, 5, 3, 0.0, 4).unwrap();
        let obs = ObservedMatrix::from_truth(&truth, &Mask::full(3, 5)).unwrap();
        let report = sequential_default(&obs, CompletionConfig::new(3)).unwrap();
        assert!(report.unrecovered_nodes.is_empty());
        assert!(rel_error(&truth, &report.estimate).unwrap() < 1e-8);
    }

    fn engine_with<'o>(
        obs: &ObservedMatrix,
        rank: usize,
        oracle: Option<&'o mut dyn QueryOracle>,
    ) -> Engine<'o> {
        Engine::new(obs, CompletionConfig::new(rank), oracle).unwrap()
    }

    #[test]
    fn build_system_uses_computed_neighbors() {
        let mut obs = ObservedMatrix::empty(3, 2).unwrap();
        obs.insert(0, 1, 5.0).unwrap();
        obs.insert(2, 1, 7.0).unwrap();
        obs.insert(1, 0, 1.0).unwrap();
        let mut engine = engine_with(&obs, 2, None);
        engine.state_mut().set_factor(r(1), &DVector::from_vec(vec![1.0, 2.0]));
        engine.state_mut().set_factor(r(3), &DVector::from_vec(vec![3.0, 4.0]));
        let sys = engine.build_system(c(2));
        assert_eq!(sys.a(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(sys.t().as_slice(), &[5.0, 7.0]);
        assert_eq!(engine.build_system(c(1)).n_equations(), 0);

        engine.state_mut().set_factor(c(2), &DVector::from_vec(vec![0.5, -1.0]));
        let row_sys = engine.build_system(r(1));
        assert_eq!(row_sys.a(), &DMatrix::from_row_slice(1, 2, &[0.5, -1.0]));
        assert_eq!(row_sys.t().as_slice(), &[5.0]);
    }

    #[test]
    fn complete_system_needs_no_incomplete_repair() {
        let obs = ObservedMatrix::empty(2, 2).unwrap();
        let truth = DenseMatrix::identity(2);
        let mut oracle = GroundTruthOracle::new(truth, 5);
        let mut engine = engine_with(&obs, 1, Some(&mut oracle));
        let mut sys = LinearSystem::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(engine.repair_incomplete(c(1), &mut sys).unwrap(), Repair::Done { queries: 0 });
        assert!(engine.queries().is_empty());
    }

    #[test]
    fn incomplete_repair_forced_choice() {
        // rank 2, column 1 linked to computed row 1 only; row 3 is the only
        // other computed row
        let truth = DenseMatrix::from_rows(&[&[1.0, 0.0], &[2.0, 1.0], &[4.0, 3.0]]).unwrap();
        let mut obs = ObservedMatrix::empty(3, 2).unwrap();
        obs.insert(0, 0, 1.0).unwrap();
        let mut oracle = GroundTruthOracle::new(truth, 10);
        let mut engine = engine_with(&obs, 2, Some(&mut oracle));
        engine.state_mut().set_factor(r(1), &DVector::from_vec(vec![1.0, 0.0]));
        engine.state_mut().set_factor(r(3), &DVector::from_vec(vec![1.0, 1.0]));
        let mut sys = engine.build_system(c(1));
        let outcome = engine.repair_incomplete(c(1), &mut sys).unwrap();
        assert_eq!(outcome, Repair::Done { queries: 1 });
        assert_eq!(engine.queries(), &[Query { row: 2, col: 0, value: 4.0 }]);
        assert_eq!(sys.n_equations(), 2);
    }

    #[test]
    fn incomplete_repair_defers_without_budget() {
        let truth = DenseMatrix::identity(3);
        let obs = ObservedMatrix::empty(3, 3).unwrap();
        let mut oracle = GroundTruthOracle::new(truth, 0);
        let mut engine = engine_with(&obs, 1, Some(&mut oracle));
        engine.state_mut().set_factor(r(1), &DVector::from_vec(vec![1.0]));
        let mut sys = engine.build_system(c(1));
        assert_eq!(engine.repair_incomplete(c(1), &mut sys).unwrap(), Repair::Deferred { queries: 0 });
        drop(engine);
        assert!(oracle.log().is_empty());
    }

    #[test]
    fn incomplete_repair_defers_without_candidates() {
        let truth = DenseMatrix::identity(3);
        let obs = ObservedMatrix::empty(3, 3).unwrap();
        let mut oracle = GroundTruthOracle::new(truth, 10);
        let mut engine = engine_with(&obs, 2, Some(&mut oracle));
        engine.state_mut().set_factor(r(1), &DVector::from_vec(vec![1.0, 0.0]));
        let mut sys = engine.build_system(c(1));
        assert_eq!(engine.repair_incomplete(c(1), &mut sys).unwrap(), Repair::Deferred { queries: 0 });
        assert!(engine.queries().is_empty());
    }

    /// Column 1 sees rows 1 and 2 with factors diag(1, 1e-6) and target e1;
    /// row 3 carries the missing direction.
    fn weak_instance() -> (DenseMatrix, ObservedMatrix) {
        let truth = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]).unwrap();
        let mut obs = ObservedMatrix::empty(3, 2).unwrap();
        obs.insert(0, 0, 1.0).unwrap();
        obs.insert(1, 0, 0.0).unwrap();
        (truth, obs)
    }

    fn set_weak_factors(engine: &mut Engine<'_>) {
        let state = engine.state_mut();
        state.set_factor(r(1), &DVector::from_vec(vec![1.0, 0.0]));
        state.set_factor(r(2), &DVector::from_vec(vec![0.0, 1e-6]));
        state.set_factor(r(3), &DVector::from_vec(vec![0.0, 1.0]));
    }

    #[test]
    fn unstable_repair_makes_one_query() {
        let (truth, obs) = weak_instance();
        let mut oracle = GroundTruthOracle::new(truth, 10);
        let mut engine = engine_with(&obs, 2, Some(&mut oracle));
        set_weak_factors(&mut engine);
        let mut sys = engine.build_system(c(1));
        assert!(!StabilityTest::default().verdict(&sys).stable);
        let outcome = engine.repair_unstable(c(1), &mut sys).unwrap();
        assert_eq!(outcome, Repair::Done { queries: 1 });
        assert_eq!(engine.queries(), &[Query { row: 2, col: 0, value: 0.0 }]);
        assert!(StabilityTest::default().verdict(&sys).stable);
    }

    #[test]
    fn stable_system_is_left_alone() {
        let (truth, obs) = weak_instance();
        let mut oracle = GroundTruthOracle::new(truth, 10);
        let mut engine = engine_with(&obs, 2, Some(&mut oracle));
        engine.state_mut().set_factor(r(1), &DVector::from_vec(vec![1.0, 0.0]));
        engine.state_mut().set_factor(r(2), &DVector::from_vec(vec![0.0, 1.0]));
        let mut sys = engine.build_system(c(1));
        let before = sys.clone();
        assert_eq!(engine.repair_unstable(c(1), &mut sys).unwrap(), Repair::Done { queries: 0 });
        assert_eq!(sys, before);
    }

    #[test]
    fn unstable_repair_defers_without_oracle() {
        let (_, obs) = weak_instance();
        let mut engine = engine_with(&obs, 2, None);
        set_weak_factors(&mut engine);
        let mut sys = engine.build_system(c(1));
        assert_eq!(engine.repair_unstable(c(1), &mut sys).unwrap(), Repair::Deferred { queries: 0 });
    }

    #[test]
    fn fully_observed_needs_no_queries() {
        let truth = generate_low_rank(12, 9, 2, 0.0, 8).unwrap();
        let obs = ObservedMatrix::from_truth(&truth, &Mask::full(12, 9)).unwrap();
        let mut oracle = GroundTruthOracle::new(truth.clone(), 100);
        let report = order_and_extend(&obs, CompletionConfig::new(2), &mut oracle).unwrap();
        assert_eq!(report.queries_used, 0);
        assert!(report.unrecovered_nodes.is_empty());
        assert!(rel_error(&truth, &report.estimate).unwrap() < 1e-8);
    }

    #[test]
    fn empty_mask_costs_exactly_the_critical_size() {
        let truth = generate_low_rank(20, 15, 2, 0.0, 1).unwrap();
        let obs = ObservedMatrix::empty(20, 15).unwrap();
        let phi = critical_mask_size(20, 15, 2).unwrap();
        let mut oracle = GroundTruthOracle::new(truth.clone(), 10 * phi);
        let report = order_and_extend(&obs, CompletionConfig::new(2), &mut oracle).unwrap();
        assert_eq!(report.queries_used, 66);
        assert!(rel_error(&truth, &report.estimate).unwrap() < 1e-8);
    }

    #[test]
    fn small_budget_gives_partial_completion() {
        let truth = generate_low_rank(30, 25, 3, 0.0, 2).unwrap();
        let phi = critical_mask_size(30, 25, 3).unwrap();
        let mask = sample_random_mask(30, 25, phi / 3, 2).unwrap();
        let obs = ObservedMatrix::from_truth(&truth, &mask).unwrap();
        let mut oracle = GroundTruthOracle::new(truth, 5);
        let report = order_and_extend(&obs, CompletionConfig::new(3), &mut oracle).unwrap();
        assert!(report.queries_used <= 5);
        assert!(!report.unrecovered_nodes.is_empty());
        for i in 0..30 {
            for j in 0..25 {
                if !report.is_recovered(i, j) {
                    assert_eq!(report.estimate.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn sequential_on_complete_prefix_order() {
        // dense mask: after seeding rows, every column sees all seed rows
        let truth = generate_low_rank(10, 8, 2, 0.0, 6).unwrap();
        let obs = ObservedMatrix::from_truth(&truth, &Mask::full(10, 8)).unwrap();
        let graph = build_mask_graph(&obs.mask());
        let order = Ordering::new(10, 8, graph.nodes().collect()).unwrap();
        let report = sequential_complete(&obs, CompletionConfig::new(2), &order).unwrap();
        assert!(report.unrecovered_nodes.is_empty());
        assert!(rel_error(&truth, &report.estimate).unwrap() < 1e-8);
    }

    #[test]
    fn rejects_bad_rank_and_theta() {
        let obs = ObservedMatrix::empty(3, 4).unwrap();
        assert!(matches!(
            sequential_default(&obs, CompletionConfig::new(0)),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(matches!(
            sequential_default(&obs, CompletionConfig::new(4)),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(matches!(
            sequential_default(&obs, CompletionConfig::new(1).with_theta(-1.0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn rebalance_keeps_product_and_equalizes_grams() {
        let mut state = FactorState::new(5, 4, 2);
        let rows = [[1.0, 0.0], [0.0, 1.0], [3.0, 1e-3], [2.0, 0.5]];
        for (i, f) in rows.iter().enumerate() {
            state.set_factor(NodeId::row(i), &DVector::from_row_slice(f));
        }
        let cols = [[1.0, 2.0], [0.3, -4.0], [7.0, 1.0]];
        for (j, f) in cols.iter().enumerate() {
            state.set_factor(NodeId::col(j), &DVector::from_row_slice(f));
        }
        let before = &state.x * &state.y;
        assert!(state.rebalance());
        let after = &state.x * &state.y;
        assert!((&after - &before).norm() < 1e-12 * before.norm());
        let xc = state.x.rows(0, 4).into_owned();
        let yc = state.y.columns(0, 3).into_owned();
        let gx = xc.transpose() * &xc;
        let gy = &yc * yc.transpose();
        assert!((&gx - &gy).norm() < 1e-10 * gx.norm());
        assert!(!state.is_computed(NodeId::row(4)));
        assert!(state.x.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rebalance_waits_for_more_than_rank_factors() {
        let mut state = FactorState::new(3, 3, 2);
        state.set_factor(r(1), &DVector::from_vec(vec![1.0, 0.0]));
        state.set_factor(r(2), &DVector::from_vec(vec![0.0, 1.0]));
        for j in 0..3 {
            state.set_factor(NodeId::col(j), &DVector::from_vec(vec![j as f64, 1.0]));
        }
        let snapshot = state.clone();
        assert!(!state.rebalance());
        assert_eq!(state, snapshot);
    }

    #[test]
    fn work_queue_caps_deferrals() {
        let mut q = WorkQueue::new([r(1), c(1)], 2);
        let first = q.pop().unwrap();
        assert!(q.defer(first));
        assert_eq!(q.pop(), Some(c(1)));
        assert_eq!(q.pop(), Some(r(1)));
        assert!(q.defer(r(1)));
        assert_eq!(q.deferrals(r(1)), 2);
        assert_eq!(q.pop(), Some(r(1)));
        assert!(!q.defer(r(1)));
        assert!(q.is_empty());
    }
}
