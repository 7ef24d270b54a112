//! Budget sweeps comparing Order&Extend with baselines on one ground truth.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::completion::{order_and_extend, sequential_default, CompletionConfig, CompletionReport};
use crate::error::{Error, Result};
use crate::io::format_value;
use crate::matrix::{critical_mask_size, rel_error, sample_random_mask, DenseMatrix, ObservedMatrix};
use crate::oracle::{GroundTruthOracle, QueryOracle};
use crate::stability::StabilityTest;

pub const RESULTS_HEADER: &str = "algorithm,b,queries_used,rel_error,recovered_fraction,wall_time_s,seed";

/// Mixed into the experiment seed for the baseline's random extension, so it
/// does not replay the draws that picked the initial mask.
const EXTENSION_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    /// Order&Extend with the local-condition test.
    OrderExtend,
    /// `b` uniformly random extra entries, then the sequential solver.
    RandomBaseline,
    /// The sequential solver alone; `b` is ignored.
    Sequential,
    /// Order&Extend with the condition-number test at the given threshold.
    ConditionNumber { kappa: f64 },
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::OrderExtend => f.write_str("order_extend"),
            Algorithm::RandomBaseline => f.write_str("random_baseline"),
            Algorithm::Sequential => f.write_str("sequential"),
            Algorithm::ConditionNumber { kappa } => write!(f, "kappa_{kappa}"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "order_extend" => Ok(Algorithm::OrderExtend),
            "random_baseline" => Ok(Algorithm::RandomBaseline),
            "sequential" => Ok(Algorithm::Sequential),
            _ => match s.strip_prefix("kappa_").map(str::parse::<f64>) {
                Some(Ok(kappa)) if kappa > 1.0 && kappa.is_finite() => {
                    Ok(Algorithm::ConditionNumber { kappa })
                }
                _ => Err(Error::InvalidConfig(format!(
                    "unknown algorithm {s:?}; expected order_extend, random_baseline, sequential or kappa_<threshold>"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rank: usize,
    pub theta: f64,
    /// Initial mask size as a fraction of the critical mask size.
    pub mask_fraction: f64,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    /// Measure wall time per cell. Off keeps results byte-reproducible.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            theta: 1.0,
            mask_fraction: 0.4,
            budgets: vec![0],
            seeds: vec![0],
            algorithms: vec![Algorithm::OrderExtend, Algorithm::RandomBaseline],
            timing: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mask fraction {} must be positive",
                self.mask_fraction
            )));
        }
        if self.budgets.is_empty() || self.seeds.is_empty() || self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("budgets, seeds and algorithms must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub algorithm: String,
    pub budget: usize,
    pub queries_used: usize,
    pub rel_error: f64,
    pub recovered_fraction: f64,
    pub wall_time_s: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub critical_size: usize,
    pub initial_mask_size: usize,
    /// Ordered by seed, then budget, then algorithm, as listed in the config.
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentOutput {
    /// Queries needed to bring the initial mask up to the critical size.
    pub fn reference_budget(&self) -> usize {
        self.critical_size.saturating_sub(self.initial_mask_size)
    }
}

/// Adds `b` distinct unobserved entries of `truth`, drawn uniformly.
pub fn random_extend_baseline(
    obs: &ObservedMatrix,
    truth: &DenseMatrix,
    b: usize,
    seed: u64,
) -> Result<ObservedMatrix> {
    let shape = (obs.n_rows(), obs.n_cols());
    if truth.shape() != shape {
        return Err(Error::DimensionMismatch {
            expected: shape,
            got: truth.shape(),
        });
    }
    let n_cols = obs.n_cols();
    let free: Vec<(usize, usize)> = (0..obs.n_rows() * n_cols)
        .map(|k| (k / n_cols, k % n_cols))
        .filter(|&(i, j)| obs.get(i, j).is_none())
        .collect();
    if b > free.len() {
        return Err(Error::TooManyPositions {
            requested: b,
            available: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extended = obs.clone();
    for k in rand::seq::index::sample(&mut rng, free.len(), b) {
        let (i, j) = free[k];
        extended.insert(i, j, truth.get(i, j))?;
    }
    Ok(extended)
}

/// Order&Extend judging stability by the condition number of the system
/// matrix instead of the local condition.
pub fn condition_number_variant(
    obs: &ObservedMatrix,
    config: CompletionConfig,
    kappa: f64,
    oracle: &mut dyn QueryOracle,
) -> Result<CompletionReport> {
    if !(kappa > 1.0 && kappa.is_finite()) {
        return Err(Error::InvalidConfig(format!("kappa threshold {kappa} must exceed 1")));
    }
    order_and_extend(obs, config.with_test(StabilityTest::ConditionNumber { kappa }), oracle)
}

fn run_cell(
    truth: &DenseMatrix,
    obs: &ObservedMatrix,
    config: &ExperimentConfig,
    algorithm: Algorithm,
    budget: usize,
    seed: u64,
) -> Result<ExperimentRow> {
    let completion = CompletionConfig::new(config.rank)
        .with_theta(config.theta)
        .with_seed(seed);
    let start = config.timing.then(Instant::now);
    let report = match algorithm {
        Algorithm::OrderExtend => {
            let mut oracle = GroundTruthOracle::new(truth.clone(), budget);
            order_and_extend(obs, completion, &mut oracle)?
        }
        Algorithm::ConditionNumber { kappa } => {
            let mut oracle = GroundTruthOracle::new(truth.clone(), budget);
            condition_number_variant(obs, completion, kappa, &mut oracle)?
        }
        Algorithm::RandomBaseline => {
            let extended = random_extend_baseline(obs, truth, budget, seed ^ EXTENSION_STREAM)?;
            let mut report = sequential_default(&extended, completion)?;
            report.queries_used = budget;
            report
        }
        Algorithm::Sequential => sequential_default(obs, completion)?,
    };
    let wall_time_s = start.map(|s| s.elapsed().as_secs_f64());
    Ok(ExperimentRow {
        algorithm: algorithm.to_string(),
        budget,
        queries_used: report.queries_used,
        rel_error: rel_error(truth, &report.estimate)?,
        recovered_fraction: report.recovered_fraction(),
        wall_time_s,
        seed,
    })
}

/// Runs every (seed, budget, algorithm) cell on up to `threads` threads.
///
/// Each seed draws its own initial mask of `round(mask_fraction * critical)`
/// entries. Cells are independent, so the output does not depend on
/// `threads`.
pub fn run_experiment(
    truth: &DenseMatrix,
    config: &ExperimentConfig,
    threads: usize,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let (n1, n2) = truth.shape();
    let critical_size = critical_mask_size(n1, n2, config.rank)?;
    let initial_mask_size = (config.mask_fraction * critical_size as f64).round() as usize;
    let observed = config
        .seeds
        .iter()
        .map(|&seed| ObservedMatrix::from_truth(truth, &sample_random_mask(n1, n2, initial_mask_size, seed)?))
        .collect::<Result<Vec<_>>>()?;

    let (nb, na) = (config.budgets.len(), config.algorithms.len());
    let n_cells = config.seeds.len() * nb * na;
    let cell = |k: usize| {
        let (s, rest) = (k / (nb * na), k % (nb * na));
        let (b, a) = (rest / na, rest % na);
        run_cell(truth, &observed[s], config, config.algorithms[a], config.budgets[b], config.seeds[s])
    };

    let threads = threads.clamp(1, n_cells);
    let results: Vec<Result<ExperimentRow>> = if threads == 1 {
        (0..n_cells).map(cell).collect()
    } else {
        let next = AtomicUsize::new(0);
        let done = Mutex::new(Vec::with_capacity(n_cells));
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, AtomicOrdering::Relaxed);
                    if k >= n_cells {
                        break;
                    }
                    let row = cell(k);
                    done.lock().expect("worker panicked").push((k, row));
                });
            }
        });
        let mut done = done.into_inner().expect("worker panicked");
        done.sort_by_key(|(k, _)| *k);
        done.into_iter().map(|(_, row)| row).collect()
    };
    Ok(ExperimentOutput {
        critical_size,
        initial_mask_size,
        rows: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Writes rows under [`RESULTS_HEADER`]. Missing wall times are left blank.
pub fn write_results(mut writer: impl Write, rows: &[ExperimentRow]) -> Result<()> {
    writeln!(writer, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            writer,
            "{},{},{},{},{},{},{}",
            r.algorithm,
            r.budget,
            r.queries_used,
            format_value(r.rel_error),
            format_value(r.recovered_fraction),
            r.wall_time_s.map(format_value).unwrap_or_default(),
            r.seed
        )?;
    }
    Ok(())
}

/// Thread count from `AMC_THREADS`; 1 when unset or unparsable.
pub fn threads_from_env() -> usize {
    std::env::var("AMC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
