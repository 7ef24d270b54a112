//! Browser bindings for the demo page in `www/`.
//!
//! Three operations: complete one random instance and report which entries
//! were observed, queried, recovered or left empty; sweep budgets against
//! random querying; and compare the local condition with the condition
//! number on a 2x2 diagonal system.

use amc_core::completion::{order_and_extend, sequential_default, CompletionConfig};
use amc_core::experiment::random_extend_baseline;
use amc_core::matrix::{critical_mask_size, generate_low_rank, rel_error, sample_random_mask, ObservedMatrix};
use amc_core::oracle::{GroundTruthOracle, QueryOracle};
use amc_core::stability::{condition_number, local_condition, LinearSystem};
use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

/// Cell codes in [`CompletionRun::cells`].
pub const OBSERVED: u8 = 0;
pub const QUERIED: u8 = 1;
pub const RECOVERED: u8 = 2;
pub const UNRECOVERED: u8 = 3;

fn js_err(e: amc_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn initial_size(rows: usize, cols: usize, rank: usize, mask_frac: f64) -> amc_core::Result<usize> {
    Ok((mask_frac * critical_mask_size(rows, cols, rank)? as f64).round() as usize)
}

#[wasm_bindgen]
pub struct CompletionRun {
    rows: usize,
    cols: usize,
    initial: usize,
    queries_used: usize,
    rel_error: f64,
    recovered_fraction: f64,
    cells: Vec<u8>,
}

#[wasm_bindgen]
impl CompletionRun {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[wasm_bindgen(getter)]
    pub fn initial(&self) -> usize {
        self.initial
    }

    #[wasm_bindgen(getter, js_name = queriesUsed)]
    pub fn queries_used(&self) -> usize {
        self.queries_used
    }

    #[wasm_bindgen(getter, js_name = relError)]
    pub fn rel_error(&self) -> f64 {
        self.rel_error
    }

    #[wasm_bindgen(getter, js_name = recoveredFraction)]
    pub fn recovered_fraction(&self) -> f64 {
        self.recovered_fraction
    }

    /// Row-major cell codes: 0 observed, 1 queried, 2 recovered, 3 empty.
    pub fn cells(&self) -> Vec<u8> {
        self.cells.clone()
    }
}

/// Order&Extend on a random rank-`rank` matrix with `mask_frac` of the
/// critical number of entries observed.
#[wasm_bindgen(js_name = completeRandom)]
pub fn complete_random(
    rows: usize,
    cols: usize,
    rank: usize,
    noise: f64,
    mask_frac: f64,
    budget: usize,
    seed: u64,
) -> Result<CompletionRun, JsError> {
    run_completion(rows, cols, rank, noise, mask_frac, budget, seed).map_err(js_err)
}

fn run_completion(
    rows: usize,
    cols: usize,
    rank: usize,
    noise: f64,
    mask_frac: f64,
    budget: usize,
    seed: u64,
) -> amc_core::Result<CompletionRun> {
    let truth = generate_low_rank(rows, cols, rank, noise, seed)?;
    let initial = initial_size(rows, cols, rank, mask_frac)?;
    let obs = ObservedMatrix::from_truth(&truth, &sample_random_mask(rows, cols, initial, seed)?)?;
    let mut oracle = GroundTruthOracle::new(truth.clone(), budget);
    let report = order_and_extend(&obs, CompletionConfig::new(rank).with_seed(seed), &mut oracle)?;
    let mut cells: Vec<u8> = (0..rows * cols)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            if obs.get(i, j).is_some() {
                OBSERVED
            } else if report.is_recovered(i, j) {
                RECOVERED
            } else {
                UNRECOVERED
            }
        })
        .collect();
    for q in oracle.log() {
        cells[q.row * cols + q.col] = QUERIED;
    }
    Ok(CompletionRun {
        rows,
        cols,
        initial,
        queries_used: report.queries_used,
        rel_error: rel_error(&truth, &report.estimate)?,
        recovered_fraction: report.recovered_fraction(),
        cells,
    })
}

/// Relative errors of Order&Extend and of random querying at each budget,
/// interleaved: `[ours(b0), random(b0), ours(b1), random(b1), ...]`.
#[wasm_bindgen(js_name = budgetSweep)]
pub fn budget_sweep(
    rows: usize,
    cols: usize,
    rank: usize,
    mask_frac: f64,
    budgets: Vec<u32>,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    sweep(rows, cols, rank, mask_frac, &budgets, seed).map_err(js_err)
}

fn sweep(rows: usize, cols: usize, rank: usize, mask_frac: f64, budgets: &[u32], seed: u64) -> amc_core::Result<Vec<f64>> {
    let truth = generate_low_rank(rows, cols, rank, 0.0, seed)?;
    let initial = initial_size(rows, cols, rank, mask_frac)?;
    let obs = ObservedMatrix::from_truth(&truth, &sample_random_mask(rows, cols, initial, seed)?)?;
    let config = CompletionConfig::new(rank).with_seed(seed);
    let mut out = Vec::with_capacity(2 * budgets.len());
    for &b in budgets {
        let b = b as usize;
        let mut oracle = GroundTruthOracle::new(truth.clone(), b);
        let ours = order_and_extend(&obs, config, &mut oracle)?;
        let free = rows * cols - obs.len();
        let extended = random_extend_baseline(&obs, &truth, b.min(free), seed.wrapping_add(1))?;
        let theirs = sequential_default(&extended, config)?;
        out.push(rel_error(&truth, &ours.estimate)?);
        out.push(rel_error(&truth, &theirs.estimate)?);
    }
    Ok(out)
}

/// `[local condition, condition number]` of `diag(1, d) y = (t1, t2)`.
#[wasm_bindgen(js_name = conditionPair)]
pub fn condition_pair(d: f64, t1: f64, t2: f64) -> Result<Vec<f64>, JsError> {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, d]));
    let sys = LinearSystem::new(a, DVector::from_vec(vec![t1, t2])).map_err(js_err)?;
    Ok(vec![local_condition(&sys), condition_number(sys.a())])
}
