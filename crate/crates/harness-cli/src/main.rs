use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amc_core::completion::{order_and_extend, CompletionConfig};
use amc_core::experiment::{run_experiment, threads_from_env, write_results, Algorithm, ExperimentConfig};
use amc_core::io::{load_dense, load_observed, save_dense, save_observed, save_query_log};
use amc_core::matrix::{critical_mask_size, generate_low_rank, rel_error, sample_random_mask, ObservedMatrix};
use amc_core::oracle::{GroundTruthOracle, QueryOracle};
use amc_core::stability::StabilityTest;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amc", version, about = "Active low-rank matrix completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random rank-R matrix, optionally with Gaussian noise, as CSV.
    Generate {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        rank: usize,
        /// Noise level relative to the RMS entry of the noiseless matrix.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reveal a random subset of a CSV matrix as an observation file.
    Sample {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        rank: usize,
        /// Number of entries as a fraction of the critical mask size.
        #[arg(long, default_value_t = 0.4)]
        mask_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete an observation file, querying hidden entries from the truth.
    Complete {
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        rank: usize,
        /// Stability limit in decimal digits lost.
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        /// Use the condition-number test with this threshold instead.
        #[arg(long, conflicts_with = "theta")]
        kappa: Option<f64>,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        query_log: Option<PathBuf>,
    },
    /// Sweep budgets and seeds over algorithms; parallel cells via AMC_THREADS.
    Experiment {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.4)]
        mask_frac: f64,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
        /// Comma-separated seeds; `a..b` expands to a, a+1, ..., b-1.
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_seeds)]
        seeds: Vec<Vec<u64>>,
        /// order_extend, random_baseline, sequential or kappa_<threshold>.
        #[arg(long, value_delimiter = ',', default_value = "order_extend,random_baseline")]
        algos: Vec<Algorithm>,
        /// Record wall time per cell; leaves output non-reproducible.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimate with the truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let parse = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if a >= b {
                return Err(format!("empty seed range {s:?}"));
            }
            Ok((a..b).collect())
        }
        None => Ok(vec![parse(s)?]),
    }
}

fn create(path: &Path) -> amc_core::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(command: Command) -> amc_core::Result<()> {
    match command {
        Command::Generate { rows, cols, rank, noise, seed, out } => {
            save_dense(out, &generate_low_rank(rows, cols, rank, noise, seed)?)?;
        }
        Command::Sample { truth, rank, mask_frac, seed, out } => {
            let truth = load_dense(truth)?;
            let (n1, n2) = truth.shape();
            let m = (mask_frac * critical_mask_size(n1, n2, rank)? as f64).round() as usize;
            let obs = ObservedMatrix::from_truth(&truth, &sample_random_mask(n1, n2, m, seed)?)?;
            save_observed(out, &obs)?;
            println!("entries={m}");
        }
        Command::Complete { obs, truth, rank, theta, kappa, budget, seed, out, query_log } => {
            let obs = load_observed(obs)?;
            let truth = load_dense(truth)?;
            let test = match kappa {
                Some(kappa) => StabilityTest::ConditionNumber { kappa },
                None => StabilityTest::LocalCondition { theta },
            };
            let config = CompletionConfig::new(rank).with_test(test).with_seed(seed);
            let mut oracle = GroundTruthOracle::new(truth.clone(), budget);
            let report = order_and_extend(&obs, config, &mut oracle)?;
            save_dense(out, &report.estimate)?;
            if let Some(path) = query_log {
                save_query_log(path, oracle.log())?;
            }
            println!("queries_used={}", report.queries_used);
            println!("recovered_fraction={}", report.recovered_fraction());
            println!("rel_error={:e}", rel_error(&truth, &report.estimate)?);
        }
        Command::Experiment { truth, rank, mask_frac, theta, budgets, seeds, algos, timing, out } => {
            let truth = load_dense(truth)?;
            let config = ExperimentConfig {
                rank,
                theta,
                mask_fraction: mask_frac,
                budgets,
                seeds: seeds.into_iter().flatten().collect(),
                algorithms: algos,
                timing,
            };
            let result = run_experiment(&truth, &config, threads_from_env())?;
            let mut w = create(&out)?;
            write_results(&mut w, &result.rows)?;
            w.flush()?;
            println!("critical_size={}", result.critical_size);
            println!("initial_entries={}", result.initial_mask_size);
            println!("reference_budget={}", result.reference_budget());
        }
        Command::Eval { truth, est } => {
            let truth = load_dense(truth)?;
            let est = load_dense(est)?;
            let err = rel_error(&truth, &est)?;
            let entries = est.to_row_major();
            let recovered = entries.iter().filter(|v| **v != 0.0).count() as f64 / entries.len() as f64;
            println!("rel_error={err:e}");
            println!("recovered_fraction={recovered}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
