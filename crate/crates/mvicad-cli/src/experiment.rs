//! Benchmark drivers. `bench_amari` sweeps delay levels and seeds, fitting
//! each dataset twice (delay estimation on, and off as the plain multiview
//! baseline); `bench_delays` runs one large fit and pairs estimated against
//! true delays. Cells run in parallel but results are assembled in (level,
//! seed) order, so the output is independent of thread count.

use std::path::PathBuf;
use std::time::Instant;

use mvicad::{
    amari_distance, delay_recovery_report, fit, generate_dataset, match_permutation,
    reconstruct_sources, DelayReport, FitConfig, PermutationTest, SimConfig,
};
use rayon::prelude::*;

use crate::HarnessError;

pub const ALGO_MVICAD: &str = "mvicad";
pub const ALGO_MVICA: &str = "mvica";

/// One benchmark sweep: every delay level crossed with every seed.
#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    /// True maximum delays to generate at; the delayed fit mirrors each level.
    pub levels: Vec<i64>,
    /// Seeds run per level: base_seed, base_seed+1, ...
    pub n_seeds: u64,
    pub base_seed: u64,
    /// Template for the generator; tau_max_true and seed are set per cell.
    pub sim: SimConfig,
    /// Template for the solver; tau_max and delay_updates are set per fit.
    pub fit: FitConfig,
    /// Where the run's files land. Unused by the pure runners.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.levels.is_empty() {
            return Err(HarnessError::InvalidConfig("no delay levels given".into()));
        }
        for &level in &self.levels {
            if level < 0 || 2 * level >= self.sim.n as i64 {
                return Err(HarnessError::InvalidConfig(format!(
                    "delay level {} outside [0, n/2) for n={}",
                    level, self.sim.n
                )));
            }
        }
        if self.n_seeds == 0 {
            return Err(HarnessError::InvalidConfig("need at least one seed".into()));
        }
        Ok(())
    }
}

/// One fit of one generated dataset. `error` carries the failure message
/// when the cell did not produce a score; the numeric columns are then blank
/// on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AmariRow {
    pub delay_level: i64,
    pub seed: u64,
    pub algorithm: String,
    /// Mean over views of the Amari distance between fitted unmixing and
    /// true mixing.
    pub amari_mean: f64,
    pub sweeps: usize,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

/// Per-level mean over the seeds that succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct AmariSummary {
    pub delay_level: i64,
    pub algorithm: String,
    pub amari_mean: f64,
    pub seeds: usize,
}

/// Builds a pool sized by `threads`; `None` uses the rayon default.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k < 1 {
            return Err(HarnessError::InvalidConfig(
                "thread count must be at least 1".into(),
            ));
        }
        builder = builder.num_threads(k);
    }
    builder
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {}", e)))
}

/// Reads MVICAD_THREADS. Absent means `None` (library default); set, it must
/// parse to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>, HarnessError> {
    match std::env::var("MVICAD_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(HarnessError::InvalidConfig(format!("MVICAD_THREADS: {}", e))),
        Ok(v) => match v.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(HarnessError::InvalidConfig(format!(
                "MVICAD_THREADS must be a positive integer, got {:?}",
                v
            ))),
        },
    }
}

fn fit_once(
    views: &mvicad::ViewSet,
    truth: &mvicad::GroundTruth,
    cfg: &FitConfig,
    level: i64,
    seed: u64,
    algorithm: &str,
) -> AmariRow {
    let start = Instant::now();
    let outcome = fit(views, cfg).and_then(|res| {
        let m = views.n_views();
        let mut total = 0.0;
        for i in 0..m {
            total += amari_distance(
                res.params.unmixing[i].array(),
                truth.mixing[i].array(),
            )?;
        }
        Ok((total / m as f64, res.sweeps))
    });
    let wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((amari_mean, sweeps)) => AmariRow {
            delay_level: level,
            seed,
            algorithm: algorithm.into(),
            amari_mean,
            sweeps,
            wall_time_s,
            error: None,
        },
        Err(e) => AmariRow {
            delay_level: level,
            seed,
            algorithm: algorithm.into(),
            amari_mean: f64::NAN,
            sweeps: 0,
            wall_time_s: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

fn amari_cell(grid: &ExperimentGrid, level: i64, seed: u64) -> Vec<AmariRow> {
    let mut sim = grid.sim.clone();
    sim.tau_max_true = level;
    sim.seed = seed;
    let (views, truth) = match generate_dataset(&sim) {
        Ok(pair) => pair,
        Err(e) => {
            let msg = e.to_string();
            return [ALGO_MVICAD, ALGO_MVICA]
                .iter()
                .map(|algo| AmariRow {
                    delay_level: level,
                    seed,
                    algorithm: (*algo).into(),
                    amari_mean: f64::NAN,
                    sweeps: 0,
                    wall_time_s: f64::NAN,
                    error: Some(msg.clone()),
                })
                .collect();
        }
    };

    let mut delayed = grid.fit.clone();
    delayed.tau_max = level;
    delayed.delay_updates = true;
    let mut plain = grid.fit.clone();
    plain.tau_max = 0;
    plain.delay_updates = false;

    vec![
        fit_once(&views, &truth, &delayed, level, seed, ALGO_MVICAD),
        fit_once(&views, &truth, &plain, level, seed, ALGO_MVICA),
    ]
}

/// Runs the grid and returns per-cell rows plus per-level means. Failures
/// become rows with the error column set; the sweep keeps going.
pub fn bench_amari(
    grid: &ExperimentGrid,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<AmariRow>, Vec<AmariSummary>), HarnessError> {
    grid.validate()?;
    let cells: Vec<(i64, u64)> = grid
        .levels
        .iter()
        .flat_map(|&level| (0..grid.n_seeds).map(move |s| (level, grid.base_seed + s)))
        .collect();
    let rows: Vec<AmariRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(level, seed)| amari_cell(grid, level, seed))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });

    let mut summary = Vec::new();
    for &level in &grid.levels {
        for algo in [ALGO_MVICAD, ALGO_MVICA] {
            let scores: Vec<f64> = rows
                .iter()
                .filter(|r| r.delay_level == level && r.algorithm == algo && r.error.is_none())
                .map(|r| r.amari_mean)
                .collect();
            let mean = if scores.is_empty() {
                f64::NAN
            } else {
                scores.iter().sum::<f64>() / scores.len() as f64
            };
            summary.push(AmariSummary {
                delay_level: level,
                algorithm: algo.into(),
                amari_mean: mean,
                seeds: scores.len(),
            });
        }
    }
    Ok((rows, summary))
}

/// One (view, source) pair from a delay-recovery run, in the centered gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayScatterRow {
    pub view: usize,
    pub source: usize,
    pub true_delay_centered: f64,
    pub est_delay_centered: f64,
}

#[derive(Debug)]
pub struct DelayBench {
    pub rows: Vec<DelayScatterRow>,
    pub report: DelayReport,
    pub sweeps: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

/// Generates one dataset, fits it, matches sources to the truth, and pairs
/// every estimated delay with its true counterpart.
pub fn bench_delays(
    sim: &SimConfig,
    fit_cfg: &FitConfig,
    test: &PermutationTest,
) -> Result<DelayBench, HarnessError> {
    let (views, truth) = generate_dataset(sim)?;
    let start = Instant::now();
    let res = fit(&views, fit_cfg)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let rebuilt = reconstruct_sources(&res.params, &views)?;

    // Residual misalignment is at most the true spread plus the fitted one.
    let window = (fit_cfg.tau_max + sim.tau_max_true).min((sim.n as i64 - 1) / 2);
    let matching = match_permutation(rebuilt.array(), truth.sources.array(), window)?;
    let report = delay_recovery_report(&res.params.delays, &truth.delays, &matching.perm, test)?;

    let (m, p) = (sim.m, sim.p);
    let mut rows = Vec::with_capacity(m * p);
    for k in 0..p {
        for i in 0..m {
            let (true_c, est_c) = report.pairs[k * m + i];
            rows.push(DelayScatterRow {
                view: i,
                source: k,
                true_delay_centered: true_c,
                est_delay_centered: est_c,
            });
        }
    }
    Ok(DelayBench {
        rows,
        report,
        sweeps: res.sweeps,
        converged: res.converged,
        wall_time_s,
    })
}
