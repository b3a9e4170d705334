//! Grid execution and CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use coopal_core::simulator::{prepare, ExperimentConfig, MetricsRow};
use coopal_core::{Dataset, IntegrationMethod, Mode, RunMetrics, SelectionPolicy};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 9] = [
    "step",
    "online_size",
    "mode",
    "method",
    "policy",
    "seed",
    "labeling_accuracy",
    "classification_accuracy",
    "cum_bytes",
];

pub const COMBINED_FILE: &str = "combined.csv";

type Cell = (Mode, IntegrationMethod, SelectionPolicy);

/// One CSV line. `seed` is a number, or `mean` for seed-averaged rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CsvRow {
    pub step: usize,
    pub online_size: usize,
    pub mode: Mode,
    pub method: IntegrationMethod,
    pub policy: SelectionPolicy,
    pub seed: String,
    pub labeling_accuracy: f64,
    pub classification_accuracy: f64,
    /// Integer for seed rows; the mean may be fractional.
    pub cum_bytes: String,
}

impl From<&MetricsRow> for CsvRow {
    fn from(r: &MetricsRow) -> Self {
        Self {
            step: r.step,
            online_size: r.online_size,
            mode: r.mode,
            method: r.method,
            policy: r.policy,
            seed: r.seed.to_string(),
            labeling_accuracy: r.labeling_accuracy,
            classification_accuracy: r.classification_accuracy,
            cum_bytes: r.cum_bytes.to_string(),
        }
    }
}

/// Results of one grid cell across all seeds, in seed order.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub runs: Vec<RunMetrics>,
}

impl CellResult {
    pub fn file_name(&self) -> String {
        let (mode, method, policy) = self.cell;
        format!("{mode}_{method}_{policy}.csv")
    }

    /// Seed-averaged rows. Runs that stopped early carry their last row forward.
    pub fn mean_rows(&self) -> Vec<CsvRow> {
        let (mode, method, policy) = self.cell;
        let steps = self
            .runs
            .iter()
            .map(|r| r.final_row().step)
            .max()
            .unwrap_or(0);
        let n = self.runs.len() as f64;
        (0..=steps)
            .map(|step| {
                let mut la = 0.0;
                let mut acc = 0.0;
                let mut bytes = 0.0;
                for run in &self.runs {
                    let row = carried(run, step);
                    la += row.labeling_accuracy;
                    acc += row.classification_accuracy;
                    bytes += row.cum_bytes as f64;
                }
                CsvRow {
                    step,
                    online_size: step,
                    mode,
                    method,
                    policy,
                    seed: "mean".into(),
                    labeling_accuracy: la / n,
                    classification_accuracy: acc / n,
                    cum_bytes: (bytes / n).to_string(),
                }
            })
            .collect()
    }

    pub fn seed_rows(&self) -> Vec<CsvRow> {
        self.runs
            .iter()
            .flat_map(|r| r.rows.iter().map(CsvRow::from))
            .collect()
    }
}

fn carried(run: &RunMetrics, step: usize) -> &MetricsRow {
    run.rows
        .iter()
        .take_while(|r| r.step <= step)
        .last()
        .expect("baseline row always present")
}

/// Runs every cell for every seed. Cells and seeds run on a worker pool
/// bounded by `COOPAL_THREADS`; results come back in grid order.
pub fn execute(config: &RunConfig) -> CliResult<Vec<CellResult>> {
    let grid = config.grid();
    if grid.is_empty() {
        return Err(CliError::Config(
            "grid must contain at least one cell".into(),
        ));
    }
    let experiment = config.experiment()?;
    let cells = grid.cells();
    let pool = thread_pool()?;
    pool.install(|| run_cells(config, &experiment, &cells))
}

fn run_cells(
    config: &RunConfig,
    experiment: &ExperimentConfig,
    cells: &[Cell],
) -> CliResult<Vec<CellResult>> {
    let datasets: Vec<Dataset> = if config.shared_dataset() {
        vec![config.load_dataset(config.seeds[0])?]
    } else {
        config
            .seeds
            .par_iter()
            .map(|&s| config.load_dataset(s))
            .collect::<CliResult<_>>()?
    };
    let dataset_for = |i: usize| {
        if datasets.len() == 1 {
            &datasets[0]
        } else {
            &datasets[i]
        }
    };

    let prepared = config
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| prepare(experiment, dataset_for(i), seed))
        .collect::<coopal_core::Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..prepared.len()).map(move |s| (c, s)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(c, s)| {
            let (mode, method, policy) = cells[c];
            prepared[s].run(mode, method, policy)
        })
        .collect::<coopal_core::Result<Vec<_>>>()?
        .into_iter();

    Ok(cells
        .iter()
        .map(|&cell| CellResult {
            cell,
            runs: runs.by_ref().take(prepared.len()).collect(),
        })
        .collect())
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var("COOPAL_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            CliError::Config(format!(
                "COOPAL_THREADS must be a positive integer, got {v:?}"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs the grid and writes one CSV per cell plus `combined.csv` into `out`.
/// Returns the written paths, per-cell files first.
pub fn run_grid(config: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let results = execute(config)?;
    write_results(&results, out)
}

pub fn write_results(results: &[CellResult], out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::with_capacity(results.len() + 1);
    let mut combined = Vec::new();
    for cell in results {
        let mut rows = cell.seed_rows();
        rows.extend(cell.mean_rows());
        let path = out.join(cell.file_name());
        write_csv(&path, &rows)?;
        written.push(path);
        combined.extend(rows);
    }
    let path = out.join(COMBINED_FILE);
    write_csv(&path, &combined)?;
    written.push(path);
    Ok(written)
}

fn write_csv(path: &Path, rows: &[CsvRow]) -> CliResult<()> {
    let to_cli = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Core(coopal_core::Error::Invariant(format!("csv: {other:?}"))),
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(to_cli)?;
    w.write_record(HEADER).map_err(to_cli)?;
    for row in rows {
        w.serialize(row).map_err(to_cli)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
