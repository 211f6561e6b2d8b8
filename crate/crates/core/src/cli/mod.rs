//! Experiment runner behind the `graphout` binary.
//!
//! * `run <config>` trains one configuration repeatedly and writes
//!   `results.csv` plus per-seed event logs under `logs/`.
//! * `grid <config>` sweeps datasets × convolutions × readouts, appending
//!   each finished cell to `results.csv`, then writes `table.csv` and
//!   `table.txt`.
//! * `report <csv>` rebuilds the table from a results CSV and writes
//!   `scatter.csv` (parameter count against mean metric).

pub mod config;
pub mod results;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::toy::toy_dataset;
use crate::graph::tud::load_tudataset;
use crate::graph::zinc::{load_zinc_dataset, SPLIT_FILES};
use crate::graph::Dataset;
use crate::train::{run_repeated, RepeatOptions};

pub use config::{ExperimentConfig, GridConfig, RunSettings};
pub use results::{build_table, read_csv, scatter, ResultRow, ResultsTable, ScatterRow};

pub const DATASET_DIR_VAR: &str = "DATASET_DIR";
pub const RESULTS_FILE: &str = "results.csv";

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, run: &mut RunSettings) -> Result<()> {
        if let Some(s) = self.seed {
            run.seed = s;
        }
        if let Some(r) = self.repeats {
            if r == 0 {
                return Err(Error::validation("--repeats", "must be at least 1"));
            }
            run.repeats = r;
        }
        if let Some(d) = &self.out_dir {
            run.out_dir = d.clone();
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(Error::validation("--threads", "must be at least 1"));
            }
            run.threads = t;
        }
        Ok(())
    }
}

/// Where `name` lives: the explicit path, else `$DATASET_DIR/<name>`.
pub fn dataset_location(name: &str, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(DATASET_DIR_VAR) {
        Some(root) => Ok(PathBuf::from(root).join(name)),
        None => Err(Error::Config(format!(
            "no path configured for dataset `{name}` and {DATASET_DIR_VAR} is not set"
        ))),
    }
}

/// Loads `toy`, a ZINC directory (holding `train.txt`) or a TUD directory.
pub fn load_dataset(name: &str, explicit: Option<&Path>) -> Result<Dataset> {
    if name == "toy" && explicit.is_none() {
        return toy_dataset();
    }
    let dir = dataset_location(name, explicit)?;
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("dataset `{name}` not found")),
        ));
    }
    let mut ds = if dir.join(SPLIT_FILES[0]).is_file() {
        load_zinc_dataset(&dir)?
    } else {
        load_tudataset(&dir)?
    };
    ds.name = name.to_string();
    Ok(ds)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cell_prefix(cfg: &ExperimentConfig) -> String {
    format!("{}-{}-{}-", cfg.dataset, cfg.arch.conv, cfg.arch.readout)
}

/// Trains one configuration on `ds`, replacing any old logs for it.
pub fn run_cell(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<ResultRow>> {
    let log_dir = cfg.run.out_dir.join("logs");
    create_dir(&log_dir)?;
    let prefix = cell_prefix(cfg);
    for i in 0..cfg.run.repeats as u64 {
        let old = log_dir.join(format!("{prefix}seed{}.log", cfg.run.seed + i));
        if old.exists() {
            fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
    }
    let rep = run_repeated(
        &cfg.arch,
        &cfg.train,
        ds,
        cfg.run.seed,
        cfg.run.repeats,
        &RepeatOptions {
            threads: Some(cfg.run.threads),
            log_dir: Some(&log_dir),
            log_prefix: &prefix,
        },
    )?;
    Ok(results::rows_for(
        &cfg.dataset,
        cfg.arch.conv,
        cfg.arch.readout,
        ds.task().metric_name(),
        &rep,
    ))
}

/// Runs `cfg` and writes a fresh `results.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let ds = load_dataset(&cfg.dataset, cfg.dataset_path.as_deref())?;
    create_dir(&cfg.run.out_dir)?;
    let rows = run_cell(cfg, &ds)?;
    results::write_csv(&cfg.run.out_dir.join(RESULTS_FILE), &rows)?;
    Ok(rows)
}

#[derive(Debug)]
pub struct GridOutcome {
    pub rows: Vec<ResultRow>,
    pub table: ResultsTable,
    /// `(cell, diagnostic)` for cells that could not run at all.
    pub failures: Vec<(String, String)>,
}

/// Placeholder rows recording a cell that could not run.
fn failed_cell(cfg: &ExperimentConfig, metric_name: &str) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = (0..cfg.run.repeats as u64)
        .map(|i| ResultRow {
            dataset: cfg.dataset.clone(),
            conv: cfg.arch.conv.name().into(),
            readout: cfg.arch.readout.name().into(),
            class: cfg.arch.readout.class().label().into(),
            seed: (cfg.run.seed + i).to_string(),
            metric_name: metric_name.into(),
            metric_value: f64::NAN,
            param_count: 0,
            epochs: 0,
            wall_time_s: 0.0,
        })
        .collect();
    let mut summary = rows[0].clone();
    summary.seed = results::PARTIAL_SUMMARY_SEED.into();
    rows.push(summary);
    rows
}

/// Runs every cell, appending each to `results.csv` as it finishes, so a
/// failing cell never discards earlier ones.
pub fn cmd_grid(grid: &GridConfig) -> Result<GridOutcome> {
    let out = &grid.run.out_dir;
    create_dir(out)?;
    let csv_path = out.join(RESULTS_FILE);
    if csv_path.exists() {
        fs::remove_file(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut loaded: Vec<(String, Result<Dataset>)> = Vec::new();
    for cfg in grid.cells() {
        if !loaded.iter().any(|(n, _)| n == &cfg.dataset) {
            loaded.push((cfg.dataset.clone(), load_dataset(&cfg.dataset, cfg.dataset_path.as_deref())));
        }
        let ds = &loaded.iter().find(|(n, _)| n == &cfg.dataset).unwrap().1;
        let outcome = match ds {
            Ok(ds) => run_cell(&cfg, ds).map_err(|e| (e.to_string(), ds.task().metric_name())),
            Err(e) => Err((e.to_string(), "unknown")),
        };
        let cell_rows = match outcome {
            Ok(r) => r,
            Err((msg, metric)) => {
                failures.push((cell_prefix(&cfg).trim_end_matches('-').to_string(), msg));
                failed_cell(&cfg, metric)
            }
        };
        results::append_csv(&csv_path, &cell_rows)?;
        rows.extend(cell_rows);
    }
    let table = build_table(&rows);
    table.write_csv(&out.join("table.csv"))?;
    fs::write(out.join("table.txt"), table.render()).map_err(|e| Error::io(out.join("table.txt"), e))?;
    Ok(GridOutcome {
        rows,
        table,
        failures,
    })
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub table: ResultsTable,
    pub scatter: Vec<ScatterRow>,
}

/// Rebuilds the table and the parameter/efficacy scatter from a results
/// CSV, writing `table.csv`, `table.txt` and `scatter.csv` into `out_dir`
/// (default: the CSV's directory).
pub fn cmd_report(csv: &Path, out_dir: Option<&Path>) -> Result<ReportOutcome> {
    let rows = read_csv(csv)?;
    let out = match out_dir {
        Some(d) => d.to_path_buf(),
        None => csv.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let out = if out.as_os_str().is_empty() { PathBuf::from(".") } else { out };
    create_dir(&out)?;
    let table = build_table(&rows);
    table.write_csv(&out.join("table.csv"))?;
    fs::write(out.join("table.txt"), table.render()).map_err(|e| Error::io(out.join("table.txt"), e))?;
    let scatter = scatter(&rows);
    results::write_scatter(&out.join("scatter.csv"), &scatter)?;
    Ok(ReportOutcome { table, scatter })
}
