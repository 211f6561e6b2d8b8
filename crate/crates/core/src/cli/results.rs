//! The results CSV and everything derived from it.
//!
//! `results.csv` has one row per run and one summary row per experiment:
//!
//! ```text
//! dataset,conv,readout,class,seed,metric_name,metric_value,param_count,epochs,wall_time_s
//! ```
//!
//! * `class` is `NON-PAR`, `PAR` or `ENS`.
//! * `metric_value` is the test metric as a fraction (F1, macro-F1 or R²);
//!   failed runs store `NaN`.
//! * Summary rows carry `seed = summary`, or `summary-partial` when some run
//!   failed. Their `metric_value` is the mean over successful runs, `epochs`
//!   and `wall_time_s` are totals. Standard deviations are recomputed from
//!   the run rows.
//!
//! Only `wall_time_s` varies between reruns with the same seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ConvKind;
use crate::readout::{ReadoutClass, ReadoutKind};
use crate::train::{mean_std, Repeated};

pub const CSV_COLUMNS: [&str; 10] = [
    "dataset",
    "conv",
    "readout",
    "class",
    "seed",
    "metric_name",
    "metric_value",
    "param_count",
    "epochs",
    "wall_time_s",
];

pub const SUMMARY_SEED: &str = "summary";
pub const PARTIAL_SUMMARY_SEED: &str = "summary-partial";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub conv: String,
    pub readout: String,
    pub class: String,
    pub seed: String,
    pub metric_name: String,
    pub metric_value: f64,
    pub param_count: usize,
    pub epochs: usize,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn is_summary(&self) -> bool {
        self.seed == SUMMARY_SEED || self.seed == PARTIAL_SUMMARY_SEED
    }

    /// The row with its timing column blanked, for rerun comparisons.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Run rows followed by the summary row.
pub fn rows_for(dataset: &str, conv: ConvKind, readout: ReadoutKind, metric_name: &str, rep: &Repeated) -> Vec<ResultRow> {
    let base = |seed: String, value: f64, params: usize, epochs: usize, wall: f64| ResultRow {
        dataset: dataset.to_string(),
        conv: conv.name().to_string(),
        readout: readout.name().to_string(),
        class: readout.class().label().to_string(),
        seed,
        metric_name: metric_name.to_string(),
        metric_value: value,
        param_count: params,
        epochs,
        wall_time_s: wall,
    };
    let mut rows: Vec<ResultRow> = rep
        .runs
        .iter()
        .map(|r| {
            let value = if r.is_ok() { r.metric_value } else { f64::NAN };
            base(r.seed.to_string(), value, r.param_count, r.epochs, r.wall_time_s)
        })
        .collect();
    let seed = if rep.summary.is_partial() {
        PARTIAL_SUMMARY_SEED
    } else {
        SUMMARY_SEED
    };
    let params = rep.runs.iter().map(|r| r.param_count).max().unwrap_or(0);
    rows.push(base(
        seed.to_string(),
        rep.summary.mean / 100.0,
        params,
        rep.runs.iter().map(|r| r.epochs).sum(),
        rep.runs.iter().map(|r| r.wall_time_s).sum(),
    ));
    rows
}

/// Appends `rows` to `path`, writing the header when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    append_csv(path, rows)
}

pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::format(origin, Some(1), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_COLUMNS {
        return Err(Error::format(
            origin,
            Some(1),
            format!("expected header `{}`, got `{}`", CSV_COLUMNS.join(","), header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::format(origin, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize);
        let bad = |msg: String| Error::format(origin, line, msg);
        let row: ResultRow = rec.deserialize(None).map_err(|e| bad(e.to_string()))?;
        let kind: ReadoutKind = row
            .readout
            .parse()
            .map_err(|_| bad(format!("unknown readout `{}`", row.readout)))?;
        row.conv
            .parse::<ConvKind>()
            .map_err(|_| bad(format!("unknown conv `{}`", row.conv)))?;
        if row.class != kind.class().label() {
            return Err(bad(format!("class `{}` does not match readout `{}`", row.class, row.readout)));
        }
        if !row.is_summary() && row.seed.parse::<u64>().is_err() {
            return Err(bad(format!("seed `{}` is neither a number nor a summary marker", row.seed)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

/// One (dataset, conv, readout) cell of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableCell {
    pub dataset: String,
    pub conv: String,
    pub readout: String,
    pub class: String,
    pub metric_name: String,
    /// Percent, over successful runs.
    pub mean: f64,
    pub std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub param_count: usize,
    /// Highest mean among all readouts for this dataset and convolution.
    pub best_in_column: bool,
    /// Highest mean within the readout's class for this dataset and convolution.
    pub best_in_class: bool,
}

impl TableCell {
    /// Mean as displayed, which is what best-marking compares.
    fn shown(&self) -> Option<f64> {
        (self.n_ok > 0).then(|| (self.mean * 100.0).round() / 100.0)
    }

    pub fn text(&self) -> String {
        if self.n_ok == 0 {
            return "failed".into();
        }
        let mut s = format!("{:.2} ± {:.2}", self.mean, self.std);
        if self.best_in_class {
            s = format!("__{s}__");
        }
        if self.best_in_column {
            s = format!("**{s}**");
        }
        if self.n_failed > 0 {
            let _ = write!(s, " ({} failed)", self.n_failed);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultsTable {
    pub cells: Vec<TableCell>,
}

/// Aggregates run rows into cells; summary rows are ignored.
pub fn build_table(rows: &[ResultRow]) -> ResultsTable {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_summary()) {
        let key = (r.dataset.clone(), r.conv.clone(), r.readout.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut cells: Vec<TableCell> = order
        .into_iter()
        .map(|key| {
            let runs = &groups[&key];
            let ok: Vec<f64> = runs
                .iter()
                .filter(|r| r.metric_value.is_finite())
                .map(|r| 100.0 * r.metric_value)
                .collect();
            let (mean, std) = mean_std(&ok);
            TableCell {
                class: runs[0].class.clone(),
                metric_name: runs[0].metric_name.clone(),
                mean,
                std,
                n_ok: ok.len(),
                n_failed: runs.len() - ok.len(),
                param_count: runs.iter().map(|r| r.param_count).max().unwrap_or(0),
                best_in_column: false,
                best_in_class: false,
                dataset: key.0,
                conv: key.1,
                readout: key.2,
            }
        })
        .collect();
    let best = |cells: &[TableCell], same: &dyn Fn(&TableCell, &TableCell) -> bool, i: usize| {
        let Some(v) = cells[i].shown() else { return false };
        cells
            .iter()
            .filter(|c| same(c, &cells[i]))
            .filter_map(TableCell::shown)
            .all(|w| w <= v)
    };
    let column = |a: &TableCell, b: &TableCell| a.dataset == b.dataset && a.conv == b.conv;
    let class = |a: &TableCell, b: &TableCell| column(a, b) && a.class == b.class;
    let marks: Vec<(bool, bool)> = (0..cells.len())
        .map(|i| (best(&cells, &column, i), best(&cells, &class, i)))
        .collect();
    for (c, (col, cls)) in cells.iter_mut().zip(marks) {
        c.best_in_column = col;
        c.best_in_class = cls;
    }
    ResultsTable { cells }
}

impl ResultsTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Readouts down, `dataset/conv` columns across, grouped by class.
    /// `**x**` marks the best mean in a column, `__x__` the best in its class.
    pub fn render(&self) -> String {
        let mut columns: Vec<(String, String)> = Vec::new();
        let mut readouts: Vec<(String, String)> = Vec::new();
        for c in &self.cells {
            let col = (c.dataset.clone(), c.conv.clone());
            if !columns.contains(&col) {
                columns.push(col);
            }
            let row = (c.class.clone(), c.readout.clone());
            if !readouts.contains(&row) {
                readouts.push(row);
            }
        }
        readouts.sort_by_key(|(class, _)| ReadoutClass::from_label(class));

        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["class".to_string(), "readout".to_string()];
        header.extend(columns.iter().map(|(d, c)| format!("{d}/{c}")));
        grid.push(header);
        for (class, readout) in &readouts {
            let mut line = vec![class.clone(), readout.clone()];
            for (d, c) in &columns {
                let cell = self
                    .cells
                    .iter()
                    .find(|x| &x.dataset == d && &x.conv == c && &x.readout == readout);
                line.push(cell.map_or_else(|| "-".to_string(), TableCell::text));
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in grid.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "{}", rule.join("  "));
            }
        }
        out
    }
}

/// Parameter count against mean efficacy, one row per table cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterRow {
    pub dataset: String,
    pub conv: String,
    pub readout: String,
    pub class: String,
    pub param_count: usize,
    pub metric_name: String,
    /// Percent.
    pub mean_metric: f64,
}

/// Sorted by parameter count ascending, ties by dataset, conv and readout.
pub fn scatter(rows: &[ResultRow]) -> Vec<ScatterRow> {
    let mut out: Vec<ScatterRow> = build_table(rows)
        .cells
        .into_iter()
        .map(|c| ScatterRow {
            dataset: c.dataset,
            conv: c.conv,
            readout: c.readout,
            class: c.class,
            param_count: c.param_count,
            metric_name: c.metric_name,
            mean_metric: c.mean,
        })
        .collect();
    out.sort_by(|a, b| {
        (a.param_count, &a.dataset, &a.conv, &a.readout).cmp(&(b.param_count, &b.dataset, &b.conv, &b.readout))
    });
    out
}

pub fn write_scatter(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
