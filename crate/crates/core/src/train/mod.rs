//! The optimization loop and the repeated-evaluation protocol.
//!
//! A run trains with AdamW on shuffled minibatches, halves the learning rate
//! on validation plateaus, stops early once validation loss stalls and
//! scores the best-validation snapshot on the test split. Repetitions use
//! seeds `base, base + 1, ...`; datasets without a fixed split are resplit
//! for every seed.

mod optim;
mod schedule;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, GraphBatch};
use crate::layers::ConvKind;
use crate::metrics::{self, MetricKind};
use crate::model::{GraphModel, ModelSpec};
use crate::readout::{ReadoutKind, DEFAULT_BASE_KINDS};
use crate::rng::{self, Rng, Stream};
use crate::tensor::{Tape, Tensor};

pub use optim::AdamW;
pub use schedule::{EarlyStopping, ReduceOnPlateau, StopDecision, IMPROVEMENT_THRESHOLD};

/// Dataset-independent model hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub conv: ConvKind,
    pub readout: ReadoutKind,
    pub base_kinds: Vec<ReadoutKind>,
    pub d_v: usize,
    pub d_g: usize,
    pub num_layers: usize,
}

impl Architecture {
    pub fn new(conv: ConvKind, readout: ReadoutKind, d_v: usize, d_g: usize, num_layers: usize) -> Self {
        Architecture {
            conv,
            readout,
            base_kinds: DEFAULT_BASE_KINDS.to_vec(),
            d_v,
            d_g,
            num_layers,
        }
    }

    pub fn model_spec(&self, ds: &Dataset) -> ModelSpec {
        ModelSpec::new(self.conv, self.readout, ds.feature_dim(), self.d_v, self.d_g, ds.task().output_dim())
            .with_layers(self.num_layers)
            .with_base_kinds(self.base_kinds.clone())
            .with_n_max(ds.max_nodes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub min_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 200,
            lr: 1e-3,
            weight_decay: 0.01,
            patience: 25,
            min_epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("train.max_epochs", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("train.lr", "must be a positive number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation("train.weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// One line of the per-run event log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tval_loss\tlr";

    pub fn line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.epoch, self.train_loss, self.val_loss, self.lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub metric: MetricKind,
    /// Test metric in `[0, 1]` for F1 scores, `(-inf, 1]` for R²; NaN if the run failed.
    pub metric_value: f64,
    pub best_val_loss: f64,
    /// Epoch whose snapshot was tested.
    pub best_epoch: usize,
    pub epochs: usize,
    pub wall_time_s: f64,
    pub param_count: usize,
    /// Diagnostic for a diverged run.
    pub failure: Option<String>,
    pub history: Vec<EpochRecord>,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

fn batches<'g>(graphs: &'g [Graph], idx: &[usize], size: usize) -> impl Iterator<Item = Result<GraphBatch>> + 'g {
    let chunks: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |c| GraphBatch::new(c.iter().map(|&i| &graphs[i])))
}

/// Mean loss and stacked eval-mode outputs over `idx`.
fn evaluate_split(model: &GraphModel, graphs: &[Graph], idx: &[usize], batch_size: usize) -> Result<(f64, Tensor)> {
    let mut total = 0.0;
    let mut rows = Vec::new();
    let mut width = 0;
    for b in batches(graphs, idx, batch_size) {
        let b = b?;
        let tape = Tape::new();
        let out = model.forward(&tape, &b, false, rng::stream(0, Stream::Dropout))?;
        total += model.loss(out, &b)?.value().data()[0] * b.num_graphs() as f64;
        let v = out.value();
        width = v.cols();
        rows.extend_from_slice(v.data());
    }
    Ok((total / idx.len() as f64, Tensor::matrix(idx.len(), width, rows)?))
}

/// Scores `model` on the graphs at `idx`.
pub fn test_metric(model: &GraphModel, ds: &Dataset, graphs: &[Graph], idx: &[usize], batch_size: usize) -> Result<f64> {
    let (_, out) = evaluate_split(model, graphs, idx, batch_size)?;
    let targets: Vec<_> = idx.iter().map(|&i| graphs[i].target()).collect();
    let labels: Option<Vec<usize>> = targets.iter().map(|t| t.class()).collect();
    let values: Option<Vec<f64>> = targets.iter().map(|t| t.value()).collect();
    Ok(metrics::evaluate(ds.task(), &out, labels.as_deref(), values.as_deref())?.value)
}

struct Trained {
    best: GraphModel,
    best_val: f64,
    best_epoch: usize,
    history: Vec<EpochRecord>,
}

fn fit(
    model: GraphModel,
    graphs: &[Graph],
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    log: &mut Option<&mut dyn Write>,
) -> Result<Trained> {
    let mut model = model;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut sched = ReduceOnPlateau::new(cfg.lr);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_epochs);
    let mut shuffle = rng::stream(seed, Stream::Shuffle);
    let mut dropout = rng::stream(seed, Stream::Dropout);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order = train.to_vec();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for b in batches(graphs, &order, cfg.batch_size) {
            let b = b?;
            let tape = Tape::new();
            let out = model.forward(&tape, &b, true, Rng::from_rng(&mut dropout))?;
            let loss = model.loss(out, &b)?;
            total += loss.value().data()[0] * b.num_graphs() as f64;
            tape.backward(loss)?.apply_to(model.store_mut());
            opt.step(model.store_mut())?;
        }
        let train_loss = total / order.len() as f64;
        let (val_loss, _) = evaluate_split(&model, graphs, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr,
        };
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", record.line()).map_err(|e| Error::io("event log", e))?;
        }
        history.push(record);
        opt.lr = sched.step(val_loss);
        let decision = stopper.update(epoch, val_loss);
        if decision.improved {
            best = model.clone();
        }
        if decision.stop {
            break;
        }
    }
    Ok(Trained {
        best,
        best_val: stopper.best(),
        best_epoch: stopper.best_epoch(),
        history,
    })
}

/// Trains one model from `seed` and scores its best-validation snapshot.
///
/// Divergence yields a result with `failure` set instead of an error;
/// configuration and data problems are errors.
pub fn train_one(arch: &Architecture, cfg: &TrainConfig, ds: &Dataset, seed: u64, log: Option<&mut dyn Write>) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let split = ds.split_for(seed)?;
    let model = GraphModel::new(arch.model_spec(ds), &mut rng::stream(seed, Stream::Init))?;
    let param_count = model.count_parameters();
    let graphs = model.prepare(ds.graphs());
    let mut log = log;
    if let Some(w) = log.as_mut() {
        writeln!(w, "{}", EpochRecord::HEADER).map_err(|e| Error::io("event log", e))?;
    }
    let metric = MetricKind::for_task(ds.task());
    let outcome = fit(model, &graphs, &split.train, &split.val, cfg, seed, &mut log)
        .and_then(|t| Ok((test_metric(&t.best, ds, &graphs, &split.test, cfg.batch_size)?, t)));
    let wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((value, t)) => Ok(RunResult {
            seed,
            metric,
            metric_value: value,
            best_val_loss: t.best_val,
            best_epoch: t.best_epoch,
            epochs: t.history.len(),
            wall_time_s,
            param_count,
            failure: None,
            history: t.history,
        }),
        Err(e @ (Error::Numeric { .. } | Error::UndefinedMetric(_))) => Ok(RunResult {
            seed,
            metric,
            metric_value: f64::NAN,
            best_val_loss: f64::NAN,
            best_epoch: 0,
            epochs: 0,
            wall_time_s,
            param_count,
            failure: Some(e.to_string()),
            history: Vec::new(),
        }),
        Err(e) => Err(e),
    }
}

/// Mean and sample standard deviation in percent over successful runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

impl Summary {
    pub fn is_partial(&self) -> bool {
        self.n_failed > 0
    }
}

/// Mean and sample (n-1) standard deviation; a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(runs: &[RunResult]) -> Summary {
    let ok: Vec<f64> = runs.iter().filter(|r| r.is_ok()).map(|r| 100.0 * r.metric_value).collect();
    let (mean, std) = mean_std(&ok);
    Summary {
        mean,
        std,
        n_ok: ok.len(),
        n_failed: runs.len() - ok.len(),
    }
}

#[derive(Clone, Debug)]
pub struct Repeated {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

/// Options for [`run_repeated`].
#[derive(Clone, Debug, Default)]
pub struct RepeatOptions<'a> {
    /// Worker threads; `None` or 1 runs sequentially.
    pub threads: Option<usize>,
    /// Directory receiving one event log per run.
    pub log_dir: Option<&'a Path>,
    /// Log file name prefix.
    pub log_prefix: &'a str,
}

fn run_logged(arch: &Architecture, cfg: &TrainConfig, ds: &Dataset, seed: u64, opts: &RepeatOptions) -> Result<RunResult> {
    match opts.log_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{}seed{seed}.log", opts.log_prefix));
            let file: File = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            let r = train_one(arch, cfg, ds, seed, Some(&mut w as &mut dyn Write));
            w.flush().map_err(|e| Error::io(&path, e))?;
            r
        }
        None => train_one(arch, cfg, ds, seed, None),
    }
}

/// Runs seeds `seed_base..seed_base + n` and summarizes them in seed order.
pub fn run_repeated(
    arch: &Architecture,
    cfg: &TrainConfig,
    ds: &Dataset,
    seed_base: u64,
    n: usize,
    opts: &RepeatOptions,
) -> Result<Repeated> {
    if n == 0 {
        return Err(Error::validation("repeats", "must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| seed_base + i).collect();
    let runs: Vec<RunResult> = match opts.threads {
        Some(t) if t > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| seeds.par_iter().map(|&s| run_logged(arch, cfg, ds, s, opts)).collect::<Result<_>>())?
        }
        _ => seeds.iter().map(|&s| run_logged(arch, cfg, ds, s, opts)).collect::<Result<_>>()?,
    };
    let summary = summarize(&runs);
    Ok(Repeated { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy::toy_dataset;

    #[test]
    fn mean_std_examples() {
        let (m, s) = mean_std(&[80.0, 90.0]);
        assert_eq!(m, 85.0);
        assert!((s - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[42.0]), (42.0, 0.0));
        assert_eq!(mean_std(&[3.0, 3.0, 3.0]).1, 0.0);
    }

    #[test]
    fn min_epochs_hold_with_a_short_budget() {
        let ds = toy_dataset().unwrap();
        let arch = Architecture::new(ConvKind::Gcn, ReadoutKind::Sum, 8, 8, 2);
        let cfg = TrainConfig {
            max_epochs: 10,
            patience: 1,
            ..TrainConfig::default()
        };
        let r = train_one(&arch, &cfg, &ds, 0, None).unwrap();
        assert_eq!(r.epochs, 10);
    }

    #[test]
    fn bad_config_is_a_validation_error() {
        let ds = toy_dataset().unwrap();
        let arch = Architecture::new(ConvKind::Gcn, ReadoutKind::Sum, 8, 8, 2);
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_one(&arch, &cfg, &ds, 0, None), Err(Error::Validation { .. })));
    }

    #[test]
    fn event_log_has_one_line_per_epoch() {
        let ds = toy_dataset().unwrap();
        let arch = Architecture::new(ConvKind::Gin, ReadoutKind::Mean, 4, 4, 1);
        let cfg = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let mut buf = Vec::new();
        let r = train_one(&arch, &cfg, &ds, 5, Some(&mut buf as &mut dyn Write)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], EpochRecord::HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], r.history[2].line());
    }
}
