//! Experiment configuration files.
//!
//! Configs are TOML: `key = value` lines grouped under `[section]` headers.
//! Every field except `dataset.name` may be omitted.
//!
//! ```toml
//! [dataset]
//! name = "MUTAG"          # `toy` is built in
//! path = "data/MUTAG"     # default: $DATASET_DIR/<name>
//!
//! [model]
//! conv = "gin"            # gcn | gat | gin
//! readout = "sum"         # any readout kind
//! base_readouts = ["sum", "mean", "max"]
//! num_layers = 3
//! d_v = 64                # default 64 for MUTAG, 128 otherwise
//! d_g = 128
//!
//! [train]
//! batch_size = 32
//! max_epochs = 200
//! lr = 0.001
//! weight_decay = 0.01
//! patience = 25
//! min_epochs = 10
//!
//! [run]
//! seed = 0
//! repeats = 5
//! out_dir = "results"
//! threads = 1
//! ```
//!
//! A grid config replaces `[dataset]` and the `conv`/`readout` keys with
//!
//! ```toml
//! [grid]
//! datasets = ["MUTAG", "ENZYMES"]
//! convs = ["gcn", "gin"]
//! readouts = ["sum", "mean", "deepsets_base"]
//!
//! [paths]                 # optional per-dataset locations
//! MUTAG = "data/MUTAG"
//! ```
//!
//! and may keep `[model]` for the shared dimensions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ConvKind;
use crate::readout::{ReadoutKind, DEFAULT_BASE_KINDS};
use crate::train::{Architecture, TrainConfig};

pub const DEFAULT_NUM_LAYERS: usize = 3;
pub const DEFAULT_D_V: usize = 128;
pub const MUTAG_D_V: usize = 64;
pub const DEFAULT_D_G: usize = 128;
pub const DEFAULT_REPEATS: usize = 5;

/// `d_V` used for `dataset` when the config leaves it out.
pub fn default_d_v(dataset: &str) -> usize {
    if dataset.eq_ignore_ascii_case("mutag") {
        MUTAG_D_V
    } else {
        DEFAULT_D_V
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    name: Option<String>,
    path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    conv: Option<String>,
    readout: Option<String>,
    base_readouts: Option<Vec<String>>,
    num_layers: Option<usize>,
    d_v: Option<usize>,
    d_g: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    patience: Option<usize>,
    min_epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: Option<u64>,
    repeats: Option<usize>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    datasets: Vec<String>,
    convs: Vec<String>,
    readouts: Vec<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<RawDataset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<RawGrid>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    paths: BTreeMap<String, PathBuf>,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    run: RawRun,
}

/// Settings shared by single runs and grids.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 0,
            repeats: DEFAULT_REPEATS,
            out_dir: PathBuf::from("results"),
            threads: 1,
        }
    }
}

/// One fully resolved experiment: a dataset, an architecture and a protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// Explicit location; `None` falls back to `$DATASET_DIR/<dataset>`.
    pub dataset_path: Option<PathBuf>,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub run: RunSettings,
}

/// A dataset × convolution × readout sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub datasets: Vec<String>,
    pub paths: BTreeMap<String, PathBuf>,
    pub convs: Vec<ConvKind>,
    pub readouts: Vec<ReadoutKind>,
    pub base_kinds: Vec<ReadoutKind>,
    pub num_layers: usize,
    /// `None` applies the per-dataset default.
    pub d_v: Option<usize>,
    pub d_g: usize,
    pub train: TrainConfig,
    pub run: RunSettings,
}

fn parse_conv(s: &str, field: &str) -> Result<ConvKind> {
    s.parse().map_err(|_| Error::validation(field, format!("unknown convolution `{s}` (expected gcn, gat or gin)")))
}

fn parse_readout(s: &str, field: &str) -> Result<ReadoutKind> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = ReadoutKind::ALL.iter().map(|k| k.name()).collect();
        Error::validation(field, format!("unknown readout `{s}` (expected one of {})", known.join(", ")))
    })
}

fn positive(v: usize, field: &str) -> Result<usize> {
    if v == 0 {
        return Err(Error::validation(field, "must be positive"));
    }
    Ok(v)
}

fn parse_raw(text: &str, origin: &Path) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1));
        Error::format(origin, line, e.message().to_string())
    })
}

impl RawModel {
    fn base_kinds(&self) -> Result<Vec<ReadoutKind>> {
        let kinds = match &self.base_readouts {
            Some(names) => names
                .iter()
                .map(|n| parse_readout(n, "model.base_readouts"))
                .collect::<Result<Vec<_>>>()?,
            None => return Ok(DEFAULT_BASE_KINDS.to_vec()),
        };
        if kinds.is_empty() {
            return Err(Error::validation("model.base_readouts", "needs at least one readout"));
        }
        if let Some(k) = kinds.iter().find(|k| k.reduce().is_none()) {
            return Err(Error::validation("model.base_readouts", format!("`{k}` is not sum, mean or max")));
        }
        Ok(kinds)
    }

    fn layers(&self) -> Result<usize> {
        positive(self.num_layers.unwrap_or(DEFAULT_NUM_LAYERS), "model.num_layers")
    }
}

impl RawTrain {
    fn resolve(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            patience: self.patience.unwrap_or(d.patience),
            min_epochs: self.min_epochs.unwrap_or(d.min_epochs),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RawRun {
    fn resolve(&self) -> Result<RunSettings> {
        let d = RunSettings::default();
        Ok(RunSettings {
            seed: self.seed.unwrap_or(d.seed),
            repeats: positive(self.repeats.unwrap_or(d.repeats), "run.repeats")?,
            out_dir: self.out_dir.clone().unwrap_or(d.out_dir),
            threads: positive(self.threads.unwrap_or(d.threads), "run.threads")?,
        })
    }
}

impl ExperimentConfig {
    /// Defaults for `dataset` with the given convolution and readout.
    pub fn with_defaults(dataset: &str, conv: ConvKind, readout: ReadoutKind) -> Self {
        ExperimentConfig {
            dataset: dataset.to_string(),
            dataset_path: None,
            arch: Architecture::new(conv, readout, default_d_v(dataset), DEFAULT_D_G, DEFAULT_NUM_LAYERS),
            train: TrainConfig::default(),
            run: RunSettings::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let raw = parse_raw(text, origin)?;
        if raw.grid.is_some() {
            return Err(Error::validation("grid", "grid configs are run with the `grid` command"));
        }
        let ds = raw.dataset.unwrap_or_default();
        let name = ds.name.ok_or_else(|| Error::validation("dataset.name", "missing"))?;
        if name.trim().is_empty() {
            return Err(Error::validation("dataset.name", "must not be empty"));
        }
        let m = &raw.model;
        let conv = parse_conv(m.conv.as_deref().unwrap_or("gin"), "model.conv")?;
        let readout = parse_readout(m.readout.as_deref().unwrap_or("sum"), "model.readout")?;
        let mut arch = Architecture::new(
            conv,
            readout,
            positive(m.d_v.unwrap_or_else(|| default_d_v(&name)), "model.d_v")?,
            positive(m.d_g.unwrap_or(DEFAULT_D_G), "model.d_g")?,
            m.layers()?,
        );
        arch.base_kinds = m.base_kinds()?;
        Ok(ExperimentConfig {
            dataset: name,
            dataset_path: ds.path,
            arch,
            train: raw.train.resolve()?,
            run: raw.run.resolve()?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Writes every field explicitly, so defaults never drift on reload.
    pub fn to_toml(&self) -> String {
        let raw = RawConfig {
            dataset: Some(RawDataset {
                name: Some(self.dataset.clone()),
                path: self.dataset_path.clone(),
            }),
            grid: None,
            paths: BTreeMap::new(),
            model: RawModel {
                conv: Some(self.arch.conv.name().into()),
                readout: Some(self.arch.readout.name().into()),
                base_readouts: Some(self.arch.base_kinds.iter().map(|k| k.name().to_string()).collect()),
                num_layers: Some(self.arch.num_layers),
                d_v: Some(self.arch.d_v),
                d_g: Some(self.arch.d_g),
            },
            train: raw_train(&self.train),
            run: raw_run(&self.run),
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

fn raw_train(t: &TrainConfig) -> RawTrain {
    RawTrain {
        batch_size: Some(t.batch_size),
        max_epochs: Some(t.max_epochs),
        lr: Some(t.lr),
        weight_decay: Some(t.weight_decay),
        patience: Some(t.patience),
        min_epochs: Some(t.min_epochs),
    }
}

fn raw_run(r: &RunSettings) -> RawRun {
    RawRun {
        seed: Some(r.seed),
        repeats: Some(r.repeats),
        out_dir: Some(r.out_dir.clone()),
        threads: Some(r.threads),
    }
}

impl GridConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let raw = parse_raw(text, origin)?;
        if raw.dataset.is_some() {
            return Err(Error::validation("dataset", "grid configs list datasets under `grid.datasets`"));
        }
        let grid = raw.grid.ok_or_else(|| Error::validation("grid", "missing [grid] section"))?;
        let m = &raw.model;
        if m.conv.is_some() || m.readout.is_some() {
            return Err(Error::validation("model", "conv and readout come from `grid.convs` and `grid.readouts`"));
        }
        for (field, list) in [
            ("grid.datasets", grid.datasets.len()),
            ("grid.convs", grid.convs.len()),
            ("grid.readouts", grid.readouts.len()),
        ] {
            if list == 0 {
                return Err(Error::validation(field, "needs at least one entry"));
            }
        }
        Ok(GridConfig {
            datasets: grid.datasets,
            paths: raw.paths,
            convs: grid.convs.iter().map(|c| parse_conv(c, "grid.convs")).collect::<Result<_>>()?,
            readouts: grid
                .readouts
                .iter()
                .map(|r| parse_readout(r, "grid.readouts"))
                .collect::<Result<_>>()?,
            base_kinds: m.base_kinds()?,
            num_layers: m.layers()?,
            d_v: m.d_v.map(|d| positive(d, "model.d_v")).transpose()?,
            d_g: positive(m.d_g.unwrap_or(DEFAULT_D_G), "model.d_g")?,
            train: raw.train.resolve()?,
            run: raw.run.resolve()?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        let raw = RawConfig {
            dataset: None,
            grid: Some(RawGrid {
                datasets: self.datasets.clone(),
                convs: self.convs.iter().map(|c| c.name().to_string()).collect(),
                readouts: self.readouts.iter().map(|r| r.name().to_string()).collect(),
            }),
            paths: self.paths.clone(),
            model: RawModel {
                conv: None,
                readout: None,
                base_readouts: Some(self.base_kinds.iter().map(|k| k.name().to_string()).collect()),
                num_layers: Some(self.num_layers),
                d_v: self.d_v,
                d_g: Some(self.d_g),
            },
            train: raw_train(&self.train),
            run: raw_run(&self.run),
        };
        toml::to_string(&raw).expect("config serializes")
    }

    /// Cells in dataset, convolution, readout order.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for ds in &self.datasets {
            for &conv in &self.convs {
                for &readout in &self.readouts {
                    let mut arch = Architecture::new(
                        conv,
                        readout,
                        self.d_v.unwrap_or_else(|| default_d_v(ds)),
                        self.d_g,
                        self.num_layers,
                    );
                    arch.base_kinds = self.base_kinds.clone();
                    out.push(ExperimentConfig {
                        dataset: ds.clone(),
                        dataset_path: self.paths.get(ds).cloned(),
                        arch,
                        train: self.train.clone(),
                        run: self.run.clone(),
                    });
                }
            }
        }
        out
    }
}
