//! Graph-level readouts and prediction heads.
//!
//! A readout maps the node embeddings of every graph in a batch to one row
//! per graph. Kinds fall into three classes:
//!
//! * non-parametrized: `sum`, `mean`, `max`;
//! * parametrized: `deepsets_base`, `deepsets_large`, `dense`, `gru`,
//!   `virtual_node`;
//! * ensembles over basic readouts, combined either at the representation
//!   level (`concat_r`, `wmean_r`, `wmean_r_proj`) or after separate
//!   prediction heads (`mean_pred`, `wmean_pred`, `wmean_pred_proj`).
//!
//! For prediction-level ensembles the readout only yields the basic
//! readouts; combining them is the job of [`PredictionEnsemble`].

mod gru;
mod head;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::layers::{BatchNorm, Ctx, Linear, Mlp2};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, ReduceKind, Tensor, Var};

pub use gru::Gru;
pub use head::{PredictionEnsemble, PredictionHead, HEAD_HIDDEN};

pub const DEEPSETS_DROPOUT: f64 = 0.4;
pub const DENSE_HIDDEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Sum,
    Mean,
    Max,
    DeepsetsBase,
    DeepsetsLarge,
    Dense,
    Gru,
    VirtualNode,
    ConcatR,
    WmeanR,
    WmeanRProj,
    MeanPred,
    WmeanPred,
    WmeanPredProj,
}

/// Column groups of the results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReadoutClass {
    NonParametrized,
    Parametrized,
    Ensemble,
}

impl ReadoutClass {
    pub fn label(self) -> &'static str {
        match self {
            ReadoutClass::NonParametrized => "NON-PAR",
            ReadoutClass::Parametrized => "PAR",
            ReadoutClass::Ensemble => "ENS",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [ReadoutClass::NonParametrized, ReadoutClass::Parametrized, ReadoutClass::Ensemble]
            .into_iter()
            .find(|c| c.label() == s)
    }
}

impl ReadoutKind {
    pub const ALL: [ReadoutKind; 14] = [
        ReadoutKind::Sum,
        ReadoutKind::Mean,
        ReadoutKind::Max,
        ReadoutKind::DeepsetsBase,
        ReadoutKind::DeepsetsLarge,
        ReadoutKind::Dense,
        ReadoutKind::Gru,
        ReadoutKind::VirtualNode,
        ReadoutKind::ConcatR,
        ReadoutKind::WmeanR,
        ReadoutKind::WmeanRProj,
        ReadoutKind::MeanPred,
        ReadoutKind::WmeanPred,
        ReadoutKind::WmeanPredProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReadoutKind::Sum => "sum",
            ReadoutKind::Mean => "mean",
            ReadoutKind::Max => "max",
            ReadoutKind::DeepsetsBase => "deepsets_base",
            ReadoutKind::DeepsetsLarge => "deepsets_large",
            ReadoutKind::Dense => "dense",
            ReadoutKind::Gru => "gru",
            ReadoutKind::VirtualNode => "virtual_node",
            ReadoutKind::ConcatR => "concat_r",
            ReadoutKind::WmeanR => "wmean_r",
            ReadoutKind::WmeanRProj => "wmean_r_proj",
            ReadoutKind::MeanPred => "mean_pred",
            ReadoutKind::WmeanPred => "wmean_pred",
            ReadoutKind::WmeanPredProj => "wmean_pred_proj",
        }
    }

    pub fn class(self) -> ReadoutClass {
        use ReadoutKind::*;
        match self {
            Sum | Mean | Max => ReadoutClass::NonParametrized,
            DeepsetsBase | DeepsetsLarge | Dense | Gru | VirtualNode => ReadoutClass::Parametrized,
            _ => ReadoutClass::Ensemble,
        }
    }

    /// The segment reduction behind a basic kind.
    pub fn reduce(self) -> Option<ReduceKind> {
        match self {
            ReadoutKind::Sum => Some(ReduceKind::Sum),
            ReadoutKind::Mean => Some(ReduceKind::Mean),
            ReadoutKind::Max => Some(ReduceKind::Max),
            _ => None,
        }
    }

    pub fn is_ensemble(self) -> bool {
        self.class() == ReadoutClass::Ensemble
    }

    /// Ensembles combined after per-readout prediction heads.
    pub fn is_prediction_ensemble(self) -> bool {
        matches!(self, ReadoutKind::MeanPred | ReadoutKind::WmeanPred | ReadoutKind::WmeanPredProj)
    }

    /// Whether the readout ignores node order.
    pub fn is_permutation_invariant(self) -> bool {
        !matches!(self, ReadoutKind::Dense | ReadoutKind::Gru)
    }

    /// Whether the output width is `d_V` regardless of the configured `d_G`.
    pub fn is_projection_free(self) -> bool {
        matches!(
            self,
            ReadoutKind::Sum
                | ReadoutKind::Mean
                | ReadoutKind::Max
                | ReadoutKind::VirtualNode
                | ReadoutKind::ConcatR
                | ReadoutKind::WmeanR
                | ReadoutKind::MeanPred
                | ReadoutKind::WmeanPred
        )
    }
}

impl fmt::Display for ReadoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReadoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReadoutKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation("readout", format!("unknown readout kind `{s}`")))
    }
}

pub const DEFAULT_BASE_KINDS: [ReadoutKind; 3] = [ReadoutKind::Sum, ReadoutKind::Mean, ReadoutKind::Max];

/// Which readout to build and at what widths.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutSpec {
    pub kind: ReadoutKind,
    /// Basic readouts combined by ensemble kinds.
    pub base_kinds: Vec<ReadoutKind>,
    pub d_v: usize,
    pub d_g: usize,
    /// Largest node count the dense readout accepts.
    pub n_max: usize,
}

impl ReadoutSpec {
    pub fn new(kind: ReadoutKind, d_v: usize, d_g: usize) -> Self {
        ReadoutSpec {
            kind,
            base_kinds: DEFAULT_BASE_KINDS.to_vec(),
            d_v,
            d_g,
            n_max: 0,
        }
    }

    pub fn with_base_kinds(mut self, kinds: Vec<ReadoutKind>) -> Self {
        self.base_kinds = kinds;
        self
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_ensemble() {
            if self.base_kinds.len() < 2 {
                return Err(Error::validation("readout.base_kinds", "ensembles need at least two base readouts"));
            }
            if let Some(k) = self.base_kinds.iter().find(|k| k.reduce().is_none()) {
                return Err(Error::validation("readout.base_kinds", format!("`{k}` is not one of sum, mean, max")));
            }
        }
        if self.kind == ReadoutKind::WmeanR && self.d_g != self.d_v {
            return Err(Error::dim(
                "wmean_r",
                format!("d_G = {} must equal d_V = {} without projections", self.d_g, self.d_v),
            ));
        }
        if self.kind == ReadoutKind::Dense && self.n_max == 0 {
            return Err(Error::validation("readout.n_max", "dense readout needs the largest graph size"));
        }
        Ok(())
    }

    /// Width of the graph representation, or `None` for prediction-level
    /// ensembles, which hand `N` separate `d_V` rows to their heads.
    pub fn output_dim(&self) -> Option<usize> {
        use ReadoutKind::*;
        match self.kind {
            Sum | Mean | Max | VirtualNode | WmeanR => Some(self.d_v),
            ConcatR => Some(self.base_kinds.len() * self.d_v),
            DeepsetsBase | DeepsetsLarge | Dense | Gru | WmeanRProj => Some(self.d_g),
            MeanPred | WmeanPred | WmeanPredProj => None,
        }
    }

    fn base_reduces(&self) -> Vec<ReduceKind> {
        self.base_kinds.iter().filter_map(|k| k.reduce()).collect()
    }
}

/// What a readout hands to the prediction stage.
pub enum ReadoutOutput<'t> {
    Single(Var<'t>),
    PerReadout(Vec<Var<'t>>),
}

impl<'t> ReadoutOutput<'t> {
    pub fn single(self) -> Result<Var<'t>> {
        match self {
            ReadoutOutput::Single(v) => Ok(v),
            ReadoutOutput::PerReadout(_) => Err(Error::Contract("expected a single graph representation".into())),
        }
    }
}

/// Learnable weighted mean over basic readouts.
#[derive(Clone, Debug)]
pub struct Combination {
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl Combination {
    /// `n` scalar weights starting at 1 and `n` scalar biases starting at 0.
    pub fn new(store: &mut ParamStore, name: &str, n: usize) -> Result<Self> {
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for r in 0..n {
            weights.push(store.register(format!("{name}.w{r}"), Tensor::full([1], 1.0))?);
            biases.push(store.register(format!("{name}.b{r}"), Tensor::zeros([1]))?);
        }
        Ok(Combination { weights, biases })
    }

    /// `sum_r (w_r * x_r + b_r)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.len() != self.weights.len() {
            return Err(Error::dim("combination", format!("{} inputs for {} weights", parts.len(), self.weights.len())));
        }
        let mut acc: Option<Var<'t>> = None;
        for ((x, &w), &b) in parts.iter().zip(&self.weights).zip(&self.biases) {
            let term = x.mul(ctx.param(w))?.add(ctx.param(b))?;
            acc = Some(match acc {
                Some(a) => {
                    if a.shape() != term.shape() {
                        return Err(Error::dim("combination", format!("{:?} vs {:?}", a.shape(), term.shape())));
                    }
                    a.add(term)?
                }
                None => term,
            });
        }
        Ok(acc.expect("at least one part"))
    }
}

/// Per-readout projections: identity-initialized when square.
pub(crate) fn projections(store: &mut ParamStore, name: &str, n: usize, d_v: usize, d_g: usize, rng: &mut Rng) -> Result<Vec<Linear>> {
    (0..n)
        .map(|r| {
            let name = format!("{name}.proj{r}");
            if d_v == d_g {
                Linear::identity(store, &name, d_v)
            } else {
                Linear::new(store, &name, d_v, d_g, true, rng)
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum Readout {
    Basic(ReduceKind),
    DeepSets {
        layers: Vec<(Linear, BatchNorm)>,
    },
    Dense {
        mlp: Mlp2,
        n_max: usize,
    },
    Gru(Gru),
    VirtualNode,
    Concat(Vec<ReduceKind>),
    WeightedMean {
        kinds: Vec<ReduceKind>,
        combination: Combination,
        projections: Option<Vec<Linear>>,
    },
    /// The basic readouts feeding a prediction-level ensemble.
    PerReadout(Vec<ReduceKind>),
}

impl Readout {
    pub fn new(spec: &ReadoutSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        use ReadoutKind::*;
        Ok(match spec.kind {
            Sum | Mean | Max => Readout::Basic(spec.kind.reduce().unwrap()),
            DeepsetsBase => Self::deepsets(store, spec.d_v, spec.d_g, 2, rng)?,
            DeepsetsLarge => Self::deepsets(store, spec.d_v, spec.d_g, 6, rng)?,
            Dense => Readout::Dense {
                mlp: Mlp2::new(store, "readout.dense", [spec.n_max * spec.d_v, DENSE_HIDDEN, spec.d_g], rng)?,
                n_max: spec.n_max,
            },
            Gru => Readout::Gru(gru::Gru::new(store, "readout.gru", spec.d_v, spec.d_g, rng)?),
            VirtualNode => Readout::VirtualNode,
            ConcatR => Readout::Concat(spec.base_reduces()),
            WmeanR | WmeanRProj => {
                let n = spec.base_kinds.len();
                let projections = if spec.kind == WmeanRProj {
                    Some(projections(store, "readout", n, spec.d_v, spec.d_g, rng)?)
                } else {
                    None
                };
                Readout::WeightedMean {
                    kinds: spec.base_reduces(),
                    combination: Combination::new(store, "readout.combine", n)?,
                    projections,
                }
            }
            MeanPred | WmeanPred | WmeanPredProj => Readout::PerReadout(spec.base_reduces()),
        })
    }

    /// DeepSets encoder `phi` with `depth` blocks of linear, batch norm and
    /// ReLU; `depth = 0` leaves it as the identity.
    pub fn deepsets(store: &mut ParamStore, d_v: usize, width: usize, depth: usize, rng: &mut Rng) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| {
                let input = if l == 0 { d_v } else { width };
                let name = format!("readout.phi{l}");
                Ok((
                    Linear::new(store, &name, input, width, true, rng)?,
                    BatchNorm::new(store, &format!("{name}.bn"), width)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Readout::DeepSets { layers })
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        match self {
            Readout::DeepSets { layers } => layers.iter().map(|(_, bn)| bn).collect(),
            _ => Vec::new(),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, h: Var<'t>, batch: &GraphBatch) -> Result<ReadoutOutput<'t>> {
        let ids = batch.graph_ids();
        let g = batch.num_graphs();
        let basic = |kinds: &[ReduceKind]| -> Result<Vec<Var<'t>>> {
            kinds.iter().map(|&k| h.segment_reduce(k, ids, g)).collect()
        };
        let single = match self {
            Readout::Basic(k) => h.segment_reduce(*k, ids, g)?,
            Readout::DeepSets { layers } => {
                let mut x = h;
                for (lin, bn) in layers {
                    x = bn.forward(ctx, lin.forward(ctx, x)?)?.relu()?;
                }
                if !layers.is_empty() {
                    x = ctx.dropout(x, DEEPSETS_DROPOUT)?;
                }
                x.segment_reduce(ReduceKind::Sum, ids, g)?
            }
            Readout::Dense { mlp, n_max } => {
                let padded = dense_index(batch, *n_max)?;
                let flat = h.gather_rows_padded(&padded)?.reshape([g, n_max * h.cols()])?;
                mlp.forward(ctx, flat)?
            }
            Readout::Gru(cell) => cell.forward(ctx, h, batch)?,
            Readout::VirtualNode => {
                let vn = batch
                    .virtual_nodes()
                    .ok_or_else(|| Error::Contract("virtual_node readout needs graphs with a virtual node".into()))?;
                h.gather_rows(&Arc::from(vn))?
            }
            Readout::Concat(kinds) => ctx.tape.concat_cols(&basic(kinds)?)?,
            Readout::WeightedMean {
                kinds,
                combination,
                projections,
            } => {
                let mut parts = basic(kinds)?;
                if let Some(projs) = projections {
                    parts = parts
                        .into_iter()
                        .zip(projs)
                        .map(|(z, p)| p.forward(ctx, z))
                        .collect::<Result<_>>()?;
                }
                combination.forward(ctx, &parts)?
            }
            Readout::PerReadout(kinds) => return Ok(ReadoutOutput::PerReadout(basic(kinds)?)),
        };
        Ok(ReadoutOutput::Single(single))
    }
}

/// Row index laying every graph out over `n_max` slots, zero-padded.
fn dense_index(batch: &GraphBatch, n_max: usize) -> Result<Arc<[Option<usize>]>> {
    let mut idx = Vec::with_capacity(batch.num_graphs() * n_max);
    for g in 0..batch.num_graphs() {
        let nodes = batch.node_range(g);
        if nodes.len() > n_max {
            return Err(Error::Capacity(format!(
                "graph with {} nodes exceeds the dense readout capacity of {n_max}",
                nodes.len()
            )));
        }
        idx.extend(nodes.clone().map(Some));
        idx.extend(std::iter::repeat_n(None, n_max - nodes.len()));
    }
    Ok(idx.into())
}
