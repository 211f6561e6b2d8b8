//! Encoder, readout and prediction stage assembled into one trainable model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch};
use crate::layers::{BatchNorm, ConvKind, Ctx, GnnEncoder};
use crate::readout::{PredictionEnsemble, PredictionHead, Readout, ReadoutKind, ReadoutSpec, DEFAULT_BASE_KINDS};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

const CHECKPOINT_MAGIC: &str = "graphout-checkpoint v1";

/// Architecture of a [`GraphModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub conv: ConvKind,
    /// Raw node feature width.
    pub in_dim: usize,
    /// Node embedding width `d_V`.
    pub d_v: usize,
    /// Graph representation width `d_G`.
    pub d_g: usize,
    pub num_layers: usize,
    pub readout: ReadoutKind,
    pub base_kinds: Vec<ReadoutKind>,
    /// Logit count, or 1 for regression.
    pub out_dim: usize,
    /// Largest graph size, including a virtual node if one is added.
    pub n_max: usize,
}

impl ModelSpec {
    pub fn new(conv: ConvKind, readout: ReadoutKind, in_dim: usize, d_v: usize, d_g: usize, out_dim: usize) -> Self {
        ModelSpec {
            conv,
            in_dim,
            d_v,
            d_g,
            num_layers: 3,
            readout,
            base_kinds: DEFAULT_BASE_KINDS.to_vec(),
            out_dim,
            n_max: 0,
        }
    }

    pub fn with_layers(mut self, l: usize) -> Self {
        self.num_layers = l;
        self
    }

    pub fn with_n_max(mut self, n: usize) -> Self {
        self.n_max = n;
        self
    }

    pub fn with_base_kinds(mut self, kinds: Vec<ReadoutKind>) -> Self {
        self.base_kinds = kinds;
        self
    }

    /// `d_G` actually realized: readouts without any projection emit `d_V`.
    pub fn effective_d_g(&self) -> usize {
        if self.readout.is_projection_free() {
            self.d_v
        } else {
            self.d_g
        }
    }

    pub fn readout_spec(&self) -> ReadoutSpec {
        ReadoutSpec::new(self.readout, self.d_v, self.effective_d_g())
            .with_base_kinds(self.base_kinds.clone())
            .with_n_max(self.n_max)
    }
}

#[derive(Clone, Debug)]
enum Predictor {
    Head(PredictionHead),
    Ensemble(PredictionEnsemble),
}

/// A graph-level predictor.
#[derive(Clone, Debug)]
pub struct GraphModel {
    spec: ModelSpec,
    store: ParamStore,
    encoder: GnnEncoder,
    readout: Readout,
    predictor: Predictor,
}

impl GraphModel {
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = GnnEncoder::new(&mut store, spec.conv, spec.in_dim, spec.d_v, spec.num_layers, rng)?;
        let rspec = spec.readout_spec();
        let readout = Readout::new(&rspec, &mut store, rng)?;
        let predictor = match rspec.output_dim() {
            Some(width) => Predictor::Head(PredictionHead::new(&mut store, "head", width, spec.out_dim, rng)?),
            None => Predictor::Ensemble(PredictionEnsemble::new(
                spec.readout,
                &mut store,
                rspec.base_kinds.len(),
                rspec.d_v,
                rspec.d_g,
                spec.out_dim,
                rng,
            )?),
        };
        Ok(GraphModel {
            spec,
            store,
            encoder,
            readout,
            predictor,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &GnnEncoder {
        &self.encoder
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    pub fn needs_virtual_node(&self) -> bool {
        self.spec.readout == ReadoutKind::VirtualNode
    }

    /// Applies the graph transformation the readout relies on.
    pub fn prepare(&self, graphs: &[Graph]) -> Vec<Graph> {
        if self.needs_virtual_node() {
            graphs.iter().map(Graph::add_virtual_node).collect()
        } else {
            graphs.to_vec()
        }
    }

    /// Trainable scalar count.
    pub fn count_parameters(&self) -> usize {
        self.store.count_trainable()
    }

    /// Trainable scalars owned by the readout, its combination layers and projections;
    /// per-readout prediction heads are excluded.
    pub fn count_readout_parameters(&self) -> usize {
        let ensemble_extra = self.store.count_trainable_under("ensemble.combine")
            + self.store.count_trainable_under("ensemble.proj");
        self.store.count_trainable_under("readout.") + ensemble_extra
    }

    /// Raw outputs `[num_graphs, out_dim]`.
    pub fn forward_ctx<'t>(&self, ctx: &Ctx<'t, '_>, batch: &GraphBatch) -> Result<Var<'t>> {
        let h = self.encoder.forward(ctx, batch)?;
        let z = self.readout.forward(ctx, h, batch)?;
        match &self.predictor {
            Predictor::Head(head) => head.forward(ctx, z.single()?),
            Predictor::Ensemble(ens) => match z {
                crate::readout::ReadoutOutput::PerReadout(parts) => ens.forward(ctx, &parts),
                crate::readout::ReadoutOutput::Single(_) => {
                    Err(Error::Contract("prediction ensemble needs per-readout outputs".into()))
                }
            },
        }
    }

    /// Forward pass; `dropout` seeds the dropout masks in training mode.
    pub fn forward<'t>(&self, tape: &'t Tape, batch: &GraphBatch, training: bool, dropout: Rng) -> Result<Var<'t>> {
        let ctx = Ctx::new(tape, &self.store, training, dropout);
        self.forward_ctx(&ctx, batch)
    }

    /// Evaluation-mode outputs.
    pub fn predict(&self, batch: &GraphBatch) -> Result<Tensor> {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &self.store);
        Ok(self.forward_ctx(&ctx, batch)?.value())
    }

    /// Mean cross-entropy for class targets, mean squared error for real ones.
    pub fn loss<'t>(&self, out: Var<'t>, batch: &GraphBatch) -> Result<Var<'t>> {
        if let Some(labels) = batch.labels() {
            out.cross_entropy(&labels)
        } else if let Some(values) = batch.values() {
            out.mse(&values)
        } else {
            Err(Error::Contract("batch mixes class and regression targets".into()))
        }
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.readout.batch_norms()
    }

    /// Writes every parameter and batch-norm running statistic.
    ///
    /// ```text
    /// graphout-checkpoint v1
    /// param <name> <trainable 0|1> <rank> <extent>...
    /// <values>
    /// buffer <name> <len>
    /// <values>
    /// ```
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("{CHECKPOINT_MAGIC}\n");
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        for (_, p) in self.store.iter() {
            let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "param {} {} {} {}", p.name, p.trainable as u8, shape.len(), shape.join(" "));
            let _ = writeln!(out, "{}", join(p.value.data()));
        }
        for (i, bn) in self.batch_norms().into_iter().enumerate() {
            let stats = bn.stats.borrow();
            for (suffix, v) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                let _ = writeln!(out, "buffer bn{i}.{suffix} {}\n{}", v.len(), join(v));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint written by [`GraphModel::save`] for the same architecture.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            _ => return Err(Error::format(path, Some(1), format!("expected `{CHECKPOINT_MAGIC}`"))),
        }
        let bad = |n: usize, msg: String| Error::format(path, Some(n), msg);
        let mut bns: Vec<Vec<f64>> = Vec::new();
        while let Some((n, header)) = lines.next() {
            let fields: Vec<&str> = header.split_whitespace().collect();
            let (_, body) = lines.next().ok_or_else(|| bad(n, "missing values line".into()))?;
            let values = body
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(n + 1, format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            match fields.as_slice() {
                ["param", name, _, rank, dims @ ..] => {
                    let rank: usize = rank.parse().map_err(|_| bad(n, "bad rank".into()))?;
                    let shape = dims
                        .iter()
                        .map(|d| d.parse::<usize>().map_err(|_| bad(n, format!("bad extent `{d}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    if shape.len() != rank {
                        return Err(bad(n, format!("rank {rank} with {} extents", shape.len())));
                    }
                    let id = self
                        .store
                        .id_of(name)
                        .ok_or_else(|| bad(n, format!("unknown parameter `{name}`")))?;
                    if self.store.value(id).shape() != shape.as_slice() {
                        return Err(bad(n, format!("shape {shape:?} does not match `{name}`")));
                    }
                    *self.store.value_mut(id) = Tensor::new(shape, values).map_err(|e| bad(n + 1, e.to_string()))?;
                }
                ["buffer", _, _] => bns.push(values),
                _ => return Err(bad(n, format!("unrecognized record `{header}`"))),
            }
        }
        let norms = self.batch_norms();
        if bns.len() != 2 * norms.len() {
            return Err(Error::format(path, None, "batch-norm buffer count does not match the model"));
        }
        for (bn, pair) in norms.into_iter().zip(bns.chunks(2)) {
            let mut stats = bn.stats.borrow_mut();
            if pair[0].len() != stats.mean.len() || pair[1].len() != stats.var.len() {
                return Err(Error::format(path, None, "batch-norm buffer width does not match the model"));
            }
            stats.mean.clone_from(&pair[0]);
            stats.var.clone_from(&pair[1]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch, toy::toy_graphs};
    use crate::rng::{stream, Stream};

    fn spec(readout: ReadoutKind) -> ModelSpec {
        ModelSpec::new(ConvKind::Gin, readout, 1, 8, 8, 2).with_layers(2).with_n_max(12)
    }

    #[test]
    fn every_readout_builds_and_runs() {
        let graphs = toy_graphs();
        for kind in ReadoutKind::ALL {
            let model = GraphModel::new(spec(kind), &mut stream(0, Stream::Init)).unwrap();
            let prepared = model.prepare(&graphs[..4]);
            let b = batch(&prepared).unwrap();
            let out = model.predict(&b).unwrap();
            assert_eq!(out.shape(), &[4, 2], "{kind}");
            let tape = Tape::new();
            let o = model.forward(&tape, &b, true, stream(1, Stream::Dropout)).unwrap();
            let loss = model.loss(o, &b).unwrap();
            assert!(loss.value().data()[0].is_finite());
        }
    }

    #[test]
    fn projection_free_kinds_use_d_v() {
        let s = ModelSpec::new(ConvKind::Gcn, ReadoutKind::WmeanR, 7, 64, 128, 2);
        assert_eq!(s.effective_d_g(), 64);
        let s = ModelSpec::new(ConvKind::Gcn, ReadoutKind::WmeanRProj, 7, 64, 128, 2);
        assert_eq!(s.effective_d_g(), 128);
        let m = GraphModel::new(s, &mut stream(0, Stream::Init)).unwrap();
        assert_eq!(m.count_readout_parameters(), 6 + 3 * (64 * 128 + 128));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let graphs = toy_graphs();
        let a = GraphModel::new(spec(ReadoutKind::DeepsetsBase), &mut stream(1, Stream::Init)).unwrap();
        let b_graphs = batch(&graphs).unwrap();
        // move running statistics away from their defaults
        let tape = Tape::new();
        a.forward(&tape, &b_graphs, true, stream(0, Stream::Dropout)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        a.save(&path).unwrap();
        let mut b = GraphModel::new(spec(ReadoutKind::DeepsetsBase), &mut stream(2, Stream::Init)).unwrap();
        assert_ne!(a.predict(&b_graphs).unwrap(), b.predict(&b_graphs).unwrap());
        b.load(&path).unwrap();
        assert_eq!(a.predict(&b_graphs).unwrap(), b.predict(&b_graphs).unwrap());

        let mut other = GraphModel::new(spec(ReadoutKind::Sum), &mut stream(2, Stream::Init)).unwrap();
        assert!(matches!(other.load(&path), Err(Error::Format { .. })));
    }
}
