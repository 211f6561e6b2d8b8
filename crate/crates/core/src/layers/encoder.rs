use crate::error::Result;
use crate::graph::GraphBatch;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Var};

use super::{ConvKind, ConvLayer, Ctx, Linear};

/// A bias-free featurizer to width `d_V` followed by `L` convolutions with
/// ReLU between consecutive layers and none after the last.
///
/// The featurizer has no bias so that all-zero input rows, such as a fresh
/// virtual node, stay zero until the first convolution.
#[derive(Clone, Debug)]
pub struct GnnEncoder {
    pub featurizer: Linear,
    pub layers: Vec<ConvLayer>,
    pub hidden: usize,
}

impl GnnEncoder {
    pub fn new(
        store: &mut ParamStore,
        kind: ConvKind,
        in_dim: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let featurizer = Linear::new(store, "encoder.featurizer", in_dim, hidden, false, rng)?;
        let layers = (0..num_layers)
            .map(|l| ConvLayer::new(kind, store, &format!("encoder.conv{l}"), hidden, hidden, rng))
            .collect::<Result<_>>()?;
        Ok(GnnEncoder {
            featurizer,
            layers,
            hidden,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Node embeddings `[N_total, d_V]` after the last layer.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, batch: &GraphBatch) -> Result<Var<'t>> {
        let x = ctx.tape.constant(batch.features().clone());
        let mut h = self.featurizer.forward(ctx, x)?;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.relu()?;
            }
            h = layer.forward(ctx, batch, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch, Graph, Target};
    use crate::rng::{stream, Stream};
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn output_shape_and_layer_count() {
        let mut store = ParamStore::new();
        let enc = GnnEncoder::new(&mut store, ConvKind::Gcn, 3, 8, 3, &mut stream(0, Stream::Init)).unwrap();
        assert_eq!(enc.num_layers(), 3);
        let g = Graph::undirected(Tensor::full([4, 3], 0.5), &[(0, 1), (2, 3)], Target::Class(0)).unwrap();
        let b = batch(&[g.clone(), g]).unwrap();
        let tape = Tape::new();
        let h = enc.forward(&Ctx::eval(&tape, &store), &b).unwrap();
        assert_eq!(h.shape(), vec![8, 8]);
    }

    #[test]
    fn zero_rows_stay_zero_without_layers() {
        let mut store = ParamStore::new();
        let enc = GnnEncoder::new(&mut store, ConvKind::Gin, 2, 4, 0, &mut stream(0, Stream::Init)).unwrap();
        let g = Graph::new(Tensor::full([2, 2], 1.0), vec![], Target::Class(0)).unwrap().add_virtual_node();
        let b = batch(&[g]).unwrap();
        let tape = Tape::new();
        let h = enc.forward(&Ctx::eval(&tape, &store), &b).unwrap().value();
        assert_eq!(h.row(2), &[0.0; 4]);
    }
}
