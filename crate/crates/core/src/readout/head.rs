use crate::error::{Error, Result};
use crate::layers::{Ctx, Linear, Mlp2};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Var};

use super::{projections, Combination, ReadoutKind};

pub const HEAD_HIDDEN: usize = 128;

/// MLP with one hidden layer of width [`HEAD_HIDDEN`]; emits raw logits or
/// a regression value.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub mlp: Mlp2,
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(PredictionHead {
            mlp: Mlp2::new(store, name, [in_dim, HEAD_HIDDEN, out_dim], rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.first.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.second.out_dim
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, z: Var<'t>) -> Result<Var<'t>> {
        self.mlp.forward(ctx, z)
    }
}

/// One head per basic readout, combined after prediction.
///
/// `mean_pred` averages the head outputs; `wmean_pred` computes
/// `sum_r (w_r psi_r(z_r) + b_r)` with learnable scalars; `wmean_pred_proj`
/// additionally projects each `z_r` before its head.
#[derive(Clone, Debug)]
pub struct PredictionEnsemble {
    pub heads: Vec<PredictionHead>,
    pub projections: Option<Vec<Linear>>,
    pub combination: Option<Combination>,
}

impl PredictionEnsemble {
    pub fn new(
        kind: ReadoutKind,
        store: &mut ParamStore,
        n: usize,
        d_v: usize,
        d_g: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (projections, combination, head_in) = match kind {
            ReadoutKind::MeanPred => (None, None, d_v),
            ReadoutKind::WmeanPred => (None, Some(Combination::new(store, "ensemble.combine", n)?), d_v),
            ReadoutKind::WmeanPredProj => (
                Some(projections(store, "ensemble", n, d_v, d_g, rng)?),
                Some(Combination::new(store, "ensemble.combine", n)?),
                d_g,
            ),
            other => return Err(Error::Contract(format!("`{other}` is not a prediction-level ensemble"))),
        };
        let heads = (0..n)
            .map(|r| PredictionHead::new(store, &format!("ensemble.head{r}"), head_in, out_dim, rng))
            .collect::<Result<_>>()?;
        Ok(PredictionEnsemble {
            heads,
            projections,
            combination,
        })
    }

    /// Per-readout predictions before combination.
    pub fn head_outputs<'t>(&self, ctx: &Ctx<'t, '_>, parts: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if parts.len() != self.heads.len() {
            return Err(Error::dim("prediction_ensemble", format!("{} readouts for {} heads", parts.len(), self.heads.len())));
        }
        let out_dim = self.heads[0].out_dim();
        if self.heads.iter().any(|h| h.out_dim() != out_dim) {
            return Err(Error::dim("prediction_ensemble", "head output widths disagree"));
        }
        parts
            .iter()
            .enumerate()
            .map(|(r, &z)| {
                let z = match &self.projections {
                    Some(p) => p[r].forward(ctx, z)?,
                    None => z,
                };
                self.heads[r].forward(ctx, z)
            })
            .collect()
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let outs = self.head_outputs(ctx, parts)?;
        match &self.combination {
            Some(c) => c.forward(ctx, &outs),
            None => {
                let n = outs.len() as f64;
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = acc.add(o)?;
                }
                acc.scale(1.0 / n)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut store = ParamStore::new();
        let head = PredictionHead::new(&mut store, "head", 4, 3, &mut stream(0, Stream::Init)).unwrap();
        assert_eq!(store.value(head.mlp.first.weight).shape(), &[4, HEAD_HIDDEN]);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            *store.value_mut(id) = Tensor::zeros(store.value(id).shape().to_vec());
        }
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let out = head.forward(&ctx, tape.constant(Tensor::full([2, 4], 3.0))).unwrap();
        assert_eq!(out.value().data(), &[0.0; 6]);
        assert!(head.forward(&ctx, tape.constant(Tensor::full([2, 5], 3.0))).is_err());
    }

    #[test]
    fn mean_pred_averages_heads() {
        let mut store = ParamStore::new();
        let ens = PredictionEnsemble::new(ReadoutKind::MeanPred, &mut store, 3, 2, 2, 2, &mut stream(3, Stream::Init)).unwrap();
        assert_eq!(store.count_trainable(), 3 * (2 * 128 + 128 + 128 * 2 + 2));
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let parts: Vec<_> = (0..3)
            .map(|r| tape.constant(Tensor::from_rows(&[[r as f64, 1.0], [0.5, -(r as f64)]]).unwrap()))
            .collect();
        let out = ens.forward(&ctx, &parts).unwrap().value();
        let heads: Vec<Tensor> = ens.head_outputs(&ctx, &parts).unwrap().iter().map(|v| v.value()).collect();
        for i in 0..4 {
            let avg = heads.iter().map(|h| h.data()[i]).sum::<f64>() / 3.0;
            assert!((out.data()[i] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_wmean_pred_is_first_head() {
        let mut store = ParamStore::new();
        let ens = PredictionEnsemble::new(ReadoutKind::WmeanPred, &mut store, 3, 2, 2, 1, &mut stream(3, Stream::Init)).unwrap();
        let combo = ens.combination.clone().unwrap();
        for &w in &combo.weights[1..] {
            *store.value_mut(w) = Tensor::zeros([1]);
        }
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let parts: Vec<_> = (0..3).map(|r| tape.constant(Tensor::full([2, 2], r as f64 + 0.5))).collect();
        let out = ens.forward(&ctx, &parts).unwrap().value();
        let first = ens.heads[0].forward(&ctx, parts[0]).unwrap().value();
        assert_eq!(out, first);
    }

    #[test]
    fn rejects_non_prediction_kinds() {
        let mut store = ParamStore::new();
        assert!(PredictionEnsemble::new(ReadoutKind::ConcatR, &mut store, 3, 2, 2, 1, &mut stream(0, Stream::Init)).is_err());
    }
}
