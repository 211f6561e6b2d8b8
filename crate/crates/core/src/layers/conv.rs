use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, ReduceKind, Var, LEAKY_RELU_SLOPE};

use super::{uniform_init, Ctx, Linear, Mlp2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Gcn,
    Gat,
    Gin,
}

impl ConvKind {
    pub const ALL: [ConvKind; 3] = [ConvKind::Gcn, ConvKind::Gat, ConvKind::Gin];

    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Gcn => "gcn",
            ConvKind::Gat => "gat",
            ConvKind::Gin => "gin",
        }
    }
}

impl fmt::Display for ConvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConvKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation("conv", format!("unknown convolution `{s}` (expected gcn, gat or gin)")))
    }
}

/// One message-passing layer.
///
/// * GCN: `D^-1/2 (A+I) D^-1/2 H W + b`, degrees counting the self loop.
/// * GAT: one attention head over in-edges plus a self loop,
///   `e_uv = LeakyReLU_0.2(a_dst·Wh_u + a_src·Wh_v)`, softmax per target.
/// * GIN: `MLP(h_u + sum_{v in N(u)} h_v)` with a two-layer MLP.
#[derive(Clone, Debug)]
pub enum ConvLayer {
    Gcn {
        lin: Linear,
    },
    Gat {
        weight: ParamId,
        att_src: ParamId,
        att_dst: ParamId,
        in_dim: usize,
        out_dim: usize,
    },
    Gin {
        mlp: Mlp2,
    },
}

impl ConvLayer {
    pub fn new(kind: ConvKind, store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match kind {
            ConvKind::Gcn => ConvLayer::Gcn {
                lin: Linear::new(store, name, in_dim, out_dim, true, rng)?,
            },
            ConvKind::Gat => ConvLayer::Gat {
                weight: store.register(format!("{name}.weight"), uniform_init([in_dim, out_dim], in_dim, rng))?,
                att_src: store.register(format!("{name}.att_src"), uniform_init([out_dim, 1], out_dim, rng))?,
                att_dst: store.register(format!("{name}.att_dst"), uniform_init([out_dim, 1], out_dim, rng))?,
                in_dim,
                out_dim,
            },
            ConvKind::Gin => ConvLayer::Gin {
                mlp: Mlp2::new(store, &format!("{name}.mlp"), [in_dim, out_dim, out_dim], rng)?,
            },
        })
    }

    pub fn kind(&self) -> ConvKind {
        match self {
            ConvLayer::Gcn { .. } => ConvKind::Gcn,
            ConvLayer::Gat { .. } => ConvKind::Gat,
            ConvLayer::Gin { .. } => ConvKind::Gin,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            ConvLayer::Gcn { lin } => lin.in_dim,
            ConvLayer::Gat { in_dim, .. } => *in_dim,
            ConvLayer::Gin { mlp } => mlp.first.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ConvLayer::Gcn { lin } => lin.out_dim,
            ConvLayer::Gat { out_dim, .. } => *out_dim,
            ConvLayer::Gin { mlp } => mlp.second.out_dim,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        if h.cols() != self.in_dim() || h.rows() != batch.num_nodes() {
            return Err(Error::dim(
                "conv",
                format!(
                    "input {:?} for {} nodes and width {}",
                    h.shape(),
                    batch.num_nodes(),
                    self.in_dim()
                ),
            ));
        }
        let topo = batch.topology();
        let n = batch.num_nodes();
        match self {
            ConvLayer::Gcn { lin } => {
                let hw = h.matmul(ctx.param(lin.weight))?;
                let norm = ctx.tape.constant(topo.gcn_norm.clone());
                let agg = hw
                    .gather_rows(&topo.loop_src)?
                    .mul(norm)?
                    .segment_reduce(ReduceKind::Sum, &topo.loop_dst, n)?;
                match lin.bias {
                    Some(b) => agg.add(ctx.param(b)),
                    None => Ok(agg),
                }
            }
            ConvLayer::Gat {
                weight,
                att_src,
                att_dst,
                ..
            } => {
                let wh = h.matmul(ctx.param(*weight))?;
                let s_src = wh.matmul(ctx.param(*att_src))?;
                let s_dst = wh.matmul(ctx.param(*att_dst))?;
                let scores = s_dst
                    .gather_rows(&topo.loop_dst)?
                    .add(s_src.gather_rows(&topo.loop_src)?)?
                    .leaky_relu(LEAKY_RELU_SLOPE)?;
                let alpha = scores.segment_softmax(&topo.loop_dst)?;
                wh.gather_rows(&topo.loop_src)?
                    .mul(alpha)?
                    .segment_reduce(ReduceKind::Sum, &topo.loop_dst, n)
            }
            ConvLayer::Gin { mlp } => {
                let agg = h
                    .gather_rows(&topo.src)?
                    .segment_reduce(ReduceKind::Sum, &topo.dst, n)?
                    .add(h)?;
                mlp.forward(ctx, agg)
            }
        }
    }
}
