use std::sync::Arc;

use crate::error::Result;
use crate::graph::GraphBatch;
use crate::layers::{uniform_init, Ctx};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tensor, Var};

/// Input and recurrent maps of one gate.
#[derive(Clone, Debug)]
struct Gate {
    w_in: ParamId,
    b_in: ParamId,
    w_hid: ParamId,
    b_hid: ParamId,
}

impl Gate {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Gate {
            w_in: store.register(format!("{name}.w_in"), uniform_init([d_in, hidden], d_in, rng))?,
            b_in: store.register(format!("{name}.b_in"), uniform_init([hidden], d_in, rng))?,
            w_hid: store.register(format!("{name}.w_hid"), uniform_init([hidden, hidden], hidden, rng))?,
            b_hid: store.register(format!("{name}.b_hid"), uniform_init([hidden], hidden, rng))?,
        })
    }

    fn input<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(ctx.param(self.w_in))?.add(ctx.param(self.b_in))
    }

    fn hidden<'t>(&self, ctx: &Ctx<'t, '_>, h: Var<'t>) -> Result<Var<'t>> {
        h.matmul(ctx.param(self.w_hid))?.add(ctx.param(self.b_hid))
    }
}

/// Single-layer GRU run over each graph's nodes in stored order from a zero
/// state; the last hidden state is the graph representation.
///
/// `r = σ(x W_ir + b_ir + h W_hr + b_hr)`, `z` likewise,
/// `n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Clone, Debug)]
pub struct Gru {
    reset: Gate,
    update: Gate,
    candidate: Gate,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Gru {
            reset: Gate::new(store, &format!("{name}.reset"), d_in, hidden, rng)?,
            update: Gate::new(store, &format!("{name}.update"), d_in, hidden, rng)?,
            candidate: Gate::new(store, &format!("{name}.candidate"), d_in, hidden, rng)?,
            hidden,
        })
    }

    pub fn step<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let r = self.reset.input(ctx, x)?.add(self.reset.hidden(ctx, h)?)?.sigmoid()?;
        let z = self.update.input(ctx, x)?.add(self.update.hidden(ctx, h)?)?.sigmoid()?;
        let n = self
            .candidate
            .input(ctx, x)?
            .add(self.candidate.hidden(ctx, h)?.mul(r)?)?
            .tanh()?;
        // (1 - z) n + z h == n + z (h - n)
        n.add(z.mul(h.sub(n)?)?)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, nodes: Var<'t>, batch: &GraphBatch) -> Result<Var<'t>> {
        let g = batch.num_graphs();
        let mut h = ctx.tape.constant(Tensor::zeros([g, self.hidden]));
        for t in 0..batch.max_node_count() {
            let index: Arc<[Option<usize>]> = (0..g)
                .map(|i| {
                    let r = batch.node_range(i);
                    (t < r.len()).then(|| r.start + t)
                })
                .collect();
            let x = nodes.gather_rows_padded(&index)?;
            let next = self.step(ctx, x, h)?;
            h = if index.iter().all(Option::is_some) {
                next
            } else {
                // graphs already consumed keep their state
                let mask = index.iter().map(|i| i.is_some() as u8 as f64).collect();
                let mask = ctx.tape.constant(Tensor::matrix(g, 1, mask)?);
                h.add(next.sub(h)?.mul(mask)?)?
            };
        }
        Ok(h)
    }
}
