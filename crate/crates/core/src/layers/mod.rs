//! Parameterized building blocks and the message-passing encoder.

mod conv;
mod encoder;

use std::cell::RefCell;

use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{BatchNormStats, ParamId, ParamStore, Tape, Tensor, Var};

pub use conv::{ConvKind, ConvLayer};
pub use encoder::GnnEncoder;

/// Everything a forward pass needs besides the module itself.
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParamStore,
    pub training: bool,
    rng: RefCell<Rng>,
}

impl<'t, 's> Ctx<'t, 's> {
    /// `rng` drives dropout masks in training mode.
    pub fn new(tape: &'t Tape, store: &'s ParamStore, training: bool, rng: Rng) -> Self {
        Ctx {
            tape,
            store,
            training,
            rng: RefCell::new(rng),
        }
    }

    pub fn eval(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self::new(tape, store, false, crate::rng::stream(0, crate::rng::Stream::Dropout))
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }

    pub fn dropout(&self, x: Var<'t>, p: f64) -> Result<Var<'t>> {
        x.dropout(p, self.training, &mut *self.rng.borrow_mut())
    }
}

/// `shape` drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), uniform_init([in_dim, out_dim], in_dim, rng))?;
        let bias = if bias {
            Some(store.register(format!("{name}.bias"), uniform_init([out_dim], in_dim, rng))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Square map starting at the identity with zero bias.
    pub fn identity(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), Tensor::identity(dim))?;
        let bias = Some(store.register(format!("{name}.bias"), Tensor::zeros([dim]))?);
        Ok(Linear {
            weight,
            bias,
            in_dim: dim,
            out_dim: dim,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(ctx.param(self.weight))?;
        match self.bias {
            Some(b) => y.add(ctx.param(b)),
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

/// Row-wise batch normalization with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: RefCell<BatchNormStats>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.register(format!("{name}.gamma"), Tensor::full([dim], 1.0))?,
            beta: store.register(format!("{name}.beta"), Tensor::zeros([dim]))?,
            stats: RefCell::new(BatchNormStats::new(dim)),
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.batch_norm(
            ctx.param(self.gamma),
            ctx.param(self.beta),
            &mut self.stats.borrow_mut(),
            ctx.training,
        )
    }
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut Rng) -> Result<Self> {
        Ok(Mlp2 {
            first: Linear::new(store, &format!("{name}.0"), dims[0], dims[1], true, rng)?,
            second: Linear::new(store, &format!("{name}.1"), dims[1], dims[2], true, rng)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.first.forward(ctx, x)?.relu()?;
        self.second.forward(ctx, h)
    }
}
