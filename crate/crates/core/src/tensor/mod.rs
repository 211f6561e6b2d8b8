//! Dense row-major `f64` tensors and a reverse-mode autodiff tape.
//!
//! [`Tensor`] is a plain value. Differentiable computation happens on a
//! [`Tape`]: inputs are placed on it as leaves (constants, free variables or
//! [`Parameter`]s from a [`ParamStore`]), every operation appends a node, and
//! [`Tape::backward`] replays the recorded rules in reverse.

mod gemm;
mod param;
mod tape;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{BatchNormStats, BinaryKind, ElementwiseOp, Gradients, ReduceKind, Tape, UnaryKind, Var};

use crate::error::{Error, Result};

pub(crate) use gemm::gemm;

/// Normalization epsilon used by batch norm.
pub const BATCH_NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum used by batch norm.
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
/// Default negative slope of `LeakyReLU`.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new([rows, cols], data)
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a `0×0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(
                    "Tensor::from_rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading extent; 1 for scalars.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing extents; 1 for scalars and vectors.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(
                "Tensor::reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Selects rows by index; `None` yields a zero row.
    pub fn select_rows(&self, index: &[Option<usize>]) -> Tensor {
        let c = self.cols();
        let mut data = vec![0.0; index.len() * c];
        for (dst, src) in index.iter().enumerate() {
            if let Some(s) = src {
                data[dst * c..(dst + 1) * c].copy_from_slice(self.row(*s));
            }
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(index.len());
        } else {
            shape[0] = index.len();
        }
        Tensor { shape, data }
    }

    /// Largest absolute elementwise difference. Shapes must agree in size.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.numel(), other.numel(), "max_abs_diff size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Plain matrix product without recording anything.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.data, false, &other.data, false, &mut out, 0.0);
        Tensor::matrix(n, m, out)
    }
}
