//! Graphs, minibatches, node relabelings and dataset ingestion.

mod batch;
mod dataset;
mod split;
pub mod toy;
pub mod tud;
pub mod zinc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use batch::{batch, unbatch, GraphBatch, Topology};
pub use dataset::{Dataset, Task};
pub use split::{make_split, DatasetSplit, DEFAULT_PROPORTIONS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(c),
            Target::Value(_) => None,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Target::Value(v) => Some(v),
            Target::Class(_) => None,
        }
    }
}

/// An unweighted graph with dense node features.
///
/// Edges are ordered pairs `(source, target)`; undirected graphs carry both
/// directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    target: Target,
    virtual_node: Option<usize>,
}

impl Graph {
    pub fn new(features: Tensor, edges: Vec<(usize, usize)>, target: Target) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::dim("Graph::new", format!("features must be a matrix, got {:?}", features.shape())));
        }
        let n = features.rows();
        if n == 0 {
            return Err(Error::Contract("a graph needs at least one node".into()));
        }
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= n || *v >= n) {
            return Err(Error::index("Graph::new", format!("edge ({u}, {v}) with {n} nodes")));
        }
        Ok(Graph {
            features,
            edges,
            target,
            virtual_node: None,
        })
    }

    /// Builds an undirected graph, storing each listed pair in both directions.
    pub fn undirected(features: Tensor, pairs: &[(usize, usize)], target: Target) -> Result<Self> {
        let edges = pairs.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        Self::new(features, edges, target)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn virtual_node(&self) -> Option<usize> {
        self.virtual_node
    }

    /// Out-degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(u, _) in &self.edges {
            deg[u] += 1;
        }
        deg
    }

    pub fn is_symmetric(&self) -> bool {
        let mut fwd: Vec<_> = self.edges.clone();
        let mut rev: Vec<_> = self.edges.iter().map(|&(u, v)| (v, u)).collect();
        fwd.sort_unstable();
        rev.sort_unstable();
        fwd == rev
    }

    /// Relabels nodes: node `i` becomes node `perm.apply(i)`.
    pub fn permute(&self, perm: &NodePermutation) -> Result<Graph> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::Contract(format!(
                "permutation of {} nodes applied to a graph with {n}",
                perm.len()
            )));
        }
        let inv = perm.inverse();
        let index: Vec<Option<usize>> = (0..n).map(|new| Some(inv.apply(new))).collect();
        Ok(Graph {
            features: self.features.select_rows(&index),
            edges: self.edges.iter().map(|&(u, v)| (perm.apply(u), perm.apply(v))).collect(),
            target: self.target,
            virtual_node: self.virtual_node.map(|v| perm.apply(v)),
        })
    }

    /// Appends a zero-feature node linked in both directions to every other
    /// node and records its index.
    pub fn add_virtual_node(&self) -> Graph {
        let n = self.num_nodes();
        let d = self.feature_dim();
        let mut data = self.features.data().to_vec();
        data.extend(std::iter::repeat_n(0.0, d));
        let mut edges = self.edges.clone();
        for i in 0..n {
            edges.push((n, i));
            edges.push((i, n));
        }
        Graph {
            features: Tensor::matrix(n + 1, d, data).expect("feature shape"),
            edges,
            target: self.target,
            virtual_node: Some(n),
        }
    }

    pub(crate) fn with_virtual_node(mut self, v: Option<usize>) -> Self {
        self.virtual_node = v;
        self
    }
}

/// A bijection on node ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePermutation {
    perm: Vec<usize>,
}

impl NodePermutation {
    /// `perm[i]` is the new id of node `i`.
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Contract(format!("{perm:?} is not a bijection")));
            }
        }
        Ok(NodePermutation { perm })
    }

    pub fn identity(n: usize) -> Self {
        NodePermutation { perm: (0..n).collect() }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        NodePermutation { perm }
    }

    /// Random relabeling that keeps the ids in `fixed` in place.
    pub fn random_fixing<R: Rng + ?Sized>(n: usize, fixed: &[usize], rng: &mut R) -> Self {
        let mut free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
        let mut shuffled = free.clone();
        shuffled.shuffle(rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for (from, to) in free.drain(..).zip(shuffled) {
            perm[from] = to;
        }
        NodePermutation { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> NodePermutation {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        NodePermutation { perm: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}
