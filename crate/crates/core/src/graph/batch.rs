use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, Target};

/// Edge lists and normalization constants shared by the convolution layers.
#[derive(Clone, Debug)]
pub struct Topology {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `src` followed by one self loop per node.
    pub loop_src: Arc<[usize]>,
    pub loop_dst: Arc<[usize]>,
    /// `1/sqrt(deg(u) deg(v))` per self-looped edge, degrees counting the loop; `[E', 1]`.
    pub gcn_norm: Tensor,
}

impl Topology {
    fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let mut loop_src = src.clone();
        let mut loop_dst = dst.clone();
        loop_src.extend(0..num_nodes);
        loop_dst.extend(0..num_nodes);
        let mut deg = vec![0.0f64; num_nodes];
        for &v in &loop_dst {
            deg[v] += 1.0;
        }
        let norm = loop_src
            .iter()
            .zip(&loop_dst)
            .map(|(&u, &v)| 1.0 / (deg[u] * deg[v]).sqrt())
            .collect::<Vec<_>>();
        let e = norm.len();
        Topology {
            src: src.into(),
            dst: dst.into(),
            loop_src: loop_src.into(),
            loop_dst: loop_dst.into(),
            gcn_norm: Tensor::matrix(e, 1, norm).expect("norm shape"),
        }
    }
}

/// Several graphs stacked into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    graph_ids: Arc<[usize]>,
    targets: Vec<Target>,
    node_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    virtual_nodes: Option<Vec<usize>>,
    topology: Topology,
}

pub fn batch(graphs: &[Graph]) -> Result<GraphBatch> {
    GraphBatch::new(graphs.iter())
}

pub fn unbatch(b: &GraphBatch) -> Vec<Graph> {
    b.unbatch()
}

impl GraphBatch {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> Result<Self> {
        let graphs: Vec<&Graph> = graphs.into_iter().collect();
        let first = graphs.first().ok_or(Error::EmptyBatch("batch"))?;
        let d = first.feature_dim();
        let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut data = Vec::with_capacity(total_nodes * d);
        let mut edges = Vec::new();
        let mut graph_ids = Vec::with_capacity(total_nodes);
        let mut node_offsets = vec![0];
        let mut edge_offsets = vec![0];
        let mut virtual_nodes = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d {
                return Err(Error::dim(
                    "batch",
                    format!("graph {gi} has feature width {}, expected {d}", g.feature_dim()),
                ));
            }
            let off = *node_offsets.last().unwrap();
            data.extend_from_slice(g.features().data());
            edges.extend(g.edges().iter().map(|&(u, v)| (u + off, v + off)));
            graph_ids.extend(std::iter::repeat_n(gi, g.num_nodes()));
            if let Some(v) = g.virtual_node() {
                virtual_nodes.push(v + off);
            }
            node_offsets.push(off + g.num_nodes());
            edge_offsets.push(edges.len());
        }
        let virtual_nodes = match virtual_nodes.len() {
            0 => None,
            n if n == graphs.len() => Some(virtual_nodes),
            _ => {
                return Err(Error::Contract(
                    "either all or none of the batched graphs must carry a virtual node".into(),
                ))
            }
        };
        let topology = Topology::new(total_nodes, &edges);
        Ok(GraphBatch {
            features: Tensor::matrix(total_nodes, d, data)?,
            edges,
            graph_ids: graph_ids.into(),
            targets: graphs.iter().map(|g| g.target()).collect(),
            node_offsets,
            edge_offsets,
            virtual_nodes,
            topology,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn graph_ids(&self) -> &Arc<[usize]> {
        &self.graph_ids
    }

    pub fn num_graphs(&self) -> usize {
        self.targets.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.targets.iter().map(|t| t.class()).collect()
    }

    pub fn values(&self) -> Option<Vec<f64>> {
        self.targets.iter().map(|t| t.value()).collect()
    }

    /// Node range of graph `g` within the batch.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    pub fn node_count(&self, g: usize) -> usize {
        self.node_offsets[g + 1] - self.node_offsets[g]
    }

    pub fn max_node_count(&self) -> usize {
        (0..self.num_graphs()).map(|g| self.node_count(g)).max().unwrap_or(0)
    }

    /// Batch-level index of each graph's virtual node, if every graph has one.
    pub fn virtual_nodes(&self) -> Option<&[usize]> {
        self.virtual_nodes.as_deref()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn unbatch(&self) -> Vec<Graph> {
        (0..self.num_graphs())
            .map(|g| {
                let nodes = self.node_range(g);
                let off = nodes.start;
                let index: Vec<Option<usize>> = nodes.clone().map(Some).collect();
                let edges = self.edges[self.edge_offsets[g]..self.edge_offsets[g + 1]]
                    .iter()
                    .map(|&(u, v)| (u - off, v - off))
                    .collect();
                let vn = self.virtual_nodes.as_ref().map(|v| v[g] - off);
                Graph::new(self.features.select_rows(&index), edges, self.targets[g])
                    .expect("batched graphs were valid")
                    .with_virtual_node(vn)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn graph(n: usize, pairs: &[(usize, usize)], label: usize) -> Graph {
        let x = Tensor::matrix(n, 1, (0..n).map(|i| (i + label) as f64).collect()).unwrap();
        Graph::undirected(x, pairs, Target::Class(label)).unwrap()
    }

    #[test]
    fn ids_and_offsets() {
        let gs = vec![graph(2, &[(0, 1)], 0), graph(3, &[(0, 1), (1, 2)], 1)];
        let b = batch(&gs).unwrap();
        assert_eq!(&b.graph_ids()[..], &[0, 0, 1, 1, 1]);
        assert!(b.edges().contains(&(2, 3)));
        assert_eq!(unbatch(&b), gs);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let a = graph(2, &[], 0);
        let b = Graph::new(Tensor::zeros([2, 3]), vec![], Target::Class(0)).unwrap();
        assert!(matches!(batch(&[a, b]), Err(Error::Dimension { .. })));
        assert!(matches!(batch(&[]), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn gcn_norm_on_single_edge() {
        let b = batch(&[graph(2, &[(0, 1)], 0)]).unwrap();
        // both nodes have degree 2 including the self loop
        assert!(b.topology().gcn_norm.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn virtual_nodes_must_be_all_or_none() {
        let a = graph(2, &[(0, 1)], 0).add_virtual_node();
        let b = graph(3, &[], 0);
        assert!(matches!(batch(&[a.clone(), b]), Err(Error::Contract(_))));
        let both = batch(&[a.clone(), a]).unwrap();
        assert_eq!(both.virtual_nodes(), Some(&[2, 5][..]));
    }

    proptest! {
        #[test]
        fn batch_roundtrip(sizes in prop::collection::vec((1usize..8, any::<u64>()), 1..6)) {
            let gs: Vec<Graph> = sizes
                .iter()
                .enumerate()
                .map(|(i, &(n, bits))| {
                    let pairs: Vec<_> = (1..n).filter(|k| bits >> k & 1 == 1).map(|k| (k - 1, k)).collect();
                    graph(n, &pairs, i % 3)
                })
                .collect();
            let b = batch(&gs).unwrap();
            let ids = b.graph_ids();
            prop_assert!(ids.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(b.edges().iter().all(|&(u, v)| ids[u] == ids[v]));
            prop_assert_eq!(unbatch(&b), gs);
        }
    }
}
