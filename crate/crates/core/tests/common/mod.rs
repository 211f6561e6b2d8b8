#![allow(dead_code)]

use graphout::graph::{Graph, GraphBatch, NodePermutation, Target};
use graphout::model::{GraphModel, ModelSpec};
use graphout::rng::{stream, Rng, Stream};
use graphout::tensor::{Tape, Tensor};
use rand::Rng as _;

/// Undirected simple graph with `n_lo..=n_hi` nodes, edge probability `p`
/// and uniform features in `[-1, 1)`.
pub fn random_graph(rng: &mut Rng, n_lo: usize, n_hi: usize, d: usize, p: f64, target: Target) -> Graph {
    let n = rng.random_range(n_lo..=n_hi);
    let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                pairs.push((u, v));
            }
        }
    }
    Graph::undirected(x, &pairs, target).unwrap()
}

pub fn random_graphs(seed: u64, count: usize, n_hi: usize, d: usize) -> Vec<Graph> {
    let mut rng = stream(seed, Stream::Data);
    (0..count)
        .map(|i| random_graph(&mut rng, 1, n_hi, d, 0.35, Target::Class(i % 2)))
        .collect()
}

pub type Mat = Vec<Vec<f64>>;

pub fn rows(t: &Tensor) -> Mat {
    t.to_rows()
}

/// `a[v][u]` counts edges `u -> v`.
pub fn in_adjacency(g: &Graph) -> Mat {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in g.edges() {
        a[v][u] += 1.0;
    }
    a
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let k = b.len();
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| (0..k).map(|i| row[i] * b[i][j]).sum())
                .collect()
        })
        .collect()
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn relu(a: &Mat) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// `D^-1/2 (A + I) D^-1/2 X W + b`.
pub fn gcn_oracle(g: &Graph, x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    let mut a = in_adjacency(g);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let n = a.len();
    let norm: Mat = (0..n)
        .map(|v| (0..n).map(|u| a[v][u] / (deg[v] * deg[u]).sqrt()).collect())
        .collect();
    add_bias(&matmul(&norm, &matmul(x, w)), b)
}

/// Single-head attention over in-neighbours plus self.
pub fn gat_oracle(g: &Graph, x: &Mat, w: &Mat, att_src: &[f64], att_dst: &[f64]) -> Mat {
    let mut a = in_adjacency(g);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let wh = matmul(x, w);
    let dot = |r: &[f64], a: &[f64]| r.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
    let leaky = |z: f64| if z > 0.0 { z } else { 0.2 * z };
    let n = a.len();
    (0..n)
        .map(|v| {
            let scores: Vec<(usize, f64)> = (0..n)
                .filter(|&u| a[v][u] > 0.0)
                .map(|u| (u, leaky(dot(&wh[v], att_dst) + dot(&wh[u], att_src))))
                .collect();
            let m = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| a[v][s.0] * (s.1 - m).exp()).sum();
            let mut out = vec![0.0; wh[0].len()];
            for &(u, s) in &scores {
                let alpha = a[v][u] * (s - m).exp() / z;
                for (o, h) in out.iter_mut().zip(&wh[u]) {
                    *o += alpha * h;
                }
            }
            out
        })
        .collect()
}

/// `MLP((A + I) X)` with a two-layer ReLU MLP.
pub fn gin_oracle(g: &Graph, x: &Mat, w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64]) -> Mat {
    let mut a = in_adjacency(g);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let hidden = relu(&add_bias(&matmul(&matmul(&a, x), w1), b1));
    add_bias(&matmul(&hidden, w2), b2)
}

/// Training-mode loss with dropout masks drawn from a fixed seed.
pub fn model_loss(model: &GraphModel, batch: &GraphBatch, dropout_seed: u64) -> f64 {
    let tape = Tape::new();
    let out = model.forward(&tape, batch, true, stream(dropout_seed, Stream::Dropout)).unwrap();
    model.loss(out, batch).unwrap().value().data()[0]
}

/// Largest relative gap between analytic and central-difference gradients,
/// over up to `per_tensor` coordinates of every trainable tensor. The
/// denominator is floored at `floor`, so near-zero gradients are compared
/// absolutely.
pub fn model_gradcheck(model: &GraphModel, batch: &GraphBatch, dropout_seed: u64, per_tensor: usize, floor: f64) -> (f64, String) {
    let tape = Tape::new();
    let out = model.forward(&tape, batch, true, stream(dropout_seed, Stream::Dropout)).unwrap();
    let loss = model.loss(out, batch).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut pick = stream(dropout_seed, Stream::Data);
    let mut probe = model.clone();
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = model.store().iter().filter(|(_, p)| p.trainable).map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let analytic = grads.param(id).unwrap_or_else(|| Tensor::zeros(model.store().value(id).shape().to_vec()));
        let n = analytic.numel();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        for i in coords {
            let base = model.store().value(id).data()[i];
            probe.store_mut().value_mut(id).data_mut()[i] = base + h;
            let plus = model_loss(&probe, batch, dropout_seed);
            probe.store_mut().value_mut(id).data_mut()[i] = base - h;
            let minus = model_loss(&probe, batch, dropout_seed);
            probe.store_mut().value_mut(id).data_mut()[i] = base;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / scale;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    worst
}

pub fn build_model(spec: ModelSpec, seed: u64) -> GraphModel {
    GraphModel::new(spec, &mut stream(seed, Stream::Init)).unwrap()
}

/// Largest eval-mode output change over `relabelings` random node
/// permutations of `g`, applied after the model's own graph preparation.
pub fn relabeling_gap(model: &GraphModel, g: &Graph, relabelings: usize, rng: &mut Rng) -> f64 {
    let g = model.prepare(std::slice::from_ref(g)).remove(0);
    let base = model.predict(&GraphBatch::new([&g]).unwrap()).unwrap();
    (0..relabelings)
        .map(|_| {
            let perm = NodePermutation::random(g.num_nodes(), rng);
            let moved = g.permute(&perm).unwrap();
            model.predict(&GraphBatch::new([&moved]).unwrap()).unwrap().max_abs_diff(&base)
        })
        .fold(0.0, f64::max)
}
