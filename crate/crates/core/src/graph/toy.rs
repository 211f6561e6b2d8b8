//! A tiny, linearly separable sanity dataset.
//!
//! Class 0 graphs are two disjoint cliques, class 1 graphs two disjoint
//! paths with the same component sizes. Every node carries the constant
//! feature `1`, so only structure separates the classes.

use crate::error::Result;
use crate::tensor::Tensor;

use super::{Dataset, DatasetSplit, Graph, Target};

pub const TOY_SIZE: usize = 20;

fn clique(n: usize, off: usize, pairs: &mut Vec<(usize, usize)>) {
    for u in 0..n {
        for v in u + 1..n {
            pairs.push((off + u, off + v));
        }
    }
}

fn path(n: usize, off: usize, pairs: &mut Vec<(usize, usize)>) {
    pairs.extend((1..n).map(|i| (off + i - 1, off + i)));
}

fn two_components(a: usize, b: usize, part: fn(usize, usize, &mut Vec<(usize, usize)>), label: usize) -> Graph {
    let mut pairs = Vec::new();
    part(a, 0, &mut pairs);
    part(b, a, &mut pairs);
    Graph::undirected(Tensor::full([a + b, 1], 1.0), &pairs, Target::Class(label)).expect("toy graph")
}

/// The 20 graphs: indices `0..10` are class 0, `10..20` class 1.
pub fn toy_graphs() -> Vec<Graph> {
    let sizes = |i: usize| (3 + i % 3, 3 + (i / 3) % 3);
    let cliques = (0..10).map(|i| two_components(sizes(i).0, sizes(i).1, clique, 0));
    let paths = (0..10).map(|i| two_components(sizes(i).0, sizes(i).1, path, 1));
    cliques.chain(paths).collect()
}

/// Fixed 16/2/2 split with one graph of each class in validation and test.
pub fn toy_split() -> DatasetSplit {
    DatasetSplit {
        train: (0..8).chain(10..18).collect(),
        val: vec![8, 18],
        test: vec![9, 19],
    }
}

pub fn toy_dataset() -> Result<Dataset> {
    let mut ds = Dataset::new("toy", toy_graphs())?;
    ds.set_fixed_split(toy_split());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Task;

    fn degree_histogram(g: &Graph) -> Vec<f64> {
        let mut h = vec![0.0; 6];
        for d in g.degrees() {
            h[d.min(5)] += 1.0 / g.num_nodes() as f64;
        }
        h.push(1.0);
        h
    }

    #[test]
    fn shape_of_the_dataset() {
        let ds = toy_dataset().unwrap();
        assert_eq!(ds.len(), TOY_SIZE);
        assert_eq!(ds.task(), Task::Binary);
        assert_eq!(ds.feature_dim(), 1);
        assert!(ds.graphs().iter().all(Graph::is_symmetric));
        let s = ds.split_for(123).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 2, 2));
        assert_eq!(s, ds.split_for(7).unwrap());
    }

    #[test]
    fn logistic_regression_on_degree_histogram_separates() {
        let gs = toy_graphs();
        let xs: Vec<Vec<f64>> = gs.iter().map(degree_histogram).collect();
        let ys: Vec<f64> = gs.iter().map(|g| g.target().class().unwrap() as f64).collect();
        let mut w = vec![0.0; xs[0].len()];
        for _ in 0..2000 {
            let mut grad = vec![0.0; w.len()];
            for (x, y) in xs.iter().zip(&ys) {
                let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-z).exp());
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += (p - y) * xi;
                }
            }
            for (wi, g) in w.iter_mut().zip(grad) {
                *wi -= 0.5 * g;
            }
        }
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert_eq!((z > 0.0) as u8 as f64, *y);
        }
    }
}
