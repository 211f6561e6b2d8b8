use crate::error::{Error, Result};
use crate::rng::{self, Stream};

use super::{make_split, DatasetSplit, Graph, Target, DEFAULT_PROPORTIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Binary,
    MultiClass(usize),
    Regression,
}

impl Task {
    /// Width of the prediction head output.
    pub fn output_dim(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::MultiClass(c) => c,
            Task::Regression => 1,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Binary => "f1",
            Task::MultiClass(_) => "macro_f1",
            Task::Regression => "r2",
        }
    }
}

/// A named collection of graphs with an optional predefined split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    graphs: Vec<Graph>,
    task: Task,
    fixed_split: Option<DatasetSplit>,
}

impl Dataset {
    /// Infers the task from the targets: real values mean regression,
    /// otherwise the class count is the largest label plus one.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Config("dataset has no graphs".into()))?;
        let d = first.feature_dim();
        if graphs.iter().any(|g| g.feature_dim() != d) {
            return Err(Error::dim("Dataset::new", "graphs disagree on feature width"));
        }
        let task = match first.target() {
            Target::Value(_) => {
                if graphs.iter().any(|g| g.target().value().is_none()) {
                    return Err(Error::Config("mixed class and regression targets".into()));
                }
                Task::Regression
            }
            Target::Class(_) => {
                let labels: Option<Vec<usize>> = graphs.iter().map(|g| g.target().class()).collect();
                let labels = labels.ok_or_else(|| Error::Config("mixed class and regression targets".into()))?;
                match labels.iter().max().unwrap() + 1 {
                    0..=2 => Task::Binary,
                    c => Task::MultiClass(c),
                }
            }
        };
        Ok(Dataset {
            name: name.into(),
            graphs,
            task,
            fixed_split: None,
        })
    }

    /// Joins predefined train/val/test lists; the split is kept verbatim.
    pub fn with_fixed_split(name: impl Into<String>, train: Vec<Graph>, val: Vec<Graph>, test: Vec<Graph>) -> Result<Self> {
        let (a, b) = (train.len(), val.len());
        let split = DatasetSplit {
            train: (0..a).collect(),
            val: (a..a + b).collect(),
            test: (a + b..a + b + test.len()).collect(),
        };
        let mut graphs = train;
        graphs.extend(val);
        graphs.extend(test);
        let mut ds = Self::new(name, graphs)?;
        ds.fixed_split = Some(split);
        Ok(ds)
    }

    pub fn set_fixed_split(&mut self, split: DatasetSplit) {
        self.fixed_split = Some(split);
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).max().unwrap_or(0)
    }

    pub fn has_fixed_split(&self) -> bool {
        self.fixed_split.is_some()
    }

    /// The predefined split, or a fresh 80/10/10 split drawn from `seed`.
    pub fn split_for(&self, seed: u64) -> Result<DatasetSplit> {
        match &self.fixed_split {
            Some(s) => Ok(s.clone()),
            None => make_split(self.len(), DEFAULT_PROPORTIONS, &mut rng::stream(seed, Stream::Split)),
        }
    }

    pub fn mean_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / self.len() as f64
    }

    pub fn mean_edges(&self) -> f64 {
        self.graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / self.len() as f64
    }
}
