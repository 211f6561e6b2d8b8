//! Reader and writer for the TUDataset text layout.
//!
//! A dataset `DS` lives in a directory holding:
//!
//! * `DS_A.txt`: one `row, col` pair per line, 1-indexed global node ids;
//! * `DS_graph_indicator.txt`: graph id (1-indexed) of node `i` on line `i`;
//! * `DS_graph_labels.txt`: one integer class per graph;
//! * optionally `DS_node_labels.txt` (one integer per node) and
//!   `DS_node_attributes.txt` (comma-separated reals per node).
//!
//! Node features are the one-hot node label followed by the raw attributes.
//! Without either file, nodes get a one-hot degree (clipped at
//! [`DEGREE_CAP`]) plus a constant channel.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Graph, Target};

pub const DEGREE_CAP: usize = 64;

/// How node features map back onto TUD files when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureLayout {
    /// Features were derived from degrees; no node files are written.
    Degree,
    /// The first `label_width` columns are a one-hot node label, the rest attributes.
    LabelsAndAttributes { label_width: usize },
}

struct TudFiles {
    name: String,
    dir: PathBuf,
}

impl TudFiles {
    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{}.txt", self.name, suffix))
    }

    fn read(&self, suffix: &str) -> Result<Option<(PathBuf, String)>> {
        let p = self.path(suffix);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some((p, text)))
    }

    fn require(&self, suffix: &str) -> Result<(PathBuf, String)> {
        self.read(suffix)?
            .ok_or_else(|| Error::format(self.path(suffix), None, "required file is missing"))
    }
}

fn dataset_name(dir: &Path) -> Result<String> {
    dir.file_name()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::format(dir, None, "cannot derive dataset name from directory"))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_int(file: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(file, Some(line), format!("expected an integer, got `{}`", s.trim())))
}

fn parse_ints(file: &Path, text: &str) -> Result<Vec<(usize, i64)>> {
    lines(text).map(|(n, l)| Ok((n, parse_int(file, n, l)?))).collect()
}

/// Maps sorted distinct values onto `0..k`.
fn contiguous(values: impl Iterator<Item = i64>) -> BTreeMap<i64, usize> {
    let mut map: BTreeMap<i64, usize> = values.map(|v| (v, 0)).collect();
    for (i, slot) in map.values_mut().enumerate() {
        *slot = i;
    }
    map
}

/// Parses a TUDataset directory; the dataset name is the directory name.
pub fn parse_tudataset(dir: impl AsRef<Path>) -> Result<Vec<Graph>> {
    let dir = dir.as_ref();
    let files = TudFiles {
        name: dataset_name(dir)?,
        dir: dir.to_path_buf(),
    };
    let (a_path, a_text) = files.require("A")?;
    let (ind_path, ind_text) = files.require("graph_indicator")?;
    let (gl_path, gl_text) = files.require("graph_labels")?;

    let graph_labels = parse_ints(&gl_path, &gl_text)?;
    let num_graphs = graph_labels.len();
    if num_graphs == 0 {
        return Err(Error::format(&gl_path, None, "no graphs"));
    }
    let class_of = contiguous(graph_labels.iter().map(|(_, v)| *v));

    // node -> (graph, local index)
    let indicator = parse_ints(&ind_path, &ind_text)?;
    let mut counts = vec![0usize; num_graphs];
    let mut placement = Vec::with_capacity(indicator.len());
    for &(line, g) in &indicator {
        if g < 1 || g as usize > num_graphs {
            return Err(Error::format(
                &ind_path,
                Some(line),
                format!("graph id {g} outside 1..={num_graphs}"),
            ));
        }
        let g = g as usize - 1;
        placement.push((g, counts[g]));
        counts[g] += 1;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::format(&ind_path, None, format!("graph {} has no nodes", g + 1)));
    }
    let num_nodes = placement.len();

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, l) in lines(&a_text) {
        let mut parts = l.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(&a_path, Some(line), format!("expected `u, v`, got `{l}`")));
        };
        let (u, v) = (parse_int(&a_path, line, u)?, parse_int(&a_path, line, v)?);
        for id in [u, v] {
            if id < 1 || id as usize > num_nodes {
                return Err(Error::format(
                    &a_path,
                    Some(line),
                    format!("node id {id} outside 1..={num_nodes}"),
                ));
            }
        }
        let ((gu, lu), (gv, lv)) = (placement[u as usize - 1], placement[v as usize - 1]);
        if gu != gv {
            return Err(Error::format(&a_path, Some(line), format!("edge ({u}, {v}) crosses graphs")));
        }
        edges[gu].push((lu, lv));
    }

    let node_labels = match files.read("node_labels")? {
        Some((p, text)) => {
            let labels = parse_ints(&p, &text)?;
            if labels.len() != num_nodes {
                return Err(Error::format(&p, None, format!("{} node labels for {num_nodes} nodes", labels.len())));
            }
            Some(labels.into_iter().map(|(_, v)| v).collect::<Vec<_>>())
        }
        None => None,
    };
    let attributes = match files.read("node_attributes")? {
        Some((p, text)) => {
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(num_nodes);
            for (line, l) in lines(&text) {
                let row = l
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::format(&p, Some(line), format!("expected a real, got `{}`", s.trim())))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(Error::format(&p, Some(line), "attribute width changes"));
                    }
                }
                rows.push(row);
            }
            if rows.len() != num_nodes {
                return Err(Error::format(&p, None, format!("{} attribute rows for {num_nodes} nodes", rows.len())));
            }
            Some(rows)
        }
        None => None,
    };

    let label_map = node_labels.as_ref().map(|l| contiguous(l.iter().copied()));
    let label_width = label_map.as_ref().map_or(0, BTreeMap::len);
    let attr_width = attributes.as_ref().map_or(0, |a| a.first().map_or(0, Vec::len));
    let use_degree = node_labels.is_none() && attributes.is_none();
    let width = if use_degree { DEGREE_CAP + 2 } else { label_width + attr_width };

    let mut feats: Vec<Vec<f64>> = counts.iter().map(|&c| vec![0.0; c * width]).collect();
    if !use_degree {
        for (node, &(g, local)) in placement.iter().enumerate() {
            let row = &mut feats[g][local * width..(local + 1) * width];
            if let (Some(labels), Some(map)) = (&node_labels, &label_map) {
                row[map[&labels[node]]] = 1.0;
            }
            if let Some(attrs) = &attributes {
                row[label_width..].copy_from_slice(&attrs[node]);
            }
        }
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, ((_, label), edges)) in graph_labels.iter().zip(edges).enumerate() {
        let n = counts[g];
        let mut data = std::mem::take(&mut feats[g]);
        if use_degree {
            let mut deg = vec![0usize; n];
            for &(u, _) in &edges {
                deg[u] += 1;
            }
            for (i, d) in deg.into_iter().enumerate() {
                data[i * width + d.min(DEGREE_CAP)] = 1.0;
                data[i * width + DEGREE_CAP + 1] = 1.0;
            }
        }
        let features = Tensor::matrix(n, width, data)?;
        graphs.push(Graph::new(features, edges, Target::Class(class_of[label]))?);
    }
    Ok(graphs)
}

/// Parses a TUD directory into a [`Dataset`] named after the directory.
pub fn load_tudataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    Dataset::new(dataset_name(dir)?, parse_tudataset(dir)?)
}

/// Writes graphs in TUD layout into `dir/name_*.txt`.
pub fn write_tudataset(dir: impl AsRef<Path>, name: &str, graphs: &[Graph], layout: FeatureLayout) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let mut a = String::new();
    let mut ind = String::new();
    let mut gl = String::new();
    let mut nl = String::new();
    let mut na = String::new();
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        let label = g
            .target()
            .class()
            .ok_or_else(|| Error::Contract("TUD graph labels must be classes".into()))?;
        gl.push_str(&format!("{label}\n"));
        for &(u, v) in g.edges() {
            a.push_str(&format!("{}, {}\n", u + offset + 1, v + offset + 1));
        }
        for i in 0..g.num_nodes() {
            ind.push_str(&format!("{}\n", gi + 1));
            if let FeatureLayout::LabelsAndAttributes { label_width } = layout {
                let row = g.features().row(i);
                if label_width > 0 {
                    let (k, _) = row[..label_width]
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
                    nl.push_str(&format!("{k}\n"));
                }
                if row.len() > label_width {
                    let attrs: Vec<String> = row[label_width..].iter().map(|v| v.to_string()).collect();
                    na.push_str(&attrs.join(", "));
                    na.push('\n');
                }
            }
        }
        offset += g.num_nodes();
    }
    let mut outputs = vec![("A", a), ("graph_indicator", ind), ("graph_labels", gl)];
    if !nl.is_empty() {
        outputs.push(("node_labels", nl));
    }
    if !na.is_empty() {
        outputs.push(("node_attributes", na));
    }
    for (suffix, text) in outputs {
        let p = path(suffix);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
