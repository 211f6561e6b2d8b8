//! Pre-split molecular regression data.
//!
//! A ZINC directory holds `train.txt`, `val.txt` and `test.txt`, each in the
//! line format below. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! zinc-graphs v1
//! atom_vocab 28
//! graph nodes=3 edges=2 target=-0.40632
//! atoms 5 0 0
//! edge 0 1
//! edge 1 2
//! end
//! ```
//!
//! `atoms` lists the atom-type id of every node, each below `atom_vocab`.
//! Every undirected bond appears once as `edge u v` with 0-based node ids;
//! bond types are not stored. Targets are written in shortest round-trip
//! form, so they load bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Graph, Target};

pub const SPLIT_FILES: [&str; 3] = ["train.txt", "val.txt", "test.txt"];
const MAGIC: &str = "zinc-graphs v1";

struct Cursor<'a> {
    file: &'a Path,
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Cursor<'a> {
    fn new(file: &'a Path, text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Cursor { file, lines: it.peekable() }
    }

    fn err(&self, line: Option<usize>, msg: impl Into<String>) -> Error {
        Error::format(self.file, line, msg)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| Error::format(self.file, None, format!("unexpected end of file, expected {what}")))
    }

    /// Next line, which must start with `keyword`; returns the rest.
    fn expect(&mut self, keyword: &str) -> Result<(usize, &'a str)> {
        let (n, l) = self.next(keyword)?;
        match l.split_once(char::is_whitespace) {
            Some((k, rest)) if k == keyword => Ok((n, rest.trim())),
            None if l == keyword => Ok((n, "")),
            _ => Err(self.err(Some(n), format!("expected `{keyword}`, got `{l}`"))),
        }
    }
}

fn field<'a>(cur: &Cursor, line: usize, rest: &'a str, key: &str) -> Result<&'a str> {
    rest.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .ok_or_else(|| cur.err(Some(line), format!("missing `{key}=`")))
}

fn num<T: std::str::FromStr>(cur: &Cursor, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| cur.err(Some(line), format!("cannot parse `{s}`")))
}

/// Parses one split file; returns the atom vocabulary size and the graphs.
pub fn parse_zinc_file(path: impl AsRef<Path>) -> Result<(usize, Vec<Graph>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(path, &text);
    let (n, head) = cur.next("header")?;
    if head != MAGIC {
        return Err(cur.err(Some(n), format!("expected header `{MAGIC}`")));
    }
    let (n, v) = cur.expect("atom_vocab")?;
    let vocab: usize = num(&cur, n, v)?;
    if vocab == 0 {
        return Err(cur.err(Some(n), "atom_vocab must be positive"));
    }

    let mut graphs = Vec::new();
    while cur.lines.peek().is_some() {
        let (gl, rest) = cur.expect("graph")?;
        let nodes: usize = num(&cur, gl, field(&cur, gl, rest, "nodes")?)?;
        let n_edges: usize = num(&cur, gl, field(&cur, gl, rest, "edges")?)?;
        let target: f64 = num(&cur, gl, field(&cur, gl, rest, "target")?)?;

        let (al, atoms) = cur.expect("atoms")?;
        let atoms = atoms
            .split_whitespace()
            .map(|a| num::<usize>(&cur, al, a))
            .collect::<Result<Vec<_>>>()?;
        if atoms.len() != nodes {
            return Err(cur.err(Some(al), format!("{} atoms for {nodes} nodes", atoms.len())));
        }
        let mut data = vec![0.0; nodes * vocab];
        for (i, &a) in atoms.iter().enumerate() {
            if a >= vocab {
                return Err(cur.err(Some(al), format!("atom id {a} outside vocabulary of {vocab}")));
            }
            data[i * vocab + a] = 1.0;
        }

        let mut pairs = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let (el, e) = cur.expect("edge")?;
            let ends: Vec<&str> = e.split_whitespace().collect();
            let [u, v] = ends[..] else {
                return Err(cur.err(Some(el), format!("expected `edge u v`, got `edge {e}`")));
            };
            let (u, v): (usize, usize) = (num(&cur, el, u)?, num(&cur, el, v)?);
            if u >= nodes || v >= nodes {
                return Err(cur.err(Some(el), format!("edge ({u}, {v}) with {nodes} nodes")));
            }
            pairs.push((u, v));
        }
        cur.expect("end")?;
        let features = Tensor::matrix(nodes, vocab, data).map_err(|_| cur.err(Some(gl), "graph needs nodes"))?;
        graphs.push(Graph::undirected(features, &pairs, Target::Value(target)).map_err(|e| cur.err(Some(gl), e.to_string()))?);
    }
    Ok((vocab, graphs))
}

/// Loads the three predefined splits of a ZINC directory verbatim.
pub fn load_zinc_subset(dir: impl AsRef<Path>) -> Result<(Vec<Graph>, Vec<Graph>, Vec<Graph>)> {
    let dir = dir.as_ref();
    let mut parts = Vec::with_capacity(3);
    let mut vocab = None;
    for name in SPLIT_FILES {
        let p = dir.join(name);
        if !p.exists() {
            return Err(Error::format(&p, None, "split file is missing"));
        }
        let (v, graphs) = parse_zinc_file(&p)?;
        if *vocab.get_or_insert(v) != v {
            return Err(Error::format(&p, None, "atom_vocab differs between split files"));
        }
        parts.push(graphs);
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((train, val, test))
}

/// A regression dataset carrying the directory's fixed split.
pub fn load_zinc_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("ZINC")
        .to_owned();
    let (train, val, test) = load_zinc_subset(dir)?;
    Dataset::with_fixed_split(name, train, val, test)
}

/// Serializes graphs with one-hot atom features and scalar targets.
///
/// Each undirected bond is written once, from the `(u, v)` direction with `u < v`.
pub fn write_zinc_file(path: impl AsRef<Path>, graphs: &[Graph]) -> Result<()> {
    let path = path.as_ref();
    let vocab = graphs.first().map_or(1, Graph::feature_dim);
    let mut out = format!("{MAGIC}\natom_vocab {vocab}\n");
    for (gi, g) in graphs.iter().enumerate() {
        let target = g
            .target()
            .value()
            .ok_or_else(|| Error::Contract(format!("graph {gi} has no regression target")))?;
        if g.feature_dim() != vocab {
            return Err(Error::dim("write_zinc_file", format!("graph {gi} has width {}", g.feature_dim())));
        }
        let atoms = (0..g.num_nodes())
            .map(|i| {
                let row = g.features().row(i);
                match row.iter().position(|&x| x == 1.0) {
                    Some(a) if row.iter().filter(|&&x| x != 0.0).count() == 1 => Ok(a.to_string()),
                    _ => Err(Error::Contract(format!("graph {gi} node {i} is not one-hot"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if !g.is_symmetric() || g.edges().iter().any(|(u, v)| u == v) {
            return Err(Error::Contract(format!("graph {gi} must be undirected without self loops")));
        }
        let bonds: Vec<_> = g.edges().iter().filter(|(u, v)| u < v).collect();
        out.push_str(&format!("graph nodes={} edges={} target={target}\n", g.num_nodes(), bonds.len()));
        out.push_str(&format!("atoms {}\n", atoms.join(" ")));
        for (u, v) in bonds {
            out.push_str(&format!("edge {u} {v}\n"));
        }
        out.push_str("end\n");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `train.txt`, `val.txt` and `test.txt` into `dir`.
pub fn write_zinc_subset(dir: impl AsRef<Path>, train: &[Graph], val: &[Graph], test: &[Graph]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, gs) in SPLIT_FILES.iter().zip([train, val, test]) {
        write_zinc_file(dir.join(name), gs)?;
    }
    Ok(())
}
