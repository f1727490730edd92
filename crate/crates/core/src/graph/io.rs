//! Graph bundle directories.
//!
//! A bundle holds whitespace-separated text files:
//!
//! * `edges.tsv`: one `u v` pair of 0-based node ids per line;
//! * `features.tsv`: `node idx:val idx:val ...` (sparse row encoding);
//! * `labels.tsv` (optional): `node class`;
//! * `splits.tsv` (optional): `node train|val|test`.
//!
//! Blank lines and lines starting with `#` are ignored, except that
//! `features.tsv` may declare its dimensions with a `# shape <n> <F>` line.
//! Without it, `n` and `F` are inferred from the largest ids present.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Adjacency, SparseGraph, Split};
use crate::dense::DenseMat;
use crate::error::{Error, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

struct Lines {
    path: PathBuf,
    text: String,
}

impl Lines {
    fn read(path: PathBuf) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, text })
    }

    fn read_optional(path: PathBuf) -> Result<Option<Self>> {
        if path.exists() {
            Self::read(path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Non-comment, non-blank lines with 1-based line numbers.
    fn records(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
    }

    fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn parse_id(&self, line: usize, tok: Option<&str>, what: &str) -> Result<usize> {
        let tok = tok.ok_or_else(|| self.error(line, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.error(line, format!("invalid {what} `{tok}`")))
    }
}

struct FeatureRows {
    declared: Option<(usize, usize)>,
    rows: Vec<(usize, Vec<(usize, f64)>)>,
}

fn parse_features(src: &Lines) -> Result<FeatureRows> {
    let mut declared = None;
    for (i, raw) in src.text.lines().enumerate() {
        let l = raw.trim();
        if let Some(rest) = l.strip_prefix('#') {
            let mut toks = rest.split_whitespace();
            if toks.next() == Some("shape") {
                let n = src.parse_id(i + 1, toks.next(), "node count")?;
                let f = src.parse_id(i + 1, toks.next(), "feature count")?;
                declared = Some((n, f));
            }
        }
    }
    let mut rows = Vec::new();
    for (line, l) in src.records() {
        let mut toks = l.split_whitespace();
        let node = src.parse_id(line, toks.next(), "node id")?;
        let mut entries = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| src.error(line, format!("expected idx:val, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| src.error(line, format!("invalid feature index `{idx}`")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| src.error(line, format!("invalid feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(src.error(line, format!("non-finite feature value `{val}`")));
            }
            entries.push((idx, val));
        }
        rows.push((node, entries));
    }
    Ok(FeatureRows { declared, rows })
}

fn parse_edges(edges_src: &Lines, n: usize) -> Result<Adjacency> {
    let mut edges = Vec::new();
    for (line, l) in edges_src.records() {
        let mut toks = l.split_whitespace();
        let u = edges_src.parse_id(line, toks.next(), "source node")?;
        let v = edges_src.parse_id(line, toks.next(), "target node")?;
        if toks.next().is_some() {
            return Err(edges_src.error(line, "expected exactly two node ids"));
        }
        for w in [u, v] {
            if w >= n {
                return Err(edges_src.error(line, format!("node id {w} >= n = {n}")));
            }
        }
        edges.push((u, v));
    }
    Adjacency::from_edges(n, edges)
}

/// Loads an attacked bundle against its clean counterpart. A directory
/// holding only `edges.tsv` borrows the clean features, labels and split; a
/// full bundle must agree with the clean one in node and feature counts.
pub fn load_attacked_bundle(clean: &SparseGraph, dir: impl AsRef<Path>) -> Result<SparseGraph> {
    let dir = dir.as_ref();
    if dir.join(FEATURES_FILE).exists() {
        let g = load_graph_bundle(dir)?;
        if (g.n(), g.num_features()) != (clean.n(), clean.num_features()) {
            return Err(Error::Shape(format!(
                "attacked bundle is {}x{}, clean bundle is {}x{}",
                g.n(),
                g.num_features(),
                clean.n(),
                clean.num_features()
            )));
        }
        return Ok(g);
    }
    let src = Lines::read(dir.join(EDGES_FILE))?;
    clean.with_adjacency(parse_edges(&src, clean.n())?)
}

/// Loads a bundle directory into a [`SparseGraph`].
pub fn load_graph_bundle(dir: impl AsRef<Path>) -> Result<SparseGraph> {
    let dir = dir.as_ref();
    let features_src = Lines::read(dir.join(FEATURES_FILE))?;
    let edges_src = Lines::read(dir.join(EDGES_FILE))?;
    let parsed = parse_features(&features_src)?;

    let (n, f) = match parsed.declared {
        Some(shape) => shape,
        None => {
            let n = parsed.rows.iter().map(|(v, _)| v + 1).max().unwrap_or(0);
            let f = parsed
                .rows
                .iter()
                .flat_map(|(_, e)| e.iter().map(|(j, _)| j + 1))
                .max()
                .unwrap_or(0);
            (n, f)
        }
    };

    let mut features = DenseMat::zeros(n, f);
    // Line numbers of feature records, for error reporting.
    let feature_lines: Vec<usize> = features_src.records().map(|(l, _)| l).collect();
    for ((node, entries), &line) in parsed.rows.iter().zip(&feature_lines) {
        if *node >= n {
            return Err(features_src.error(line, format!("node id {node} >= n = {n}")));
        }
        for &(j, v) in entries {
            if j >= f {
                return Err(features_src.error(line, format!("feature index {j} >= F = {f}")));
            }
            features.set(*node, j, v);
        }
    }

    let adjacency = parse_edges(&edges_src, n)?;
    let mut graph = SparseGraph::new(adjacency, features)?;

    if let Some(src) = Lines::read_optional(dir.join(LABELS_FILE))? {
        let mut labels = vec![None; n];
        for (line, l) in src.records() {
            let mut toks = l.split_whitespace();
            let node = src.parse_id(line, toks.next(), "node id")?;
            let class = src.parse_id(line, toks.next(), "class id")?;
            if node >= n {
                return Err(src.error(line, format!("node id {node} >= n = {n}")));
            }
            labels[node] = Some(class);
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| Error::Parse {
                    path: src.path.clone(),
                    line: 0,
                    msg: format!("node {i} has no label"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        graph.labels = Some(labels);
    }

    if let Some(src) = Lines::read_optional(dir.join(SPLITS_FILE))? {
        let mut split = vec![None; n];
        for (line, l) in src.records() {
            let mut toks = l.split_whitespace();
            let node = src.parse_id(line, toks.next(), "node id")?;
            if node >= n {
                return Err(src.error(line, format!("node id {node} >= n = {n}")));
            }
            let tag = toks
                .next()
                .ok_or_else(|| src.error(line, "missing split tag"))?;
            split[node] = Some(
                Split::parse(tag).ok_or_else(|| src.error(line, format!("unknown split `{tag}`")))?,
            );
        }
        graph.split = Some(split);
    }

    Ok(graph)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `edges.tsv` for `adjacency`, one `i j` line per undirected edge.
pub fn write_edges(adjacency: &Adjacency, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (i, j) in adjacency.edges() {
        writeln!(w, "{i}\t{j}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a full bundle (edges, features, and labels/splits when present).
pub fn write_graph_bundle(graph: &SparseGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_edges(&graph.adjacency, dir.join(EDGES_FILE))?;

    let path = dir.join(FEATURES_FILE);
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "# shape {} {}", graph.n(), graph.num_features()).map_err(io)?;
    for i in 0..graph.n() {
        write!(w, "{i}").map_err(io)?;
        for (j, &v) in graph.features.row(i).iter().enumerate() {
            if v != 0.0 {
                write!(w, "\t{j}:{v}").map_err(io)?;
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;

    if let Some(labels) = &graph.labels {
        let path = dir.join(LABELS_FILE);
        let mut w = create(&path)?;
        for (i, l) in labels.iter().enumerate() {
            writeln!(w, "{i}\t{l}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(split) = &graph.split {
        let path = dir.join(SPLITS_FILE);
        let mut w = create(&path)?;
        for (i, s) in split.iter().enumerate() {
            if let Some(s) = s {
                writeln!(w, "{i}\t{}", s.as_str()).map_err(|e| Error::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
