//! Headerless CSV ingestion.
//!
//! * edges: `src,dst` per line, 0-based node indices
//! * features: one comma-separated row of decimals per node
//! * labels: one non-negative integer per line
//! * splits: one token per line, `train`, `val` or `test`
//!
//! The label file fixes the node count; the class count is `max label + 1`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::{Graph, GraphError, Split};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl GraphFiles {
    /// `edges.csv`, `features.csv`, `labels.csv`, `splits.csv` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            edges: d.join("edges.csv"),
            features: d.join("features.csv"),
            labels: d.join("labels.csv"),
            splits: d.join("splits.csv"),
        }
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        file: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn load_graph_csv<T: Scalar>(files: &GraphFiles) -> Result<Graph<T>, GraphError> {
    let label_text = read(&files.labels)?;
    let mut labels = Vec::new();
    for (i, line) in label_text.lines().enumerate() {
        let l = line
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(&files.labels, i + 1, format!("label {line:?} is not a non-negative integer")))?;
        labels.push(l);
    }
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(&files.labels, 1, "no labels"));
    }

    let feature_text = read(&files.features)?;
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (i, line) in feature_text.lines().enumerate() {
        if i >= n {
            return Err(parse_err(
                &files.features,
                i + 1,
                format!("more feature rows than the {n} nodes in the label file"),
            ));
        }
        let start = data.len();
        for tok in line.split(',') {
            let v = tok
                .trim()
                .parse::<T>()
                .map_err(|_| parse_err(&files.features, i + 1, format!("{tok:?} is not a decimal")))?;
            data.push(v);
        }
        let width = data.len() - start;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(parse_err(
                    &files.features,
                    i + 1,
                    format!("row has {width} columns, expected {d}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            &files.features,
            rows + 1,
            format!("missing feature row: {rows} rows for {n} nodes"),
        ));
    }
    let features = Matrix::from_vec(n, dim.unwrap_or(0), data).expect("row-consistent features");

    let split_text = read(&files.splits)?;
    let mut splits = Vec::with_capacity(n);
    for (i, line) in split_text.lines().enumerate() {
        let s = Split::from_token(line.trim())
            .ok_or_else(|| parse_err(&files.splits, i + 1, format!("unknown split token {line:?}")))?;
        splits.push(Some(s));
    }
    if splits.len() != n {
        return Err(parse_err(
            &files.splits,
            splits.len() + 1,
            format!("{} split tokens for {n} nodes", splits.len()),
        ));
    }

    let edge_text = read(&files.edges)?;
    let mut edges = Vec::new();
    for (i, line) in edge_text.lines().enumerate() {
        let mut it = line.split(',');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(&files.edges, i + 1, "expected `src,dst`"));
        };
        let idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(&files.edges, i + 1, format!("{s:?} is not a node index")))
        };
        let (a, b) = (idx(a)?, idx(b)?);
        if a >= n || b >= n {
            return Err(parse_err(&files.edges, i + 1, format!("node index out of range 0..{n}")));
        }
        edges.push((a, b));
    }

    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Graph::new(features, edges, labels, n_classes, splits)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), GraphError> {
    let io_err = |source| GraphError::Io {
        file: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for l in lines {
        writeln!(f, "{l}").map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

/// Writes `g` in the format read by [`load_graph_csv`]. Every node needs a split.
pub fn write_graph_csv<T: Scalar>(g: &Graph<T>, files: &GraphFiles) -> Result<(), GraphError> {
    if g.splits().iter().any(Option::is_none) {
        return Err(GraphError::InvalidParameters(
            "every node needs a split to be written".into(),
        ));
    }
    write_lines(&files.edges, g.edges().iter().map(|(a, b)| format!("{a},{b}")))?;
    write_lines(
        &files.features,
        (0..g.n_nodes()).map(|i| {
            g.features()
                .row(i)
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }),
    )?;
    write_lines(&files.labels, g.labels().iter().map(|l| l.to_string()))?;
    write_lines(
        &files.splits,
        g.splits().iter().map(|s| s.expect("checked").token().to_string()),
    )
}
