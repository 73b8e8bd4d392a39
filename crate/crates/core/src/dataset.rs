//! Datasets (graph + logits + labels + masks) and their on-disk formats.
//!
//! A dataset is described by a JSON manifest pointing at:
//! - an edge list (`u v` per line, `#` comments),
//! - a labels file (`node_id<TAB>class_id` per line),
//! - a logits file (`node_id` followed by K floats per line),
//! - optionally a split file (`{"train": [...], "val": [...], "test": [...]}`).
//!
//! Relative paths in a manifest are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::graph::{Graph, NodeMask};
use crate::kernels::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    pub logits: Matrix,
    pub labels: Vec<usize>,
    pub mask: NodeMask,
}

impl Dataset {
    pub fn new(graph: Graph, logits: Matrix, labels: Vec<usize>, mask: NodeMask) -> Result<Dataset> {
        let n = graph.num_nodes();
        if logits.rows() != n || labels.len() != n {
            return Err(CalibError::ShapeMismatch(format!(
                "graph has {n} nodes, logits {} rows, labels {}",
                logits.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
            return Err(CalibError::ShapeMismatch(format!(
                "label {bad} outside 0..{}",
                logits.cols()
            )));
        }
        if !logits.is_finite() {
            return Err(CalibError::NonFiniteInput("logits contain NaN or infinity".into()));
        }
        mask.validate(n)?;
        Ok(Dataset { graph, logits, labels, mask })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn with_mask(&self, mask: NodeMask) -> Result<Dataset> {
        mask.validate(self.num_nodes())?;
        Ok(Dataset { mask, ..self.clone() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub logits: PathBuf,
    #[serde(default)]
    pub split: Option<PathBuf>,
    pub num_nodes: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub format_version: u32,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl From<&NodeMask> for SplitFile {
    fn from(m: &NodeMask) -> Self {
        SplitFile {
            format_version: FORMAT_VERSION,
            train: m.train.clone(),
            val: m.val.clone(),
            test: m.test.clone(),
        }
    }
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| CalibError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CalibError::Json { path: path.into(), source: e })
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads graph, labels and logits. The mask comes from the split file if
    /// one is listed, otherwise it is empty.
    pub fn load(&self, manifest_path: &Path) -> Result<Dataset> {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let graph = Graph::read_edge_list(&Self::resolve(base, &self.edges), self.num_nodes)?;
        let labels = read_labels(&Self::resolve(base, &self.labels), self.num_nodes, self.num_classes)?;
        let logits = read_logits(&Self::resolve(base, &self.logits), self.num_nodes, self.num_classes)?;
        let mask = match &self.split {
            Some(p) => read_split(&Self::resolve(base, p))?,
            None => NodeMask::default(),
        };
        Dataset::new(graph, logits, labels, mask)
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> CalibError {
    CalibError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CalibError::io(path, e))
}

/// Parses a `node_id<TAB>class_id` file covering every node exactly once.
pub fn read_labels(path: &Path, num_nodes: usize, num_classes: usize) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut labels = vec![None; num_nodes];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_error(path, lineno, "expected `node_id<TAB>class_id`"));
        }
        let node: usize =
            fields[0].parse().map_err(|_| parse_error(path, lineno, "invalid node id"))?;
        let class: usize =
            fields[1].parse().map_err(|_| parse_error(path, lineno, "invalid class id"))?;
        if node >= num_nodes {
            return Err(parse_error(path, lineno, format!("node {node} outside 0..{num_nodes}")));
        }
        if class >= num_classes {
            return Err(parse_error(path, lineno, format!("class {class} outside 0..{num_classes}")));
        }
        if labels[node].replace(class).is_some() {
            return Err(parse_error(path, lineno, format!("duplicate label for node {node}")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| parse_error(path, 0, format!("node {i} has no label"))))
        .collect()
}

/// Parses `node_id z_1 ... z_K` lines into an `N x K` matrix.
pub fn read_logits(path: &Path, num_nodes: usize, num_classes: usize) -> Result<Matrix> {
    let text = read_text(path)?;
    let mut data = vec![0.0; num_nodes * num_classes];
    let mut seen = vec![false; num_nodes];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let node: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_error(path, lineno, "invalid node id"))?;
        if node >= num_nodes {
            return Err(parse_error(path, lineno, format!("node {node} outside 0..{num_nodes}")));
        }
        if std::mem::replace(&mut seen[node], true) {
            return Err(parse_error(path, lineno, format!("duplicate logits for node {node}")));
        }
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_error(path, lineno, format!("invalid float `{f}`"))))
            .collect::<Result<_>>()?;
        if values.len() != num_classes {
            return Err(parse_error(
                path,
                lineno,
                format!("expected {num_classes} logits, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_error(path, lineno, "non-finite logit"));
        }
        data[node * num_classes..(node + 1) * num_classes].copy_from_slice(&values);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(parse_error(path, 0, format!("node {i} has no logits")));
    }
    Matrix::new(num_nodes, num_classes, data)
}

pub fn read_split(path: &Path) -> Result<NodeMask> {
    let text = read_text(path)?;
    let split: SplitFile =
        serde_json::from_str(&text).map_err(|e| CalibError::Json { path: path.into(), source: e })?;
    Ok(NodeMask { train: split.train, val: split.val, test: split.test })
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CalibError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CalibError::io(path, e))
}

pub fn edges_text(g: &Graph) -> String {
    let mut s = String::from("# undirected edge list\n");
    for (u, v) in g.edges() {
        s.push_str(&format!("{u} {v}\n"));
    }
    s
}

pub fn labels_text(labels: &[usize]) -> String {
    labels.iter().enumerate().map(|(i, l)| format!("{i}\t{l}\n")).collect()
}

/// One line per node; floats use the shortest representation that parses
/// back to the same `f64`.
pub fn logits_text(z: &Matrix) -> String {
    let mut s = String::new();
    for (i, row) in z.iter_rows().enumerate() {
        s.push_str(&i.to_string());
        for v in row {
            s.push(' ');
            s.push_str(&format!("{v:e}"));
        }
        s.push('\n');
    }
    s
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable value");
    v.push(b'\n');
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logits_round_trip_exactly() {
        let z = Matrix::from_rows(&[vec![0.1, -3.5e-17, 1e300], vec![2.0 / 3.0, 0.0, -7.25]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.txt");
        std::fs::write(&p, logits_text(&z)).unwrap();
        assert_eq!(read_logits(&p, 2, 3).unwrap(), z);
    }

    #[test]
    fn label_file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.tsv");
        std::fs::write(&p, "0\t1\n1\t9\n").unwrap();
        match read_labels(&p, 2, 3) {
            Err(CalibError::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("class 9"));
            }
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "0\t1\n").unwrap();
        assert!(matches!(read_labels(&p, 2, 3), Err(CalibError::Parse { .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_logits(Path::new("/nonexistent/logits.txt"), 1, 1).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/logits.txt"));
    }

    #[test]
    fn dataset_rejects_overlapping_masks() {
        let g = Graph::from_edges(&[(0, 1)], 2).unwrap();
        let z = Matrix::zeros(2, 2);
        let mask = NodeMask { train: vec![0], val: vec![0], test: vec![1] };
        assert!(Dataset::new(g, z, vec![0, 1], mask).is_err());
    }
}
