//! Undirected graphs in compressed sparse row form, plus the structural
//! statistics used by the calibrators and diagnostics.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// Immutable undirected simple graph.
///
/// Neighbor lists are sorted ascending; every edge is stored in both
/// directions, so `row_offsets[num_nodes]` is twice the edge count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

/// Hop distance from a source set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distance {
    Hops(usize),
    Unreachable,
}

impl Distance {
    pub fn hops(self) -> Option<usize> {
        match self {
            Distance::Hops(h) => Some(h),
            Distance::Unreachable => None,
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Hops(h) => write!(f, "{h}"),
            Distance::Unreachable => f.write_str("inf"),
        }
    }
}

/// Train / validation / test partition of node ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMask {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeMask {
    /// Checks bounds and pairwise disjointness.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut owner = vec![0u8; num_nodes];
        for (tag, set) in [(1u8, &self.train), (2, &self.val), (3, &self.test)] {
            for &i in set {
                if i >= num_nodes {
                    return Err(CalibError::InvalidConfig(format!(
                        "mask node {i} out of range 0..{num_nodes}"
                    )));
                }
                if owner[i] != 0 {
                    return Err(CalibError::InvalidConfig(format!(
                        "node {i} appears in more than one mask set"
                    )));
                }
                owner[i] = tag;
            }
        }
        Ok(())
    }
}

impl Graph {
    /// Builds a symmetric CSR graph. Duplicate edges and self-loops are dropped.
    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Graph> {
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(CalibError::InvalidEdge(u, v, num_nodes));
            }
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }
        let mut adj: Vec<Vec<usize>> = degree.iter().map(|&d| Vec::with_capacity(d)).collect();
        for &(u, v) in edges {
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            col_indices.extend_from_slice(list);
            row_offsets.push(col_indices.len());
        }
        Ok(Graph { num_nodes, row_offsets, col_indices })
    }

    /// Parses an edge-list file: two whitespace-separated 0-based ids per
    /// line, `#` comment lines and blank lines skipped.
    pub fn read_edge_list(path: &Path, num_nodes: usize) -> Result<Graph> {
        let text = std::fs::read_to_string(path).map_err(|e| CalibError::io(path, e))?;
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| CalibError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let mut it = line.split_whitespace();
            let mut next_id = || -> Result<usize> {
                let tok = it.next().ok_or_else(|| parse_err("expected two node ids".into()))?;
                tok.parse::<usize>()
                    .map_err(|_| parse_err(format!("invalid node id `{tok}`")))
            };
            let u = next_id()?;
            let v = next_id()?;
            if u >= num_nodes || v >= num_nodes {
                return Err(parse_err(format!("edge ({u}, {v}) outside 0..{num_nodes}")));
            }
            edges.push((u, v));
        }
        Graph::from_edges(&edges, num_nodes)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Iterates over each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes)
            .flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
            .filter(|&(u, v)| u < v)
    }

    /// Sorted neighbor list of `i` with `i` itself inserted.
    pub fn neighbors_with_self(&self, i: usize) -> Vec<usize> {
        let nbrs = self.neighbors(i);
        let pos = nbrs.partition_point(|&j| j < i);
        let mut out = Vec::with_capacity(nbrs.len() + 1);
        out.extend_from_slice(&nbrs[..pos]);
        out.push(i);
        out.extend_from_slice(&nbrs[pos..]);
        out
    }

    /// Multi-source BFS hop distances.
    pub fn bfs_distance_to_set(&self, sources: &[usize]) -> Result<Vec<Distance>> {
        if sources.is_empty() {
            return Err(CalibError::EmptySourceSet);
        }
        let mut dist = vec![Distance::Unreachable; self.num_nodes];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s] == Distance::Unreachable {
                dist[s] = Distance::Hops(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let Distance::Hops(d) = dist[u] else { unreachable!() };
            for &v in self.neighbors(u) {
                if dist[v] == Distance::Unreachable {
                    dist[v] = Distance::Hops(d + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Direct neighbors of `set` that are not themselves in `set`, sorted.
    pub fn boundary_of(&self, set: &[usize]) -> Vec<usize> {
        let mut inside = vec![false; self.num_nodes];
        for &i in set {
            inside[i] = true;
        }
        let mut hit = vec![false; self.num_nodes];
        for &i in set {
            for &j in self.neighbors(i) {
                if !inside[j] {
                    hit[j] = true;
                }
            }
        }
        (0..self.num_nodes).filter(|&j| hit[j]).collect()
    }

    /// Per-node `ln((n_a + 1) / (n_d + 1))`, counting neighbors that agree
    /// (`n_a`) or disagree (`n_d`) with the node's predicted label.
    pub fn node_homophily(&self, pred_labels: &[usize]) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| {
                let agree = self
                    .neighbors(i)
                    .iter()
                    .filter(|&&j| pred_labels[j] == pred_labels[i])
                    .count();
                let disagree = self.degree(i) - agree;
                ((agree as f64 + 1.0) / (disagree as f64 + 1.0)).ln()
            })
            .collect()
    }

    /// Mean fraction of same-label neighbors; isolated nodes count as 0.
    pub fn homophily_index(&self, labels: &[usize]) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        let total: f64 = (0..self.num_nodes)
            .map(|i| {
                let deg = self.degree(i);
                if deg == 0 {
                    return 0.0;
                }
                let same = self.neighbors(i).iter().filter(|&&j| labels[j] == labels[i]).count();
                same as f64 / deg as f64
            })
            .sum();
        total / self.num_nodes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path3() -> Graph {
        Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap()
    }

    #[test]
    fn single_edge_is_symmetric() {
        let g = Graph::from_edges(&[(0, 1)], 2).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn duplicates_and_loops_are_dropped() {
        let g = Graph::from_edges(&[(0, 1), (1, 0), (0, 0)], 2).unwrap();
        assert_eq!(g, Graph::from_edges(&[(0, 1)], 2).unwrap());
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.row_offsets()[2], 2);
    }

    #[test]
    fn out_of_range_edge_rejected() {
        assert!(matches!(
            Graph::from_edges(&[(0, 5)], 3),
            Err(CalibError::InvalidEdge(0, 5, 3))
        ));
    }

    #[test]
    fn bfs_examples() {
        let g = path3();
        let d = g.bfs_distance_to_set(&[0]).unwrap();
        assert_eq!(d, vec![Distance::Hops(0), Distance::Hops(1), Distance::Hops(2)]);
        let d = g.bfs_distance_to_set(&[0, 2]).unwrap();
        assert_eq!(d, vec![Distance::Hops(0), Distance::Hops(1), Distance::Hops(0)]);
        let g4 = Graph::from_edges(&[(0, 1), (1, 2)], 4).unwrap();
        assert_eq!(g4.bfs_distance_to_set(&[0]).unwrap()[3], Distance::Unreachable);
        assert!(matches!(g.bfs_distance_to_set(&[]), Err(CalibError::EmptySourceSet)));
    }

    #[test]
    fn node_homophily_examples() {
        // star: center 0 with leaves 1..=4
        let g = Graph::from_edges(&[(0, 1), (0, 2), (0, 3), (0, 4)], 6).unwrap();
        let labels = [0, 0, 0, 0, 1, 0];
        let h = g.node_homophily(&labels);
        assert!((h[0] - 2f64.ln()).abs() < 1e-12); // n_a=3, n_d=1
        assert_eq!(h[5], 0.0); // isolated
        let labels = [0, 1, 1, 1, 0, 0];
        let h = g.node_homophily(&labels);
        // center agrees with leaf 4 only: n_a=1, n_d=3
        assert!((h[0] - (2.0f64 / 4.0).ln()).abs() < 1e-12);
        // n_a=0, n_d=3
        let g = Graph::from_edges(&[(0, 1), (0, 2), (0, 3)], 4).unwrap();
        let h = g.node_homophily(&[0, 1, 1, 2]);
        assert!((h[0] + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn homophily_index_examples() {
        let g = Graph::from_edges(&[(0, 1)], 2).unwrap();
        assert_eq!(g.homophily_index(&[3, 3]), 1.0);
        let tri = Graph::from_edges(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        assert!((tri.homophily_index(&[0, 0, 1]) - 1.0 / 3.0).abs() < 1e-15);
        let empty = Graph::from_edges(&[], 4).unwrap();
        assert_eq!(empty.homophily_index(&[0, 1, 0, 1]), 0.0);
    }

    #[test]
    fn neighbors_with_self_examples() {
        let g = Graph::from_edges(&[(0, 1), (1, 2)], 4).unwrap();
        assert_eq!(g.neighbors_with_self(3), vec![3]);
        assert_eq!(g.neighbors_with_self(1), vec![0, 1, 2]);
        assert_eq!(g.neighbors_with_self(0), vec![0, 1]);
    }

    #[test]
    fn boundary_excludes_set() {
        let g = path3();
        assert_eq!(g.boundary_of(&[0]), vec![1]);
        assert_eq!(g.boundary_of(&[0, 1]), vec![2]);
    }

    #[test]
    fn edge_list_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "# comment\n0 1\n\n1\t2\n").unwrap();
        let g = Graph::read_edge_list(&p, 3).unwrap();
        assert_eq!(g, path3());
        std::fs::write(&p, "0 1\n1 x\n").unwrap();
        match Graph::read_edge_list(&p, 3) {
            Err(CalibError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn all_pairs_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
        // Floyd-Warshall on an adjacency matrix.
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for i in 0..n {
            d[i][i] = 0;
        }
        for &(u, v) in edges {
            if u != v {
                d[u][v] = 1;
                d[v][u] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d.into_iter()
            .map(|row| row.into_iter().map(|x| (x < inf).then_some(x)).collect())
            .collect()
    }

    fn edges_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..50).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..120)))
    }

    proptest! {
        #[test]
        fn symmetric_and_bfs_matches_oracle((n, edges) in edges_strategy(), src_bits in any::<u64>()) {
            let g = Graph::from_edges(&edges, n).unwrap();
            for i in 0..n {
                let nb = g.neighbors(i);
                prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(!nb.contains(&i));
                for &j in nb {
                    prop_assert!(g.neighbors(j).binary_search(&i).is_ok());
                }
            }
            let mut sources: Vec<usize> = (0..n).filter(|i| src_bits >> (i % 64) & 1 == 1).collect();
            if sources.is_empty() { sources.push(0); }
            let oracle = all_pairs_oracle(n, &edges);
            let dist = g.bfs_distance_to_set(&sources).unwrap();
            for v in 0..n {
                let best = sources.iter().filter_map(|&s| oracle[s][v]).min();
                prop_assert_eq!(dist[v].hops(), best);
            }
        }

        #[test]
        fn node_homophily_label_permutation_invariant(
            (n, edges) in edges_strategy(),
            seed in any::<u64>(),
        ) {
            let g = Graph::from_edges(&edges, n).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| ((seed >> (i % 60)) as usize ^ i) % 4).collect();
            let perm = [2usize, 0, 3, 1];
            let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            prop_assert_eq!(g.node_homophily(&labels), g.node_homophily(&relabeled));
        }

        #[test]
        fn uniform_labels_give_unit_index((n, edges) in edges_strategy()) {
            let g = Graph::from_edges(&edges, n).unwrap();
            let labels = vec![1usize; n];
            let h = g.homophily_index(&labels);
            if (0..n).all(|i| g.degree(i) > 0) {
                prop_assert_eq!(h, 1.0);
            }
            prop_assert!((0.0..=1.0).contains(&h));
        }
    }
}
