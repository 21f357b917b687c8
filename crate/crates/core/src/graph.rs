//! Undirected graphs in CSR form, GCN propagation weights and hop-bounded BFS.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{DreamError, Result};
use crate::matrix::Matrix;

/// Immutable undirected graph. Both edge directions are stored, neighbor lists
/// are sorted ascending and self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    features: Matrix,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Duplicate edges, reversed
    /// duplicates and self-loops are dropped.
    pub fn build(edges: &[(usize, usize)], features: Matrix) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(DreamError::EmptyGraph);
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for endpoint in [u, v] {
                if endpoint >= n {
                    return Err(DreamError::OutOfRange {
                        what: "edge endpoint",
                        index: endpoint,
                        limit: n,
                    });
                }
            }
            if u == v {
                continue;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }

        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut nbrs in adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_indices.extend(nbrs);
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            num_nodes: n,
            row_offsets,
            col_indices,
            features,
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes)
            .flat_map(|u| {
                self.neighbors(u)
                    .iter()
                    .filter(move |&&v| v > u)
                    .map(move |&v| (u, v))
            })
            .collect()
    }

    /// Nodes at hop distance `1..=d_max` from `source`, keyed by node index.
    ///
    /// Plain BFS with an early stop once the frontier reaches `d_max`.
    pub fn bounded_geodesics(&self, source: usize, d_max: u16) -> BTreeMap<usize, u16> {
        let mut out = BTreeMap::new();
        if source >= self.num_nodes || d_max == 0 {
            return out;
        }
        let mut dist = vec![u16::MAX; self.num_nodes];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if du == d_max {
                continue;
            }
            for &v in self.neighbors(u) {
                if dist[v] == u16::MAX {
                    dist[v] = du + 1;
                    out.insert(v, du + 1);
                    queue.push_back(v);
                }
            }
        }
        out
    }

    /// Renormalized adjacency `D^-1/2 (A + I) D^-1/2` with `D` the degree of `A + I`.
    pub fn normalize_adjacency(&self) -> NormalizedAdjacency {
        let n = self.num_nodes;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(self.col_indices.len() + n);
        let mut values = Vec::with_capacity(self.col_indices.len() + n);
        row_offsets.push(0);
        for i in 0..n {
            let nbrs = self.neighbors(i);
            // Insert the diagonal at its sorted position.
            let split = nbrs.partition_point(|&j| j < i);
            let cols = nbrs[..split]
                .iter()
                .copied()
                .chain(std::iter::once(i))
                .chain(nbrs[split..].iter().copied());
            for j in cols {
                col_indices.push(j);
                values.push(propagation_weight(self.degree(i), self.degree(j)));
            }
            row_offsets.push(col_indices.len());
        }
        NormalizedAdjacency {
            num_nodes: n,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// `1 / sqrt((deg_i + 1)(deg_j + 1))`. The product is formed before the root so
/// that `(i, j)` and `(j, i)` are bit-identical.
#[inline]
fn propagation_weight(deg_i: usize, deg_j: usize) -> f64 {
    1.0 / (((deg_i + 1) as f64) * ((deg_j + 1) as f64)).sqrt()
}

/// Sparse symmetric propagation matrix with explicit diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, weight)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[range.start + k])
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_nodes, self.num_nodes);
        for i in 0..self.num_nodes {
            for (j, w) in self.row(i) {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Sparse-dense product. Row `i` of the output is `sum_j w_ij * dense_j`,
    /// accumulated in ascending column order.
    pub fn spmm(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.rows() != self.num_nodes {
            return Err(DreamError::DimensionMismatch {
                context: "spmm",
                expected: format!("{} rows", self.num_nodes),
                actual: format!("{} rows", dense.rows()),
            });
        }
        let k = dense.cols();
        let mut out = Matrix::zeros(self.num_nodes, k);
        for i in 0..self.num_nodes {
            let (start, end) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let o = out.row_mut(i);
            for idx in start..end {
                let w = self.values[idx];
                for (oc, &dc) in o.iter_mut().zip(dense.row(self.col_indices[idx])) {
                    *oc += w * dc;
                }
            }
        }
        Ok(out)
    }
}
