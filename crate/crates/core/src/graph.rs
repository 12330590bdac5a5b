//! Undirected graphs in CSR form, the symmetric GCN propagation operator and
//! the sparse aggregation kernel built on it.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMatrix, Tensor};

/// Undirected simple graph stored as CSR.
///
/// Invariants (checked by [`Graph::validate`]): offsets start at zero, are
/// non-decreasing and end at `col_indices.len()`; every row is strictly
/// increasing (sorted, no duplicates), holds only in-range ids and never
/// its own id; every edge `(i, j)` has its mirror `(j, i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Directed edges are
    /// mirrored, duplicates collapse, self-loops are dropped (the propagation
    /// operator adds its own).
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_indices.extend(row);
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
        })
    }

    /// Wraps raw CSR arrays after a full validation pass.
    pub fn from_csr(num_nodes: usize, row_offsets: Vec<usize>, col_indices: Vec<usize>) -> Result<Self> {
        let g = Self {
            num_nodes,
            row_offsets,
            col_indices,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.row_offsets.len() != n + 1 {
            return Err(Error::InvalidGraph(format!(
                "row_offsets has {} entries, expected {}",
                self.row_offsets.len(),
                n + 1
            )));
        }
        if self.row_offsets[0] != 0 {
            return Err(Error::InvalidGraph("row_offsets[0] != 0".into()));
        }
        if self.row_offsets[n] != self.col_indices.len() {
            return Err(Error::InvalidGraph(
                "last row offset does not match col_indices length".into(),
            ));
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidGraph("row_offsets decreasing".into()));
        }
        for i in 0..n {
            let row = self.neighbors(i);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGraph(format!("row {i} not strictly sorted")));
            }
            for &j in row {
                if j >= n {
                    return Err(Error::InvalidGraph(format!("row {i} references node {j}")));
                }
                if j == i {
                    return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
                }
                if self.neighbors(j).binary_search(&i).is_err() {
                    return Err(Error::InvalidGraph(format!(
                        "edge ({i}, {j}) has no reverse edge"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored (directed) entries, twice the undirected edge count.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| i < j)
                .map(move |&j| (i, j))
        })
    }

    /// Start of row `i` in the closed-neighbourhood layout (neighbours plus
    /// the node itself), which has `nnz() + num_nodes()` entries.
    #[inline]
    pub fn closed_offset(&self, i: usize) -> usize {
        self.row_offsets[i] + i
    }

    /// `N(i) ∪ {i}` in increasing order.
    pub fn closed_neighborhood(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = self.neighbors(i);
        let split = row.partition_point(|&j| j < i);
        row[..split]
            .iter()
            .copied()
            .chain(std::iter::once(i))
            .chain(row[split..].iter().copied())
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Graph::from_edges(self.num_nodes, &edges)
    }
}

/// CSR matrix holding the entries of `D̂^{-1/2}(A+I)D̂^{-1/2}` (or the
/// self-loop-free variant). The operator is symmetric, so it is its own
/// transpose in the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(column, weight)` pairs of row `i` in CSR order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[r.clone()].binary_search(&j) {
            Ok(k) => self.weights[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// The identity operator (what an edgeless graph normalises to).
    pub fn identity(n: usize) -> Self {
        Self {
            num_nodes: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }
}

/// Symmetric normalisation `w(i, j) = 1/sqrt(deg(i) deg(j))`.
///
/// With `add_self_loops` the degrees count `A + I`. Without it, isolated
/// nodes still receive a self entry of weight 1 so no row is empty.
pub fn normalize_adjacency(g: &Graph, add_self_loops: bool) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let loop_deg = usize::from(add_self_loops);
    // an isolated node without a self-loop keeps weight 1 on itself
    let deg: Vec<f64> = (0..n).map(|i| (g.degree(i) + loop_deg).max(1) as f64).collect();
    let w = |i: usize, j: usize| 1.0 / (deg[i] * deg[j]).sqrt();

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(g.nnz() + n);
    let mut weights = Vec::with_capacity(g.nnz() + n);
    row_offsets.push(0);
    for i in 0..n {
        if add_self_loops || g.degree(i) == 0 {
            for j in g.closed_neighborhood(i) {
                col_indices.push(j);
                weights.push(w(i, j));
            }
        } else {
            for &j in g.neighbors(i) {
                col_indices.push(j);
                weights.push(w(i, j));
            }
        }
        row_offsets.push(col_indices.len());
    }
    NormalizedAdjacency {
        num_nodes: n,
        row_offsets,
        col_indices,
        weights,
    }
}

/// Sparse-dense product `out[i] = Σ_j w(i, j) h[j]`, accumulated in CSR order
/// so results are bit-reproducible.
pub fn spmm(a: &NormalizedAdjacency, h: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.num_nodes() != h.rows() {
        return Err(Error::shape(
            "spmm",
            format!("adjacency has {} nodes, features have {} rows", a.num_nodes(), h.rows()),
        ));
    }
    let d = h.cols();
    let mut out = Tensor::zeros(h.rows(), d);
    for i in 0..a.num_nodes() {
        let out_row = out.row_mut(i);
        for (j, w) in a.row(i) {
            for (o, x) in out_row.iter_mut().zip(h.row(j)) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}
