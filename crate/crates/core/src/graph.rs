//! Graph containers, adjacency construction and symmetric normalization.
//!
//! Edges are stored as a canonical list of undirected pairs `(i, j)` with
//! `i < j`, sorted and deduplicated. The dense binary adjacency `A` is always
//! derivable from that list; the normalized operator `D^-1/2 (A + I) D^-1/2`
//! is kept in compressed-row form because refinement runs on graphs with
//! thousands of nodes.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-node metadata carried for reporting only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct NodeMeta {
    pub kind: String,
    pub line: Option<i64>,
    pub code: String,
}

/// A labeled code graph: node features, undirected edges and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    name: String,
    features: Array2<f64>,
    edges: Vec<(usize, usize)>,
    label: u8,
    key_mask: Option<Vec<bool>>,
    node_meta: Option<Vec<NodeMeta>>,
}

impl LabeledGraph {
    /// Builds a graph, canonicalizing the edge list.
    ///
    /// Reversed and duplicate pairs collapse into one undirected edge and
    /// self-loops are dropped, so the derived adjacency has a zero diagonal.
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        edges: &[(usize, usize)],
        label: u8,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::input("graph must have at least one node"));
        }
        if label > 1 {
            return Err(Error::input(format!("label must be 0 or 1, got {label}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite feature at row {}",
                pos / features.ncols().max(1)
            )));
        }
        let edges = canonical_edges(edges, n)?;
        Ok(LabeledGraph {
            name: name.into(),
            features,
            edges,
            label,
            key_mask: None,
            node_meta: None,
        })
    }

    pub fn with_key_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.node_count() {
            return Err(Error::input(format!(
                "key mask has {} entries for {} nodes",
                mask.len(),
                self.node_count()
            )));
        }
        self.key_mask = Some(mask);
        Ok(self)
    }

    pub fn with_node_meta(mut self, meta: Vec<NodeMeta>) -> Result<Self> {
        if meta.len() != self.node_count() {
            return Err(Error::input(format!(
                "node metadata has {} entries for {} nodes",
                meta.len(),
                self.node_count()
            )));
        }
        self.node_meta = Some(meta);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Canonical undirected edges, `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn key_mask(&self) -> Option<&[bool]> {
        self.key_mask.as_deref()
    }

    pub fn node_meta(&self) -> Option<&[NodeMeta]> {
        self.node_meta.as_deref()
    }

    pub fn key_node_count(&self) -> usize {
        self.key_mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&k| k).count())
    }

    /// Dense binary adjacency matrix.
    pub fn adjacency(&self) -> Array2<f64> {
        dense_from_canonical(&self.edges, self.node_count())
    }

    pub fn normalized_adjacency(&self) -> NormalizedAdjacency {
        NormalizedAdjacency::from_edges(self.node_count(), &self.edges)
    }

    /// Relabels nodes so that new node `p` is old node `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::input("permutation length differs from node count"));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::input("not a permutation"));
            }
            inverse[old] = new;
        }
        let features = self.features.select(ndarray::Axis(0), perm);
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(i, j)| (inverse[i], inverse[j]))
            .collect();
        let mut g = LabeledGraph::new(self.name.clone(), features, &edges, self.label)?;
        g.key_mask = self
            .key_mask
            .as_ref()
            .map(|m| perm.iter().map(|&o| m[o]).collect());
        g.node_meta = self
            .node_meta
            .as_ref()
            .map(|m| perm.iter().map(|&o| m[o].clone()).collect());
        Ok(g)
    }

    /// Same graph with a different feature matrix (row count must match).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.node_count() {
            return Err(Error::input("replacement features have wrong row count"));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }
}

fn canonical_edges(edges: &[(usize, usize)], n: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for (pos, &(a, b)) in edges.iter().enumerate() {
        if a >= n || b >= n {
            return Err(Error::input(format!(
                "edge {pos} ({a}, {b}) has an endpoint outside 0..{n}"
            )));
        }
        if a != b {
            out.push((a.min(b), a.max(b)));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn dense_from_canonical(edges: &[(usize, usize)], n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for &(i, j) in edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

/// Dense binary symmetric adjacency from an undirected edge list.
pub fn build_adjacency(edges: &[(usize, usize)], n: usize) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::input("node count must be positive"));
    }
    let canon = canonical_edges(edges, n)?;
    Ok(dense_from_canonical(&canon, n))
}

/// The symmetric normalized operator `D^-1/2 (A + I) D^-1/2` in CSR form.
///
/// Rows are stored with ascending column indices, the self-loop included.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Builds the operator from canonical (or any valid) undirected edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i != j {
                nbrs[i].push(j);
                nbrs[j].push(i);
            }
        }
        for (i, row) in nbrs.iter_mut().enumerate() {
            row.push(i);
            row.sort_unstable();
            row.dedup();
        }
        // degree of A + I
        let inv_sqrt: Vec<f64> = nbrs.iter().map(|r| 1.0 / (r.len() as f64).sqrt()).collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, row) in nbrs.iter().enumerate() {
            for &j in row {
                cols.push(j);
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_ptr.push(cols.len());
        }
        NormalizedAdjacency {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries, self-loops included.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.vals[self.row_ptr[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[[i, self.cols[p]]] = self.vals[p];
            }
        }
        out
    }

    /// `Â · x`. The operator is symmetric, so this is also its transpose
    /// product, which the backward passes rely on.
    pub fn matmul(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "operator/feature row mismatch");
        let width = x.ncols();
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.n * width];
        for i in 0..self.n {
            let dst = &mut out[i * width..(i + 1) * width];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.vals[p];
                let j = self.cols[p];
                for (d, s) in dst.iter_mut().zip(&src[j * width..(j + 1) * width]) {
                    *d += w * s;
                }
            }
        }
        Array2::from_shape_vec((self.n, width), out).expect("shape")
    }
}

/// Normalizes a dense binary symmetric adjacency with zero diagonal.
pub fn normalize_adjacency(a: &Array2<f64>) -> Result<NormalizedAdjacency> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::input(format!("adjacency is {rows}x{cols}, not square")));
    }
    if rows == 0 {
        return Err(Error::input("adjacency is empty"));
    }
    let mut edges = Vec::new();
    for i in 0..rows {
        if a[[i, i]] != 0.0 {
            return Err(Error::input(format!("adjacency has a self-loop at {i}")));
        }
        for j in (i + 1)..rows {
            let (x, y) = (a[[i, j]], a[[j, i]]);
            if x != y {
                return Err(Error::input(format!("adjacency is asymmetric at ({i}, {j})")));
            }
            if x != 0.0 && x != 1.0 {
                return Err(Error::input(format!("adjacency entry ({i}, {j}) is not binary")));
            }
            if x == 1.0 {
                edges.push((i, j));
            }
        }
    }
    Ok(NormalizedAdjacency::from_edges(rows, &edges))
}

/// Checks that `idx` is a non-empty strictly ascending list below `n`.
pub(crate) fn validate_selection(idx: &[usize], n: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::input("selection is empty"));
    }
    for w in idx.windows(2) {
        if w[0] == w[1] {
            return Err(Error::input(format!("duplicate index {} in selection", w[0])));
        }
        if w[0] > w[1] {
            return Err(Error::input("selection is not ascending"));
        }
    }
    if let Some(&last) = idx.last() {
        if last >= n {
            return Err(Error::input(format!("index {last} out of range 0..{n}")));
        }
    }
    Ok(())
}

/// Keeps every canonical edge whose endpoints are both selected, remapped to
/// positions in `idx`. `idx` must already be validated.
pub(crate) fn induced_edges(
    n: usize,
    edges: &[(usize, usize)],
    idx: &[usize],
) -> Vec<(usize, usize)> {
    let mut pos = vec![usize::MAX; n];
    for (p, &i) in idx.iter().enumerate() {
        pos[i] = p;
    }
    edges
        .iter()
        .filter_map(|&(i, j)| {
            let (a, b) = (pos[i], pos[j]);
            (a != usize::MAX && b != usize::MAX).then_some((a, b))
        })
        .collect()
}

/// Subgraph induced by the ascending index list `idx`.
pub fn induced_subgraph(g: &LabeledGraph, idx: &[usize]) -> Result<LabeledGraph> {
    validate_selection(idx, g.node_count())?;
    let features = g.features.select(ndarray::Axis(0), idx);
    let edges = induced_edges(g.node_count(), &g.edges, idx);
    Ok(LabeledGraph {
        name: g.name.clone(),
        features,
        edges,
        label: g.label,
        key_mask: g
            .key_mask
            .as_ref()
            .map(|m| idx.iter().map(|&i| m[i]).collect()),
        node_meta: g
            .node_meta
            .as_ref()
            .map(|m| idx.iter().map(|&i| m[i].clone()).collect()),
    })
}
