use super::Graph;

/// Weight of entry (i, j) in `D̃^(-1/2)(A+I)D̃^(-1/2)` given the self-loop
/// augmented degrees of both endpoints. The integer product makes the result
/// independent of argument order, so the matrix is bit-exactly symmetric.
#[inline]
pub fn norm_weight(aug_deg_i: usize, aug_deg_j: usize) -> f64 {
    1.0 / ((aug_deg_i as u64 * aug_deg_j as u64) as f64).sqrt()
}

/// Row access to a normalized propagation matrix. Rows are visited in
/// ascending column order, self-loop included.
pub trait Propagation {
    fn num_nodes(&self) -> usize;
    fn for_each_in_row(&self, i: usize, f: impl FnMut(usize, f64));
    /// `deg(i) + 1`.
    fn augmented_degree(&self, i: usize) -> usize;
}

/// Row-compressed `D̃^(-1/2)(A+I)D̃^(-1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    aug_degree: Vec<usize>,
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let aug_degree: Vec<usize> = (0..n).map(|i| g.degree(i) + 1).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(2 * g.num_edges() + n);
    let mut values = Vec::with_capacity(2 * g.num_edges() + n);
    row_ptr.push(0);
    for i in 0..n {
        g.for_each_in_row(i, |j, w| {
            col_idx.push(j);
            values.push(w);
        });
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency { row_ptr, col_idx, values, aug_degree }
}

impl NormalizedAdjacency {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_nodes();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, w) in self.row(i) {
                row[j] = w;
            }
        }
        out
    }
}

impl Propagation for NormalizedAdjacency {
    fn num_nodes(&self) -> usize {
        self.aug_degree.len()
    }

    fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        for (j, w) in self.row(i) {
            f(j, w);
        }
    }

    fn augmented_degree(&self, i: usize) -> usize {
        self.aug_degree[i]
    }
}

/// Computes rows directly from the adjacency lists, with the same weights and
/// order as the CSR form. Used where the graph is edited in place.
impl Propagation for Graph {
    fn num_nodes(&self) -> usize {
        Graph::num_nodes(self)
    }

    fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let di = self.degree(i) + 1;
        let mut self_done = false;
        for &j in self.neighbors(i) {
            if !self_done && j > i {
                f(i, norm_weight(di, di));
                self_done = true;
            }
            f(j, norm_weight(di, self.degree(j) + 1));
        }
        if !self_done {
            f(i, norm_weight(di, di));
        }
    }

    fn augmented_degree(&self, i: usize) -> usize {
        self.degree(i) + 1
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::graph::Features;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, 1, edges, Features::Identity(n), vec![0; n], BTreeMap::new()).unwrap()
    }

    #[test]
    fn isolated_node() {
        let a = normalize_adjacency(&graph(1, &[]));
        assert_eq!(a.to_dense(), vec![vec![1.0]]);
    }

    #[test]
    fn single_edge_is_all_halves() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)]));
        assert_eq!(a.to_dense(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn path_of_three() {
        let a = normalize_adjacency(&graph(3, &[(0, 1), (1, 2)]));
        assert!((a.entry(0, 0) - 0.5).abs() < 1e-15);
        assert!((a.entry(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.entry(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.entry(0, 2), 0.0);
    }

    #[test]
    fn csr_and_graph_rows_agree_bitwise() {
        let g = graph(6, &[(0, 3), (1, 3), (3, 5), (2, 4), (4, 5)]);
        let a = normalize_adjacency(&g);
        for i in 0..6 {
            let mut from_graph = Vec::new();
            g.for_each_in_row(i, |j, w| from_graph.push((j, w.to_bits())));
            let from_csr: Vec<_> = a.row(i).map(|(j, w)| (j, w.to_bits())).collect();
            assert_eq!(from_graph, from_csr);
        }
    }
}
