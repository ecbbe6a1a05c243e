//! Undirected node-attributed graphs, edits on them, and the symmetric
//! normalization used by GCN propagation.

mod io;
mod normalize;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_graph, parse_graph, save_graph, GraphFile, LoadOptions, NodeRef};
pub use normalize::{normalize_adjacency, norm_weight, NormalizedAdjacency, Propagation};

pub const MASK_TRAIN: &str = "train";
pub const MASK_TEST: &str = "test";
pub const MASK_CANDIDATES: &str = "candidates";
pub const MASK_FINGERPRINTS: &str = "fingerprints";

/// Node feature matrix. `Identity` stands for the N×N identity used by
/// attribute-free graphs and is never materialized unless a feature is edited.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Identity(usize),
    Dense { dim: usize, values: Vec<f64> },
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Identity(n) => *n,
            Features::Dense { dim, .. } => *dim,
        }
    }

    pub fn get(&self, node: usize, d: usize) -> f64 {
        match self {
            Features::Identity(_) => {
                if node == d {
                    1.0
                } else {
                    0.0
                }
            }
            Features::Dense { dim, values } => values[node * dim + d],
        }
    }

    /// Calls `f(dim, value)` for every nonzero entry of the row, in ascending dim order.
    pub fn for_each_nonzero(&self, node: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Features::Identity(_) => f(node, 1.0),
            Features::Dense { dim, values } => {
                for (d, &x) in values[node * dim..(node + 1) * dim].iter().enumerate() {
                    if x != 0.0 {
                        f(d, x);
                    }
                }
            }
        }
    }

    pub fn row(&self, node: usize) -> Vec<f64> {
        match self {
            Features::Identity(n) => {
                let mut r = vec![0.0; *n];
                r[node] = 1.0;
                r
            }
            Features::Dense { dim, values } => values[node * dim..(node + 1) * dim].to_vec(),
        }
    }

    fn materialize(&mut self) {
        if let Features::Identity(n) = *self {
            let mut values = vec![0.0; n * n];
            for i in 0..n {
                values[i * n + i] = 1.0;
            }
            *self = Features::Dense { dim: n, values };
        }
    }

    fn set(&mut self, node: usize, d: usize, value: f64) {
        self.materialize();
        if let Features::Dense { dim, values } = self {
            values[node * *dim + d] = value;
        }
    }

    /// True when every entry is 0 or 1.
    pub fn is_binary(&self) -> bool {
        match self {
            Features::Identity(_) => true,
            Features::Dense { values, .. } => values.iter().all(|&x| x == 0.0 || x == 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_classes: usize,
    adjacency: Vec<Vec<usize>>,
    features: Features,
    labels: Vec<usize>,
    masks: BTreeMap<String, Vec<usize>>,
    node_ids: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph from an undirected edge list, rejecting self-loops,
    /// duplicate edges (in either orientation), out-of-range ids and labels.
    pub fn new(
        num_nodes: usize,
        num_classes: usize,
        edges: &[(usize, usize)],
        features: Features,
        labels: Vec<usize>,
        masks: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        if labels.len() != num_nodes {
            return Err(Error::InvalidGraph(format!("{} labels for {num_nodes} nodes", labels.len())));
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        let mut seen = BTreeSet::new();
        for (idx, &(i, j)) in edges.iter().enumerate() {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge #{idx} ({i}, {j}) references a node outside [0, {num_nodes})"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("edge #{idx} ({i}, {j}) is a self-loop")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!("edge #{idx} ({i}, {j}) is a duplicate")));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let g = Graph { num_classes, adjacency, features, labels, masks, node_ids: None };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.num_classes == 0 {
            return Err(Error::InvalidGraph("num_classes must be at least 1".into()));
        }
        if self.labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {n} nodes",
                self.labels.len()
            )));
        }
        if let Some((node, &label)) =
            self.labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes)
        {
            return Err(Error::InvalidGraph(format!(
                "node {node} has label {label}, outside [0, {})",
                self.num_classes
            )));
        }
        match &self.features {
            Features::Identity(m) if *m != n => {
                return Err(Error::InvalidGraph(format!("identity features of size {m} for {n} nodes")))
            }
            Features::Dense { dim, values } => {
                if Some(values.len()) != n.checked_mul(*dim) {
                    return Err(Error::InvalidGraph(format!(
                        "feature matrix has {} entries, expected {n}x{dim}",
                        values.len()
                    )));
                }
                if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
                    return Err(Error::InvalidGraph(format!(
                        "feature ({}, {}) is not finite",
                        pos / dim.max(&1),
                        pos % dim.max(&1)
                    )));
                }
            }
            _ => {}
        }
        for (name, nodes) in &self.masks {
            if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidGraph(format!(
                    "mask `{name}` contains node {bad}, outside [0, {n})"
                )));
            }
        }
        if let Some(ids) = &self.node_ids {
            if ids.len() != n {
                return Err(Error::InvalidGraph(format!("{} node ids for {n} nodes", ids.len())));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Canonical undirected edge list, `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (i, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes() && self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.masks
    }

    pub fn mask(&self, name: &str) -> Option<&[usize]> {
        self.masks.get(name).map(Vec::as_slice)
    }

    pub fn set_mask(&mut self, name: &str, nodes: Vec<usize>) -> Result<()> {
        if let Some(&bad) = nodes.iter().find(|&&v| v >= self.num_nodes()) {
            return Err(Error::NodeOutOfRange { node: bad, num_nodes: self.num_nodes() });
        }
        self.masks.insert(name.to_string(), nodes);
        Ok(())
    }

    /// The fingerprint candidate pool: the `candidates` mask when present, else every node.
    pub fn candidate_pool(&self) -> Vec<usize> {
        match self.mask(MASK_CANDIDATES) {
            Some(c) if !c.is_empty() => c.to_vec(),
            _ => (0..self.num_nodes()).collect(),
        }
    }

    pub fn node_ids(&self) -> Option<&[String]> {
        self.node_ids.as_deref()
    }

    pub fn with_node_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.node_ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange { node: v, num_nodes: self.num_nodes() })
        }
    }

    /// `{v} ∪ N(v) ∪ N(N(v))`, the receptive field of a two-layer GCN at `v`. Sorted.
    pub fn two_hop_neighborhood(&self, v: usize) -> Result<Vec<usize>> {
        self.check_node(v)?;
        let mut set = BTreeSet::new();
        set.insert(v);
        for &u in self.neighbors(v) {
            set.insert(u);
            set.extend(self.neighbors(u).iter().copied());
        }
        Ok(set.into_iter().collect())
    }

    /// Nodes within `depth` hops of any node in `seeds`, sorted.
    pub fn k_hop_union(&self, seeds: &[usize], depth: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_nodes()];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if dist[s] == usize::MAX {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            if dist[u] == depth {
                continue;
            }
            for &w in self.neighbors(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        (0..self.num_nodes()).filter(|&v| dist[v] != usize::MAX).collect()
    }

    /// Returns a new graph with `delta` applied in order: edge flips, then feature edits.
    pub fn apply_delta(&self, delta: &GraphDelta) -> Result<Graph> {
        let mut g = self.clone();
        for flip in &delta.edge_flips {
            g.apply_edge_flip(flip)?;
        }
        for edit in &delta.feature_edits {
            g.apply_feature_edit(edit)?;
        }
        Ok(g)
    }

    pub(crate) fn apply_edge_flip(&mut self, flip: &EdgeFlip) -> Result<()> {
        let (u, v) = (flip.u, flip.v);
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(Error::ConflictingEdit(format!("edge flip ({u}, {v}) is a self-loop")));
        }
        let present = self.has_edge(u, v);
        match (flip.op, present) {
            (EdgeOp::Add, true) => {
                Err(Error::ConflictingEdit(format!("cannot add existing edge ({u}, {v})")))
            }
            (EdgeOp::Remove, false) => {
                Err(Error::ConflictingEdit(format!("cannot remove missing edge ({u}, {v})")))
            }
            (EdgeOp::Add, false) => {
                insert_sorted(&mut self.adjacency[u], v);
                insert_sorted(&mut self.adjacency[v], u);
                Ok(())
            }
            (EdgeOp::Remove, true) => {
                remove_sorted(&mut self.adjacency[u], v);
                remove_sorted(&mut self.adjacency[v], u);
                Ok(())
            }
        }
    }

    pub(crate) fn apply_feature_edit(&mut self, edit: &FeatureEdit) -> Result<()> {
        self.check_node(edit.node)?;
        if edit.dim >= self.features.dim() {
            return Err(Error::Dimension(format!(
                "feature edit on dim {} of a {}-dim feature matrix",
                edit.dim,
                self.features.dim()
            )));
        }
        if !edit.value.is_finite() {
            return Err(Error::ConflictingEdit(format!(
                "feature edit ({}, {}) sets a non-finite value",
                edit.node, edit.dim
            )));
        }
        self.features.set(edit.node, edit.dim, edit.value);
        Ok(())
    }

    /// Induced subgraph on a uniformly sampled `fraction` of the nodes, relabeled
    /// to contiguous ids in ascending original order.
    pub fn sample_shadow_graph(&self, fraction: f64, seed: u64) -> Result<Graph> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("shadow fraction {fraction} outside (0, 1]")));
        }
        let n = self.num_nodes();
        let keep_count = (fraction * n as f64).round() as usize;
        if keep_count == 0 {
            return Err(Error::Config(format!(
                "shadow fraction {fraction} of {n} nodes leaves an empty graph"
            )));
        }
        if keep_count == n {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept: Vec<usize> = sample(&mut rng, n, keep_count).into_vec();
        kept.sort_unstable();
        self.induced_subgraph(&kept)
    }

    /// Induced subgraph on `nodes` (sorted, distinct), relabeled by position.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut new_id = vec![usize::MAX; self.num_nodes()];
        for (k, &v) in nodes.iter().enumerate() {
            self.check_node(v)?;
            new_id[v] = k;
        }
        let mut edges = Vec::new();
        for (k, &v) in nodes.iter().enumerate() {
            for &u in self.neighbors(v) {
                if new_id[u] != usize::MAX && new_id[u] > k {
                    edges.push((k, new_id[u]));
                }
            }
        }
        let dim = self.features.dim();
        let mut values = Vec::with_capacity(nodes.len() * dim);
        for &v in nodes {
            values.extend(self.features.row(v));
        }
        let labels = nodes.iter().map(|&v| self.labels[v]).collect();
        let masks = self
            .masks
            .iter()
            .map(|(name, members)| {
                let kept = members
                    .iter()
                    .filter(|&&v| new_id[v] != usize::MAX)
                    .map(|&v| new_id[v])
                    .collect();
                (name.clone(), kept)
            })
            .collect();
        let mut g = Graph::new(
            nodes.len(),
            self.num_classes,
            &edges,
            Features::Dense { dim, values },
            labels,
            masks,
        )?;
        if let Some(ids) = &self.node_ids {
            g.node_ids = Some(nodes.iter().map(|&v| ids[v].clone()).collect());
        }
        Ok(g)
    }

    /// Per-dim (min, max) over all nodes.
    pub fn feature_ranges(&self) -> Vec<(f64, f64)> {
        match &self.features {
            Features::Identity(n) => vec![(0.0, 1.0); *n],
            Features::Dense { dim, values } => {
                let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); *dim];
                for row in values.chunks(*dim) {
                    for (r, &x) in ranges.iter_mut().zip(row) {
                        r.0 = r.0.min(x);
                        r.1 = r.1.max(x);
                    }
                }
                ranges
            }
        }
    }

    /// Per-dim population standard deviation.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.num_nodes().max(1) as f64;
        let dim = self.features.dim();
        (0..dim)
            .map(|d| {
                let mean = (0..self.num_nodes()).map(|v| self.features.get(v, d)).sum::<f64>() / n;
                let var = (0..self.num_nodes())
                    .map(|v| (self.features.get(v, d) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                var.sqrt()
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn canonical_hash(&self) -> String {
        crate::hash::sha256_hex(&io::to_canonical_json(self))
    }

    /// SHA-256 over what a GCN actually consumes: node count, edges and features.
    /// Labels, masks and external ids do not contribute.
    pub fn inference_hash(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend((self.num_nodes() as u64).to_le_bytes());
        for (i, j) in self.edges() {
            bytes.extend((i as u64).to_le_bytes());
            bytes.extend((j as u64).to_le_bytes());
        }
        let dim = self.features.dim();
        bytes.extend((dim as u64).to_le_bytes());
        for v in 0..self.num_nodes() {
            for d in 0..dim {
                bytes.extend(self.features.get(v, d).to_bits().to_le_bytes());
            }
        }
        crate::hash::sha256_hex(&bytes)
    }
}

fn insert_sorted(list: &mut Vec<usize>, x: usize) {
    if let Err(pos) = list.binary_search(&x) {
        list.insert(pos, x);
    }
}

fn remove_sorted(list: &mut Vec<usize>, x: usize) {
    if let Ok(pos) = list.binary_search(&x) {
        list.remove(pos);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOp {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFlip {
    pub u: usize,
    pub v: usize,
    pub op: EdgeOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureEdit {
    pub node: usize,
    pub dim: usize,
    pub value: f64,
}

/// A batch of structural and attribute edits. Its size is the number of edits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    #[serde(default)]
    pub edge_flips: Vec<EdgeFlip>,
    #[serde(default)]
    pub feature_edits: Vec<FeatureEdit>,
}

impl GraphDelta {
    pub fn len(&self) -> usize {
        self.edge_flips.len() + self.feature_edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The delta that undoes `self` when applied to `base.apply_delta(self)`.
    pub fn inverse(&self, base: &Graph) -> Result<GraphDelta> {
        // Replay forward to learn the values each feature edit overwrote.
        let mut g = base.clone();
        for flip in &self.edge_flips {
            g.apply_edge_flip(flip)?;
        }
        let mut restores = Vec::with_capacity(self.feature_edits.len());
        for edit in &self.feature_edits {
            restores.push(FeatureEdit {
                node: edit.node,
                dim: edit.dim,
                value: g.features.get(edit.node, edit.dim),
            });
            g.apply_feature_edit(edit)?;
        }
        restores.reverse();
        let edge_flips = self
            .edge_flips
            .iter()
            .rev()
            .map(|f| EdgeFlip {
                u: f.u,
                v: f.v,
                op: match f.op {
                    EdgeOp::Add => EdgeOp::Remove,
                    EdgeOp::Remove => EdgeOp::Add,
                },
            })
            .collect();
        Ok(GraphDelta { edge_flips, feature_edits: restores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, 1, &edges, Features::Identity(n), vec![0; n], BTreeMap::new()).unwrap()
    }

    fn clique(n: usize) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, 1, &edges, Features::Identity(n), vec![0; n], BTreeMap::new()).unwrap()
    }

    #[test]
    fn singleton_graph_is_valid() {
        let g = Graph::new(1, 1, &[], Features::Identity(1), vec![0], BTreeMap::new()).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn rejects_self_loop_and_duplicates() {
        let err = Graph::new(4, 1, &[(3, 3)], Features::Identity(4), vec![0; 4], BTreeMap::new());
        assert!(matches!(err, Err(Error::InvalidGraph(m)) if m.contains("self-loop")));
        let err =
            Graph::new(3, 1, &[(0, 1), (1, 0)], Features::Identity(3), vec![0; 3], BTreeMap::new());
        assert!(matches!(err, Err(Error::InvalidGraph(m)) if m.contains("duplicate")));
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = Graph::new(2, 2, &[], Features::Identity(2), vec![0, 2], BTreeMap::new());
        assert!(err.is_err());
    }

    #[test]
    fn two_hop_examples() {
        let g = path(5);
        assert_eq!(g.two_hop_neighborhood(0).unwrap(), vec![0, 1, 2]);
        let iso = Graph::new(3, 1, &[(1, 2)], Features::Identity(3), vec![0; 3], BTreeMap::new())
            .unwrap();
        assert_eq!(iso.two_hop_neighborhood(0).unwrap(), vec![0]);
        let star = Graph::new(
            5,
            1,
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
            Features::Identity(5),
            vec![0; 5],
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(star.two_hop_neighborhood(0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(g.two_hop_neighborhood(9), Err(Error::NodeOutOfRange { .. })));
    }

    #[test]
    fn delta_identity_and_inverse() {
        let g = path(4);
        assert_eq!(g.apply_delta(&GraphDelta::default()).unwrap(), g);

        let add = GraphDelta {
            edge_flips: vec![EdgeFlip { u: 0, v: 1, op: EdgeOp::Remove }],
            ..Default::default()
        };
        let removed = g.apply_delta(&add).unwrap();
        assert!(!removed.has_edge(0, 1));
        let back = removed.apply_delta(&add.inverse(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn conflicting_edits_fail() {
        let g = path(3);
        let d = GraphDelta {
            edge_flips: vec![EdgeFlip { u: 0, v: 1, op: EdgeOp::Add }],
            ..Default::default()
        };
        assert!(matches!(g.apply_delta(&d), Err(Error::ConflictingEdit(_))));
        let d = GraphDelta {
            edge_flips: vec![EdgeFlip { u: 0, v: 2, op: EdgeOp::Remove }],
            ..Default::default()
        };
        assert!(matches!(g.apply_delta(&d), Err(Error::ConflictingEdit(_))));
    }

    #[test]
    fn feature_edit_on_zero_matrix() {
        let g = Graph::new(
            5,
            1,
            &[],
            Features::Dense { dim: 8, values: vec![0.0; 40] },
            vec![0; 5],
            BTreeMap::new(),
        )
        .unwrap();
        let d = GraphDelta {
            feature_edits: vec![FeatureEdit { node: 3, dim: 7, value: 1.0 }],
            ..Default::default()
        };
        let out = g.apply_delta(&d).unwrap();
        let Features::Dense { values, .. } = out.features() else { panic!() };
        assert_eq!(values.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(out.features().get(3, 7), 1.0);
        assert_eq!(g.features().get(3, 7), 0.0);
    }

    #[test]
    fn shadow_graph_examples() {
        let g = clique(10);
        assert_eq!(g.sample_shadow_graph(1.0, 7).unwrap(), g);
        let a = g.sample_shadow_graph(0.5, 3).unwrap();
        let b = g.sample_shadow_graph(0.5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_nodes(), 5);
        assert_eq!(a.num_edges(), 10);
        assert!(g.sample_shadow_graph(0.0, 1).is_err());
        assert!(g.sample_shadow_graph(1.5, 1).is_err());
        assert!(g.sample_shadow_graph(0.01, 1).is_err());
    }
}
