use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Features, Graph};
use crate::error::{Error, Result};

/// An edge endpoint: a dense index, or an external id listed in `node_ids`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Index(usize),
    Name(String),
}

/// On-disk / on-wire graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub edges: Vec<[NodeRef; 2]>,
    pub features: Option<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub masks: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Treat the edge list as directed and fold `(i, j)` / `(j, i)` into one edge.
    pub symmetrize: bool,
}

impl GraphFile {
    pub fn from_graph(g: &Graph) -> Self {
        let features = match g.features() {
            Features::Identity(_) => None,
            Features::Dense { .. } => Some((0..g.num_nodes()).map(|v| g.features().row(v)).collect()),
        };
        GraphFile {
            num_nodes: g.num_nodes(),
            num_classes: g.num_classes(),
            edges: g.edges().into_iter().map(|(i, j)| [NodeRef::Index(i), NodeRef::Index(j)]).collect(),
            features,
            labels: g.labels().to_vec(),
            masks: g.masks().clone(),
            node_ids: g.node_ids().map(<[String]>::to_vec),
        }
    }

    pub fn into_graph(self, opts: LoadOptions) -> Result<Graph> {
        let n = self.num_nodes;
        let names: HashMap<&str, usize> = self
            .node_ids
            .iter()
            .flatten()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let resolve = |r: &NodeRef| -> Result<usize> {
            match r {
                NodeRef::Index(i) => Ok(*i),
                NodeRef::Name(s) => names
                    .get(s.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidGraph(format!("edge references unknown node id `{s}`"))),
            }
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        if opts.symmetrize {
            let mut directed = BTreeSet::new();
            let mut folded = 0usize;
            for (idx, [a, b]) in self.edges.iter().enumerate() {
                let (i, j) = (resolve(a)?, resolve(b)?);
                if !directed.insert((i, j)) {
                    return Err(Error::InvalidGraph(format!("edge #{idx} ({i}, {j}) is a duplicate")));
                }
                if directed.contains(&(j, i)) {
                    folded += 1;
                } else {
                    edges.push((i, j));
                }
            }
            let one_way = edges.len() - folded;
            if one_way > 0 {
                warn!("symmetrized {one_way} directed edges without a reverse counterpart");
            }
        } else {
            for [a, b] in &self.edges {
                edges.push((resolve(a)?, resolve(b)?));
            }
        }
        let features = match self.features {
            None => Features::Identity(n),
            Some(rows) => {
                if rows.len() != n {
                    return Err(Error::InvalidGraph(format!(
                        "{} feature rows for {n} nodes",
                        rows.len()
                    )));
                }
                let dim = rows.first().map_or(0, Vec::len);
                if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
                    return Err(Error::InvalidGraph(format!(
                        "feature row {bad} has {} entries, expected {dim}",
                        rows[bad].len()
                    )));
                }
                Features::Dense { dim, values: rows.into_iter().flatten().collect() }
            }
        };
        let g = Graph::new(n, self.num_classes, &edges, features, self.labels, self.masks)?;
        match self.node_ids {
            Some(ids) => g.with_node_ids(ids),
            None => Ok(g),
        }
    }
}

pub(super) fn to_canonical_json(g: &Graph) -> Vec<u8> {
    serde_json::to_vec(&GraphFile::from_graph(g)).expect("graph documents always serialize")
}

/// Parses a graph document from raw bytes.
pub fn parse_graph(bytes: &[u8], opts: LoadOptions) -> Result<Graph> {
    let file: GraphFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("graph JSON: {e}")))?;
    file.into_graph(opts)
}

pub fn load_graph(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Graph> {
    parse_graph(&fs::read(path)?, opts)
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_canonical_json(g))?;
    Ok(())
}
