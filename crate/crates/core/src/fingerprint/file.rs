//! JSON fingerprint files. The `mode` field selects the layout.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Fingerprint, FingerprintMethod, InductiveFingerprintSet, Provenance, StopReason};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDelta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FingerprintFile {
    Transductive(TransductiveFile),
    Inductive(InductiveFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransductiveItem {
    pub node: usize,
    pub label: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransductiveFile {
    pub method: FingerprintMethod,
    pub seed: u64,
    pub sample_size: usize,
    pub items: Vec<TransductiveItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductiveItem {
    pub node: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductiveFile {
    pub method: FingerprintMethod,
    pub seed: u64,
    pub budget: usize,
    pub base_graph_hash: String,
    pub delta: GraphDelta,
    pub items: Vec<InductiveItem>,
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
}

impl TransductiveFile {
    pub fn from_fingerprints(fps: &[Fingerprint]) -> Result<Self> {
        let first = fps.first().ok_or_else(|| Error::Config("empty fingerprint set".into()))?;
        if fps.iter().any(|f| f.attached_graph.is_some()) {
            return Err(Error::Config("transductive file given inductive fingerprints".into()));
        }
        Ok(TransductiveFile {
            method: first.provenance.method,
            seed: first.provenance.seed,
            sample_size: first.provenance.pool_size,
            items: fps
                .iter()
                .map(|f| TransductiveItem { node: f.node, label: f.expected_label, score: f.score })
                .collect(),
        })
    }

    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        let provenance =
            Provenance { method: self.method, seed: self.seed, pool_size: self.sample_size };
        self.items
            .iter()
            .map(|it| Fingerprint {
                node: it.node,
                expected_label: it.label,
                score: it.score,
                attached_graph: None,
                provenance,
            })
            .collect()
    }
}

impl InductiveFile {
    pub fn from_set(set: &InductiveFingerprintSet) -> Self {
        InductiveFile {
            method: set.method,
            seed: set.seed,
            budget: set.budget,
            base_graph_hash: set.base_graph_hash.clone(),
            delta: set.delta.clone(),
            items: set
                .fingerprints
                .iter()
                .map(|f| InductiveItem { node: f.node, label: f.expected_label })
                .collect(),
            objective_trace: set.objective_trace.clone(),
            targets: set.targets.clone(),
            stop: Some(set.stop),
        }
    }

    /// Rebuilds the fingerprint graph from the shadow graph it was derived from.
    pub fn fingerprints(&self, shadow: &Graph) -> Result<Vec<Fingerprint>> {
        let hash = shadow.canonical_hash();
        if hash != self.base_graph_hash {
            return Err(Error::Config(format!(
                "shadow graph hash {hash} does not match the recorded {}",
                self.base_graph_hash
            )));
        }
        let graph = Arc::new(shadow.apply_delta(&self.delta)?);
        let provenance =
            Provenance { method: self.method, seed: self.seed, pool_size: shadow.num_nodes() };
        self.items
            .iter()
            .map(|it| {
                graph.check_node(it.node)?;
                Ok(Fingerprint {
                    node: it.node,
                    expected_label: it.label,
                    score: 0.0,
                    attached_graph: Some(Arc::clone(&graph)),
                    provenance,
                })
            })
            .collect()
    }
}

pub fn parse_fingerprint_file(bytes: &[u8]) -> Result<FingerprintFile> {
    let file: FingerprintFile = serde_json::from_slice(bytes)?;
    use FingerprintMethod::*;
    let ok = match &file {
        FingerprintFile::Transductive(t) => matches!(t.method, F | L | Random | Manc),
        FingerprintFile::Inductive(i) => matches!(i.method, F | L | RandF | RandL),
    };
    if !ok {
        return Err(Error::Parse("fingerprint method does not fit the file mode".into()));
    }
    Ok(file)
}

pub fn load_fingerprint_file(path: impl AsRef<Path>) -> Result<FingerprintFile> {
    parse_fingerprint_file(&fs::read(path)?)
}

pub fn save_fingerprint_file(file: &FingerprintFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(file)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transductive_layout() {
        let json = r#"{"mode":"transductive","method":"F","seed":3,"sample_size":10,
            "items":[{"node":4,"label":1,"score":0.5}]}"#;
        let file = parse_fingerprint_file(json.as_bytes()).unwrap();
        let FingerprintFile::Transductive(t) = &file else { panic!("wrong mode") };
        assert_eq!(t.items[0], TransductiveItem { node: 4, label: 1, score: 0.5 });
        let back = serde_json::to_string(&file).unwrap();
        assert!(back.starts_with(r#"{"mode":"transductive","method":"F""#), "{back}");
        assert_eq!(parse_fingerprint_file(back.as_bytes()).unwrap(), file);
    }

    #[test]
    fn inductive_layout() {
        let json = r#"{"mode":"inductive","method":"randL","seed":1,"budget":2,
            "base_graph_hash":"ab","delta":{"edge_flips":[{"u":0,"v":1,"op":"add"}],"feature_edits":[]},
            "items":[{"node":0,"label":0}],"objective_trace":[-1.0,-0.5]}"#;
        let FingerprintFile::Inductive(i) = parse_fingerprint_file(json.as_bytes()).unwrap() else {
            panic!("wrong mode")
        };
        assert_eq!(i.method, FingerprintMethod::RandL);
        assert_eq!(i.delta.len(), 1);
    }

    #[test]
    fn rejects_mismatched_method() {
        let json = r#"{"mode":"transductive","method":"randF","seed":0,"sample_size":1,"items":[]}"#;
        assert!(parse_fingerprint_file(json.as_bytes()).is_err());
        assert!(parse_fingerprint_file(b"{}").is_err());
    }
}
