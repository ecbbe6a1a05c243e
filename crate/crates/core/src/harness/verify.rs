use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{Fingerprint, FingerprintMode};
use crate::serving::{health, query_graph, query_node, HealthResponse, PredictionEndpoint, ServingMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Stop at the first mismatch instead of recording the full transcript.
    pub fail_fast: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub node: usize,
    pub expected: usize,
    pub response: Option<usize>,
    pub matched: bool,
    /// Inference hash of the graph shipped with an inductive query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// The endpoint could not be reached or answered out of protocol.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// What the endpoint reported on `/healthz`.
    pub endpoint: Option<HealthResponse>,
    pub seed: u64,
    pub timestamp: Option<u64>,
    pub items: Vec<QueryRecord>,
    pub verdict: Verdict,
    /// 1 iff every queried label matched, absent when inconclusive.
    pub b: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerificationReport {
    pub fn without_timestamp(mut self) -> Self {
        self.timestamp = None;
        self
    }

    /// 1-based position of the first mismatch.
    pub fn first_mismatch(&self) -> Option<usize> {
        self.items.iter().position(|r| !r.matched).map(|i| i + 1)
    }
}

fn inconclusive(
    endpoint: Option<HealthResponse>,
    seed: u64,
    items: Vec<QueryRecord>,
    err: Error,
) -> VerificationReport {
    VerificationReport {
        endpoint,
        seed,
        timestamp: now(),
        items,
        verdict: Verdict::Inconclusive,
        b: None,
        error: Some(err.to_string()),
    }
}

fn now() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

/// Queries every fingerprint once and compares the returned label with the
/// recorded one. Transport failures yield an inconclusive report, not an error.
pub fn verify(
    ep: &dyn PredictionEndpoint,
    fps: &[Fingerprint],
    opts: VerifyOptions,
) -> Result<VerificationReport> {
    let first = fps.first().ok_or_else(|| Error::Config("no fingerprints to verify".into()))?;
    let mode = first.mode();
    if fps.iter().any(|f| f.mode() != mode) {
        return Err(Error::Config("fingerprints mix transductive and inductive queries".into()));
    }
    let seed = first.provenance.seed;
    let h = match health(ep) {
        Ok(h) => h,
        Err(e) => return Ok(inconclusive(None, seed, Vec::new(), e)),
    };
    let expected_mode = match mode {
        FingerprintMode::Transductive => ServingMode::Transductive,
        FingerprintMode::Inductive => ServingMode::Inductive,
    };
    if h.mode != expected_mode {
        return Err(Error::Config(format!("{} endpoint cannot answer these fingerprints", h.mode)));
    }
    let mut items = Vec::with_capacity(fps.len());
    for f in fps {
        let (response, graph_hash) = match &f.attached_graph {
            None => (query_node(ep, f.node), None),
            Some(g) => (
                query_graph(ep, g, &[f.node]).map(|labels| labels[0]),
                Some(g.inference_hash()),
            ),
        };
        let response = match response {
            Ok(r) => r,
            Err(e) => return Ok(inconclusive(Some(h), seed, items, e)),
        };
        let matched = response == f.expected_label;
        items.push(QueryRecord { node: f.node, expected: f.expected_label, response: Some(response), matched, graph_hash });
        if !matched && opts.fail_fast {
            break;
        }
    }
    let pass = items.iter().all(|r| r.matched);
    Ok(VerificationReport {
        endpoint: Some(h),
        seed,
        timestamp: now(),
        items,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        b: Some(pass as u8),
        error: None,
    })
}
