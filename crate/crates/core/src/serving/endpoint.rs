use std::io::Read;
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;

use super::{
    GraphRequest, HealthResponse, LabelResponse, LabelsResponse, NodeRequest, Service, MAX_BODY_BYTES,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphFile};

/// Raw transport to a prediction endpoint. Implementations only move bytes;
/// encoding and decoding live in `query_node`, `query_graph` and `health`.
pub trait PredictionEndpoint: Send + Sync {
    fn identity(&self) -> String;

    /// Sends one request and returns the body of a 200 reply. Any other status
    /// or a transport failure is an `Error::Endpoint`.
    fn call(&self, method: &str, path: &str, body: &[u8]) -> Result<Vec<u8>>;
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Endpoint(format!("unexpected reply: {e}")))
}

pub fn query_node(ep: &dyn PredictionEndpoint, node: usize) -> Result<usize> {
    let body = serde_json::to_vec(&NodeRequest { node })?;
    Ok(decode::<LabelResponse>(&ep.call("POST", "/predict", &body)?)?.label)
}

pub fn query_graph(ep: &dyn PredictionEndpoint, graph: &Graph, nodes: &[usize]) -> Result<Vec<usize>> {
    let body = serde_json::to_vec(&GraphRequest { graph: GraphFile::from_graph(graph), nodes: nodes.to_vec() })?;
    let labels = decode::<LabelsResponse>(&ep.call("POST", "/predict", &body)?)?.labels;
    if labels.len() != nodes.len() {
        return Err(Error::Endpoint(format!("asked for {} labels, got {}", nodes.len(), labels.len())));
    }
    Ok(labels)
}

pub fn health(ep: &dyn PredictionEndpoint) -> Result<HealthResponse> {
    decode(&ep.call("GET", "/healthz", b"")?)
}

/// Calls a `Service` directly, skipping the network.
#[derive(Clone)]
pub struct InProcessEndpoint {
    service: Arc<Service>,
}

impl InProcessEndpoint {
    pub fn new(service: Arc<Service>) -> Self {
        InProcessEndpoint { service }
    }
}

impl PredictionEndpoint for InProcessEndpoint {
    fn identity(&self) -> String {
        "inproc".to_string()
    }

    fn call(&self, method: &str, path: &str, body: &[u8]) -> Result<Vec<u8>> {
        let r = self.service.handle(method, path, body);
        if r.status == 200 {
            Ok(r.body)
        } else {
            Err(Error::Endpoint(format!("status {}: {}", r.status, String::from_utf8_lossy(&r.body))))
        }
    }
}

/// HTTP client for a running endpoint.
pub struct HttpEndpoint {
    base: String,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(60))
            .build();
        HttpEndpoint { base: base_url.trim_end_matches('/').to_string(), agent }
    }
}

fn read_body(resp: ureq::Response) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    resp.into_reader()
        .take(MAX_BODY_BYTES)
        .read_to_end(&mut body)
        .map_err(|e| Error::Endpoint(format!("reading reply: {e}")))?;
    Ok(body)
}

impl PredictionEndpoint for HttpEndpoint {
    fn identity(&self) -> String {
        self.base.clone()
    }

    fn call(&self, method: &str, path: &str, body: &[u8]) -> Result<Vec<u8>> {
        let url = format!("{}{}", self.base, path);
        let req = self.agent.request(method, &url).set("Content-Type", "application/json");
        let result = if method == "GET" { req.call() } else { req.send_bytes(body) };
        match result {
            Ok(resp) => read_body(resp),
            Err(ureq::Error::Status(code, resp)) => {
                let body = read_body(resp).unwrap_or_default();
                Err(Error::Endpoint(format!("status {code}: {}", String::from_utf8_lossy(&body))))
            }
            Err(e) => Err(Error::Endpoint(format!("transport: {e}"))),
        }
    }
}
