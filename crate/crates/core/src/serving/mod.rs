//! A prediction-only model endpoint.
//!
//! `Service` owns the request/response contract. It is reachable over HTTP
//! (`serve`, answered by `HttpEndpoint`) or directly in process
//! (`InProcessEndpoint`); both clients send the same bytes and parse the same
//! replies.

mod endpoint;
mod http;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{construct_inductive_randomized, InductiveConfig, ModelAccess};
use crate::gcn::checkpoint::model_hash;
use crate::gcn::{argmax_total, local_logits, predict_all, Model, Params};
use crate::graph::{normalize_adjacency, Graph, GraphFile, LoadOptions};

pub use endpoint::{
    health, query_graph, query_node, HttpEndpoint, InProcessEndpoint, PredictionEndpoint,
};
pub use http::{serve, RunningEndpoint};

/// Request bodies above this size are rejected.
pub const MAX_BODY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServingMode {
    Transductive,
    Inductive,
}

impl fmt::Display for ServingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServingMode::Transductive => "transductive",
            ServingMode::Inductive => "inductive",
        })
    }
}

impl FromStr for ServingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(ServingMode::Transductive),
            "inductive" => Ok(ServingMode::Inductive),
            other => Err(Error::Config(format!("unknown serving mode {other:?}"))),
        }
    }
}

/// How the attacker guesses which queries are fingerprints.
#[derive(Debug, Clone)]
pub enum AdaptiveStrategy {
    /// Guess `m_A` hosted nodes uniformly at random.
    Transductive,
    /// Build randomized fingerprint graphs from `shadow` with seeds
    /// `seed, seed + 1, ...` until `m_A` (graph, node) pairs are collected.
    Inductive { shadow: Graph, cfg: InductiveConfig },
}

#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    pub m_a: usize,
    pub attack_model: Model,
    pub seed: u64,
    pub strategy: AdaptiveStrategy,
}

#[derive(Debug, Clone)]
pub enum Attacker {
    None,
    Tampered(Model),
    Adaptive(AdaptiveConfig),
}

#[derive(Debug, Clone)]
pub struct ServingConfig {
    pub mode: ServingMode,
    /// The owner's model.
    pub model: Model,
    /// Hosted graph, transductive mode only.
    pub graph: Option<Graph>,
    pub attacker: Attacker,
    /// Report the served model's hash on `/healthz`.
    pub expose_model_hash: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRequest {
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRequest {
    pub graph: GraphFile,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub mode: ServingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Response {
    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Response { status, body: serde_json::to_vec(value).expect("response types serialize") }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Response::json(status, &ErrorResponse { error: msg.into() })
    }
}

struct Hosted {
    graph: Graph,
    served: Vec<usize>,
    honest: Vec<usize>,
}

/// Immutable serving state, built once at startup.
pub struct Service {
    mode: ServingMode,
    served: Params,
    honest: Params,
    hosted: Option<Hosted>,
    honest_nodes: HashSet<usize>,
    honest_queries: HashSet<(String, usize)>,
    model_hash: Option<String>,
}

fn check_dims(m: &Model, reference: &Model) -> Result<()> {
    if (m.input_dim, m.hidden_dim, m.num_classes)
        != (reference.input_dim, reference.hidden_dim, reference.num_classes)
    {
        return Err(Error::Dimension("attack model shape differs from the served model".into()));
    }
    Ok(())
}

impl Service {
    pub fn new(cfg: ServingConfig) -> Result<Service> {
        let served_model = match &cfg.attacker {
            Attacker::None => cfg.model.clone(),
            Attacker::Tampered(m) => m.clone(),
            Attacker::Adaptive(a) => a.attack_model.clone(),
        };
        check_dims(&served_model, &cfg.model)?;
        let hosted = match (cfg.mode, cfg.graph) {
            (ServingMode::Transductive, None) => {
                return Err(Error::Config("transductive serving needs a hosted graph".into()))
            }
            (ServingMode::Inductive, Some(_)) => {
                return Err(Error::Config("inductive serving takes graphs from queries only".into()))
            }
            (ServingMode::Transductive, Some(graph)) => {
                let adj = normalize_adjacency(&graph);
                let served = predict_all(&served_model, &adj, graph.features())?;
                let honest = predict_all(&cfg.model, &adj, graph.features())?;
                Some(Hosted { graph, served, honest })
            }
            (ServingMode::Inductive, None) => None,
        };
        let mut honest_nodes = HashSet::new();
        let mut honest_queries = HashSet::new();
        if let Attacker::Adaptive(a) = &cfg.attacker {
            match (&a.strategy, &hosted) {
                (AdaptiveStrategy::Transductive, Some(h)) => {
                    let n = h.graph.num_nodes();
                    if a.m_a > n {
                        return Err(Error::Config(format!("m_A = {} exceeds {n} hosted nodes", a.m_a)));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                    honest_nodes.extend(sample(&mut rng, n, a.m_a));
                }
                (AdaptiveStrategy::Inductive { shadow, cfg: icfg }, None) => {
                    honest_queries = hypothesize_inductive(&cfg.model, shadow, icfg, a.m_a, a.seed)?;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "adaptive strategy does not match {} serving",
                        cfg.mode
                    )))
                }
            }
        }
        Ok(Service {
            mode: cfg.mode,
            model_hash: cfg.expose_model_hash.then(|| model_hash(&served_model)),
            served: served_model.params(),
            honest: cfg.model.params(),
            hosted,
            honest_nodes,
            honest_queries,
        })
    }

    pub fn mode(&self) -> ServingMode {
        self.mode
    }

    pub fn health(&self) -> HealthResponse {
        HealthResponse { mode: self.mode, model_hash: self.model_hash.clone() }
    }

    pub fn predict_node(&self, node: usize) -> Result<usize> {
        let h = self
            .hosted
            .as_ref()
            .ok_or_else(|| Error::Config("node-only queries need transductive serving".into()))?;
        h.graph.check_node(node)?;
        Ok(if self.honest_nodes.contains(&node) { h.honest[node] } else { h.served[node] })
    }

    pub fn predict_graph(&self, g: &Graph, nodes: &[usize]) -> Result<Vec<usize>> {
        if self.mode != ServingMode::Inductive {
            return Err(Error::Config("graph queries need inductive serving".into()));
        }
        if g.features().dim() != self.served.input_dim {
            return Err(Error::Dimension(format!(
                "query graph has {} feature dims, model expects {}",
                g.features().dim(),
                self.served.input_dim
            )));
        }
        for &v in nodes {
            g.check_node(v)?;
        }
        let hash = if self.honest_queries.is_empty() { None } else { Some(g.inference_hash()) };
        let is_honest =
            |v: usize| hash.as_ref().is_some_and(|h| self.honest_queries.contains(&(h.clone(), v)));
        let (honest, served): (Vec<usize>, Vec<usize>) = nodes.iter().partition(|&&v| is_honest(v));
        let h_logits = local_logits(&self.honest, g, &honest)?;
        let s_logits = local_logits(&self.served, g, &served)?;
        let (mut hi, mut si) = (0, 0);
        Ok(nodes
            .iter()
            .map(|&v| {
                if is_honest(v) {
                    hi += 1;
                    argmax_total(&h_logits[hi - 1])
                } else {
                    si += 1;
                    argmax_total(&s_logits[si - 1])
                }
            })
            .collect())
    }

    /// Answers one request. Never panics on malformed input.
    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> Response {
        match (method, path) {
            ("GET", "/healthz") => Response::json(200, &self.health()),
            ("POST", "/predict") => match self.mode {
                ServingMode::Transductive => match serde_json::from_slice::<NodeRequest>(body) {
                    Err(e) => Response::error(400, format!("malformed request: {e}")),
                    Ok(req) => match self.predict_node(req.node) {
                        Ok(label) => Response::json(200, &LabelResponse { label }),
                        Err(e) => Response::error(400, e.to_string()),
                    },
                },
                ServingMode::Inductive => match serde_json::from_slice::<GraphRequest>(body) {
                    Err(e) => Response::error(400, format!("malformed request: {e}")),
                    Ok(req) => match req
                        .graph
                        .into_graph(LoadOptions::default())
                        .and_then(|g| self.predict_graph(&g, &req.nodes))
                    {
                        Ok(labels) => Response::json(200, &LabelsResponse { labels }),
                        Err(e) => Response::error(400, e.to_string()),
                    },
                },
            },
            (_, "/healthz" | "/predict") => Response::error(405, "method not allowed"),
            _ => Response::error(404, "not found"),
        }
    }
}

fn hypothesize_inductive(
    honest: &Model,
    shadow: &Graph,
    cfg: &InductiveConfig,
    m_a: usize,
    seed: u64,
) -> Result<HashSet<(String, usize)>> {
    let mut set = HashSet::new();
    let mut s = seed;
    while set.len() < m_a {
        let c = InductiveConfig { seed: s, ..cfg.clone() };
        let fps = construct_inductive_randomized(ModelAccess::Gradient(honest), shadow, &c)?;
        let hash = fps.graph.inference_hash();
        for f in &fps.fingerprints {
            if set.len() < m_a {
                set.insert((hash.clone(), f.node));
            }
        }
        s = s.wrapping_add(1);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{train, TrainConfig};
    use crate::graph::synthetic::{sbm, SbmConfig};

    fn setup() -> (Model, Graph) {
        let g = sbm(&SbmConfig::default().with_seed(2)).unwrap();
        (train(&g, &TrainConfig::default().with_seed(2)).unwrap().0, g)
    }

    #[test]
    fn transductive_contract() {
        let (m, g) = setup();
        let preds = predict_all(&m, &normalize_adjacency(&g), g.features()).unwrap();
        let svc = Service::new(ServingConfig {
            mode: ServingMode::Transductive,
            model: m,
            graph: Some(g),
            attacker: Attacker::None,
            expose_model_hash: true,
        })
        .unwrap();
        let r = svc.handle("POST", "/predict", br#"{"node": 7}"#);
        assert_eq!(r.status, 200);
        assert_eq!(r.body, format!(r#"{{"label":{}}}"#, preds[7]).into_bytes());
        for bad in [&b"{"[..], b"{\"node\": -1}", b"{\"node\": 9999}", b"", b"\xff\xfe", b"{\"nodes\":[1]}"] {
            assert_eq!(svc.handle("POST", "/predict", bad).status, 400);
        }
        assert_eq!(svc.handle("GET", "/predict", b"").status, 405);
        assert_eq!(svc.handle("GET", "/nope", b"").status, 404);
        let h: HealthResponse = serde_json::from_slice(&svc.handle("GET", "/healthz", b"").body).unwrap();
        assert_eq!(h.mode, ServingMode::Transductive);
        assert_eq!(h.model_hash.unwrap().len(), 64);
    }

    #[test]
    fn inductive_single_node_graph() {
        let (m, _) = setup();
        let svc = Service::new(ServingConfig {
            mode: ServingMode::Inductive,
            model: m,
            graph: None,
            attacker: Attacker::None,
            expose_model_hash: false,
        })
        .unwrap();
        let feats = vec![0.0; 16];
        let body = serde_json::json!({
            "graph": {"num_nodes": 1, "num_classes": 2, "edges": [], "features": [feats], "labels": [0], "masks": {}},
            "nodes": [0]
        });
        let r = svc.handle("POST", "/predict", body.to_string().as_bytes());
        assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
        let labels: LabelsResponse = serde_json::from_slice(&r.body).unwrap();
        assert_eq!(labels.labels.len(), 1);
        assert_eq!(svc.handle("GET", "/healthz", b"").body, br#"{"mode":"inductive"}"#.to_vec());
    }

    #[test]
    fn adaptive_boundaries() {
        let (m, g) = setup();
        let mut attack = m.clone();
        attack.b2 = vec![0.0, 1e6];
        let n = g.num_nodes();
        let honest = predict_all(&m, &normalize_adjacency(&g), g.features()).unwrap();
        for (m_a, expect_honest) in [(n, true), (0, false)] {
            let svc = Service::new(ServingConfig {
                mode: ServingMode::Transductive,
                model: m.clone(),
                graph: Some(g.clone()),
                attacker: Attacker::Adaptive(AdaptiveConfig {
                    m_a,
                    attack_model: attack.clone(),
                    seed: 1,
                    strategy: AdaptiveStrategy::Transductive,
                }),
                expose_model_hash: false,
            })
            .unwrap();
            let answers: Vec<usize> = (0..n).map(|v| svc.predict_node(v).unwrap()).collect();
            if expect_honest {
                assert_eq!(answers, honest);
            } else {
                assert!(answers.iter().all(|&l| l == 1));
            }
        }
    }

    #[test]
    fn mode_and_graph_must_agree() {
        let (m, g) = setup();
        let cfg = |mode, graph| ServingConfig {
            mode,
            model: m.clone(),
            graph,
            attacker: Attacker::None,
            expose_model_hash: false,
        };
        assert!(Service::new(cfg(ServingMode::Transductive, None)).is_err());
        assert!(Service::new(cfg(ServingMode::Inductive, Some(g))).is_err());
    }
}
