//! Declarative experiments: graph, model, fingerprints, attacks, detection
//! curves, paired comparisons and bypass analytics from one JSON spec.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::bypass::{
    bypass_prob_approx, bypass_prob_exact, bypass_prob_exact_inductive, bypass_rate_monte_carlo,
    BypassEstimate, BypassSetting,
};
use super::metrics::{
    detection_rate, min_queries_for_full_detection, paired_bootstrap_lower, query_improvement,
    DetectionResult, QueryImprovement,
};
use crate::attacks::{run_attacks, AttackDetail, AttackKind, AttackTarget, PoisonConfig, DEFAULT_VALIDITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::fingerprint::{
    baseline_manc, baseline_random, construct_inductive_f, construct_inductive_l,
    construct_inductive_randomized, generate, generate_randomized, Fingerprint, FingerprintMethod,
    InductiveConfig, ModelAccess, ModelOracle,
};
use crate::gcn::checkpoint::{load, model_hash};
use crate::gcn::{train, Model, TrainConfig};
use crate::graph::synthetic::{citation_like, sbm, CitationConfig, SbmConfig};
use crate::graph::{load_graph, Graph, LoadOptions};
use crate::serving::{Attacker, InProcessEndpoint, PredictionEndpoint, Service, ServingConfig, ServingMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    Sbm(SbmConfig),
    Citation(CitationConfig),
    Path(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    TransF,
    TransL,
    Random,
    Manc,
    IndF,
    IndL,
    RandIndF,
    RandIndL,
}

impl MethodKind {
    pub fn is_inductive(self) -> bool {
        matches!(self, MethodKind::IndF | MethodKind::IndL | MethodKind::RandIndF | MethodKind::RandIndL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    /// Unique name used by comparisons and in the summary.
    pub label: String,
    pub kind: MethodKind,
    pub k: usize,
    /// Randomized transductive selection from a sample of this size.
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub move_pool_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub trials: usize,
    /// Edge budget of the poisoning attacks.
    #[serde(default)]
    pub n_edges: Option<usize>,
}

fn default_resamples() -> usize {
    2000
}

fn default_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub candidate: String,
    pub baseline: String,
    /// Fingerprints used by both methods; defaults to the smaller `k`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BypassSpec {
    pub n: usize,
    pub m_a: usize,
    pub m_v: usize,
    pub classes: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for ShadowSpec {
    fn default() -> Self {
        ShadowSpec { fraction: 0.5, seed: 0 }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_threshold() -> f64 {
    DEFAULT_VALIDITY_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub graph: GraphSource,
    #[serde(default)]
    pub train: TrainConfig,
    /// Use this checkpoint instead of training.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub validity_threshold: f64,
    #[serde(default)]
    pub shadow: ShadowSpec,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub comparisons: Vec<ComparisonSpec>,
    #[serde(default)]
    pub bypass: Vec<BypassSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

pub fn parse_experiment_spec(bytes: &[u8]) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema version {}", self.schema_version)));
        }
        let mut labels: Vec<&str> = self.methods.iter().map(|m| m.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method labels must be unique".into()));
        }
        for m in &self.methods {
            if m.k == 0 {
                return Err(Error::Config(format!("method `{}` needs k >= 1", m.label)));
            }
            if m.sample_size.is_some() && !matches!(m.kind, MethodKind::TransF | MethodKind::TransL) {
                return Err(Error::Config(format!("sample_size only applies to trans-f and trans-l (`{}`)", m.label)));
            }
        }
        for c in &self.comparisons {
            for l in [&c.candidate, &c.baseline] {
                if !labels.contains(&l.as_str()) {
                    return Err(Error::Config(format!("comparison names unknown method `{l}`")));
                }
            }
        }
        for a in &self.attacks {
            if !a.kind.is_bit_flip() && a.n_edges.is_none() {
                return Err(Error::Config(format!("{} needs n_edges", a.kind)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub label: String,
    pub kind: MethodKind,
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub label: String,
    pub detection: DetectionResult,
    /// Smallest `k` reaching full detection.
    pub min_queries: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub candidate: String,
    pub baseline: String,
    pub k: usize,
    pub mean_difference: Option<f64>,
    pub lower_bound: Option<f64>,
    pub confidence: f64,
    /// The lower bound is strictly positive.
    pub dominates: bool,
    /// Queries the baseline needs relative to the candidate.
    pub query_improvement: QueryImprovement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub valid: bool,
    pub attacked_acc: f64,
    pub detail: AttackDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub trials: usize,
    pub valid: usize,
    pub methods: Vec<MethodResult>,
    pub comparisons: Vec<ComparisonEntry>,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BypassEntry {
    pub n: usize,
    pub m_a: usize,
    pub m_v: usize,
    pub classes: usize,
    pub exact_transductive: f64,
    pub exact_inductive: f64,
    pub approx_transductive: f64,
    pub approx_inductive: f64,
    pub mc_transductive: BypassEstimate,
    pub mc_inductive: BypassEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub graph_hash: Option<String>,
    pub model_hash: Option<String>,
    pub clean_accuracy: Option<f64>,
    pub methods: Vec<MethodInfo>,
    pub attacks: Vec<AttackSummary>,
    pub bypass: Vec<BypassEntry>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

fn load_source(src: &GraphSource) -> Result<Graph> {
    match src {
        GraphSource::Sbm(c) => sbm(c),
        GraphSource::Citation(c) => citation_like(c),
        GraphSource::Path(p) => load_graph(p, LoadOptions::default()),
    }
}

struct Prepared {
    graph: Graph,
    shadow: Option<Graph>,
    model: Model,
    fingerprints: Vec<(MethodSpec, Vec<Fingerprint>)>,
}

fn build_fingerprints(spec: &ExperimentSpec, m: &MethodSpec, model: &Model, g: &Graph, shadow: Option<&Graph>) -> Result<Vec<Fingerprint>> {
    let pool = g.candidate_pool();
    let seed = spec.seed;
    let icfg = || {
        let mut c = InductiveConfig { k: m.k, seed, ..InductiveConfig::default() };
        if let Some(b) = m.budget {
            c.budget = b;
        }
        if let Some(p) = m.move_pool_size {
            c.move_pool_size = p;
        }
        c
    };
    let trans = |method| match m.sample_size {
        Some(s) => generate_randomized(model, g, &pool, s, m.k, seed, method),
        None => generate(model, g, &pool, m.k, method),
    };
    match m.kind {
        MethodKind::TransF => trans(FingerprintMethod::F),
        MethodKind::TransL => trans(FingerprintMethod::L),
        MethodKind::Random => baseline_random(model, g, &pool, m.k, seed),
        MethodKind::Manc => baseline_manc(model, g, &pool, m.k),
        kind => {
            let shadow = shadow.expect("shadow graph exists when inductive methods are requested");
            let oracle = ModelOracle::new(model);
            let set = match kind {
                MethodKind::IndF => construct_inductive_f(model, shadow, &icfg())?,
                MethodKind::IndL => construct_inductive_l(&oracle, shadow, &icfg())?,
                MethodKind::RandIndF => construct_inductive_randomized(ModelAccess::Gradient(model), shadow, &icfg())?,
                _ => construct_inductive_randomized(ModelAccess::Posterior(&oracle), shadow, &icfg())?,
            };
            Ok(set.fingerprints)
        }
    }
}

fn endpoint_for(model: &Model, graph: &Graph, inductive: bool, tampered: &Model) -> Result<Arc<dyn PredictionEndpoint>> {
    let cfg = ServingConfig {
        mode: if inductive { ServingMode::Inductive } else { ServingMode::Transductive },
        model: model.clone(),
        graph: (!inductive).then(|| graph.clone()),
        attacker: Attacker::Tampered(tampered.clone()),
        expose_model_hash: false,
    };
    Ok(Arc::new(InProcessEndpoint::new(Arc::new(Service::new(cfg)?))))
}

fn compare(c: &ComparisonSpec, results: &[MethodResult], seed: u64) -> Result<ComparisonEntry> {
    let find = |l: &str| results.iter().find(|r| r.label == l).expect("labels validated");
    let (cand, base) = (find(&c.candidate), find(&c.baseline));
    let k = c.k.unwrap_or_else(|| cand.detection.per_k.len().min(base.detection.per_k.len()));
    let a = cand.detection.indicators(k);
    let b = base.detection.indicators(k);
    let (mean_difference, lower_bound) = if a.is_empty() || a.len() != b.len() {
        (None, None)
    } else {
        let mean = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
        (Some(mean), Some(paired_bootstrap_lower(&a, &b, c.resamples, c.confidence, seed)?))
    };
    Ok(ComparisonEntry {
        candidate: c.candidate.clone(),
        baseline: c.baseline.clone(),
        k,
        mean_difference,
        lower_bound,
        confidence: c.confidence,
        dominates: lower_bound.is_some_and(|l| l > 0.0),
        query_improvement: query_improvement(base.min_queries, cand.min_queries),
    })
}

fn bypass_entry(b: &BypassSpec, seed: u64) -> Result<BypassEntry> {
    Ok(BypassEntry {
        n: b.n,
        m_a: b.m_a,
        m_v: b.m_v,
        classes: b.classes,
        exact_transductive: bypass_prob_exact(b.n, b.m_a, b.m_v)?,
        exact_inductive: bypass_prob_exact_inductive(b.n, b.m_a, b.m_v, b.classes)?,
        approx_transductive: bypass_prob_approx(b.n, b.m_a, b.m_v, 1)?,
        approx_inductive: bypass_prob_approx(b.n, b.m_a, b.m_v, b.classes)?,
        mc_transductive: bypass_rate_monte_carlo(b.n, b.m_a, b.m_v, b.trials, seed, BypassSetting::Transductive)?,
        mc_inductive: bypass_rate_monte_carlo(
            b.n,
            b.m_a,
            b.m_v,
            b.trials,
            seed,
            BypassSetting::Inductive { classes: b.classes },
        )?,
    })
}

fn run_stages(spec: &ExperimentSpec, summary: &mut ExperimentSummary) -> Result<()> {
    let graph = stage("graph", load_source(&spec.graph))?;
    summary.graph_hash = Some(graph.canonical_hash());
    let model = stage(
        "model",
        match &spec.checkpoint {
            Some(p) => load(p),
            None => train(&graph, &spec.train).map(|(m, _)| m),
        },
    )?;
    summary.model_hash = Some(model_hash(&model));
    let target = stage("model", AttackTarget::new(&model, &graph, spec.validity_threshold))?;
    summary.clean_accuracy = Some(target.clean_acc());

    let shadow = if spec.methods.iter().any(|m| m.kind.is_inductive()) {
        Some(stage("shadow", graph.sample_shadow_graph(spec.shadow.fraction, spec.shadow.seed))?)
    } else {
        None
    };
    let mut prepared = Prepared { graph: graph.clone(), shadow, model: model.clone(), fingerprints: Vec::new() };
    for m in &spec.methods {
        let fps = stage(
            &format!("fingerprint:{}", m.label),
            build_fingerprints(spec, m, &prepared.model, &prepared.graph, prepared.shadow.as_ref()),
        )?;
        summary.methods.push(MethodInfo {
            label: m.label.clone(),
            kind: m.kind,
            nodes: fps.iter().map(|f| f.node).collect(),
            labels: fps.iter().map(|f| f.expected_label).collect(),
        });
        prepared.fingerprints.push((m.clone(), fps));
    }

    for a in &spec.attacks {
        let name = format!("attack:{}", a.kind);
        let poison = a.n_edges.map(|n_edges| PoisonConfig { n_edges, retrain: spec.train.clone() });
        let outcomes = stage(&name, run_attacks(&target, a.kind, a.trials, spec.seed, poison.as_ref()))?;
        let mut methods = Vec::new();
        for (m, fps) in &prepared.fingerprints {
            let inductive = m.kind.is_inductive();
            let detection = stage(
                &format!("verify:{}:{}", a.kind, m.label),
                detection_rate(&outcomes, fps, |o| endpoint_for(&prepared.model, &prepared.graph, inductive, &o.tampered)),
            )?;
            let min_queries = min_queries_for_full_detection(&detection.per_k);
            methods.push(MethodResult { label: m.label.clone(), detection, min_queries });
        }
        let comparisons = spec
            .comparisons
            .iter()
            .map(|c| compare(c, &methods, spec.seed))
            .collect::<Result<Vec<_>>>();
        let comparisons = stage(&format!("compare:{}", a.kind), comparisons)?;
        summary.attacks.push(AttackSummary {
            kind: a.kind,
            trials: a.trials,
            valid: outcomes.iter().filter(|o| o.valid).count(),
            methods,
            comparisons,
            records: outcomes
                .iter()
                .map(|o| TrialRecord { seed: o.seed, valid: o.valid, attacked_acc: o.attacked_acc, detail: o.detail.clone() })
                .collect(),
        });
    }

    for b in &spec.bypass {
        summary.bypass.push(stage("bypass", bypass_entry(b, spec.seed))?);
    }
    Ok(())
}

fn write_summary(dir: &Path, summary: &ExperimentSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = serde_json::to_vec_pretty(summary)?;
    bytes.push(b'\n');
    fs::write(dir.join("summary.json"), bytes)?;
    Ok(())
}

/// Runs every stage of `spec` in order. With an output directory, the
/// summary is written there even when a stage fails, marked incomplete.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    spec.validate()?;
    let mut summary = ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        name: spec.name.clone(),
        seed: spec.seed,
        complete: false,
        failed_stage: None,
        graph_hash: None,
        model_hash: None,
        clean_accuracy: None,
        methods: Vec::new(),
        attacks: Vec::new(),
        bypass: Vec::new(),
    };
    let result = run_stages(spec, &mut summary);
    match &result {
        Ok(()) => summary.complete = true,
        Err(Error::Stage { stage, .. }) => summary.failed_stage = Some(stage.clone()),
        Err(_) => {}
    }
    if let Some(dir) = &spec.output_dir {
        stage("write", write_summary(dir, &summary))?;
    }
    result.map(|()| summary)
}
