//! Greedy construction of inductive fingerprint graphs.
//!
//! Starting from a shadow graph, the search edits features of the fingerprint
//! nodes and flips edges incident to them, one move at a time, to raise the
//! summed fingerprint loss. A move is feasible only if no clean prediction on
//! the graph changes; since a two-layer GCN sees two hops, only the 2-hop
//! neighborhoods of the touched nodes are rechecked.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transductive::{score_table_f, score_table_l, select_fingerprints};
use super::{Fingerprint, FingerprintMethod, Provenance};
use crate::error::{Error, Result};
use crate::gcn::{
    argmax_total, gradients_for_terms, local_logits, nll, predict_all, softmax, LossTerm, Model,
    Params, Posteriors,
};
use crate::graph::{normalize_adjacency, EdgeFlip, EdgeOp, FeatureEdit, Graph, GraphDelta};

/// Posterior access to the clean model on arbitrary graphs.
pub trait PosteriorOracle {
    /// Posterior rows for `nodes` of `g`, in the order given.
    fn posteriors(&self, g: &Graph, nodes: &[usize]) -> Result<Vec<Vec<f64>>>;
}

/// Oracle backed by a local copy of the model.
pub struct ModelOracle {
    params: Params,
}

impl ModelOracle {
    pub fn new(m: &Model) -> Self {
        ModelOracle { params: m.params() }
    }
}

impl PosteriorOracle for ModelOracle {
    fn posteriors(&self, g: &Graph, nodes: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(local_logits(&self.params, g, nodes)?.iter().map(|z| softmax(z)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InductiveConfig {
    pub k: usize,
    /// Maximum number of accepted moves.
    pub budget: usize,
    /// Moves tried per round: the best-ranked ones for gradient search, a
    /// uniform sample for posterior search.
    pub move_pool_size: usize,
    pub seed: u64,
    /// Continuous feature step as a multiple of the feature's standard deviation.
    pub feature_step: f64,
}

impl Default for InductiveConfig {
    fn default() -> Self {
        InductiveConfig { k: 5, budget: 10, move_pool_size: 256, seed: 0, feature_step: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetReached,
    /// No feasible move improved the objective.
    Stalled,
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Move {
    Feature(FeatureEdit),
    Edge(EdgeFlip),
}

impl Move {
    fn touched(&self) -> Vec<usize> {
        match self {
            Move::Feature(e) => vec![e.node],
            Move::Edge(f) => vec![f.u, f.v],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductiveFingerprintSet {
    pub method: FingerprintMethod,
    pub seed: u64,
    pub budget: usize,
    pub base_graph_hash: String,
    pub graph: Arc<Graph>,
    pub fingerprints: Vec<Fingerprint>,
    /// Random target class per fingerprint, randomized variants only.
    pub targets: Option<Vec<usize>>,
    pub delta: GraphDelta,
    pub budget_used: usize,
    /// Objective before any move, then after each accepted move.
    pub objective_trace: Vec<f64>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintCheck {
    Pass,
    Fail(Vec<usize>),
}

impl ConstraintCheck {
    pub fn is_pass(&self) -> bool {
        matches!(self, ConstraintCheck::Pass)
    }
}

/// Compares clean predictions on `base` and `perturbed`. With `full` unset,
/// only the 2-hop neighborhoods of `touched` (in either graph) are evaluated.
pub fn check_constraint(
    m: &Model,
    base: &Graph,
    perturbed: &Graph,
    touched: &[usize],
    full: bool,
) -> Result<ConstraintCheck> {
    if base.num_nodes() != perturbed.num_nodes() {
        return Err(Error::Dimension(format!(
            "base has {} nodes, perturbed has {}",
            base.num_nodes(),
            perturbed.num_nodes()
        )));
    }
    for &t in touched {
        base.check_node(t)?;
    }
    let violated: Vec<usize> = if full {
        let a = predict_all(m, &normalize_adjacency(base), base.features())?;
        let b = predict_all(m, &normalize_adjacency(perturbed), perturbed.features())?;
        (0..a.len()).filter(|&v| a[v] != b[v]).collect()
    } else {
        let nodes = union(base.k_hop_union(touched, 2), perturbed.k_hop_union(touched, 2));
        let p = m.params();
        let a = local_logits(&p, base, &nodes)?;
        let b = local_logits(&p, perturbed, &nodes)?;
        nodes
            .iter()
            .zip(a.iter().zip(&b))
            .filter(|(_, (za, zb))| argmax_total(za) != argmax_total(zb))
            .map(|(&v, _)| v)
            .collect()
    };
    Ok(if violated.is_empty() { ConstraintCheck::Pass } else { ConstraintCheck::Fail(violated) })
}

fn union(mut a: Vec<usize>, b: Vec<usize>) -> Vec<usize> {
    a.extend(b);
    a.sort_unstable();
    a.dedup();
    a
}

enum Evaluator<'a> {
    Gradient(Params),
    Posterior(&'a dyn PosteriorOracle),
}

impl Evaluator<'_> {
    /// Logits (gradient access) or posteriors (oracle access) for `nodes`.
    fn rows(&self, g: &Graph, nodes: &[usize]) -> Result<Vec<Vec<f64>>> {
        match self {
            Evaluator::Gradient(p) => local_logits(p, g, nodes),
            Evaluator::Posterior(o) => {
                let rows = o.posteriors(g, nodes)?;
                if rows.len() != nodes.len() {
                    return Err(Error::Oracle(format!(
                        "asked for {} rows, got {}",
                        nodes.len(),
                        rows.len()
                    )));
                }
                Ok(rows)
            }
        }
    }

    fn loss(&self, row: &[f64], class: usize) -> f64 {
        match self {
            Evaluator::Gradient(_) => nll(row, class),
            Evaluator::Posterior(_) => -row[class].max(f64::MIN_POSITIVE).ln(),
        }
    }
}

struct Search<'a> {
    eval: Evaluator<'a>,
    graph: Graph,
    base_preds: Vec<usize>,
    terms: Vec<LossTerm>,
    nodes: Vec<usize>,
    binary: bool,
    ranges: Vec<(f64, f64)>,
    steps: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(
        eval: Evaluator<'a>,
        shadow: &Graph,
        base_preds: Vec<usize>,
        terms: Vec<LossTerm>,
        feature_step: f64,
    ) -> Self {
        let mut nodes: Vec<usize> = terms.iter().map(|t| t.node).collect();
        nodes.sort_unstable();
        nodes.dedup();
        Search {
            eval,
            graph: shadow.clone(),
            base_preds,
            terms,
            nodes,
            binary: shadow.features().is_binary(),
            ranges: shadow.feature_ranges(),
            steps: shadow.feature_std().iter().map(|s| s * feature_step).collect(),
        }
    }

    fn objective_from(&self, nodes: &[usize], rows: &[Vec<f64>]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let i = nodes.binary_search(&t.node).expect("fingerprint rows are evaluated");
                t.weight * self.eval.loss(&rows[i], t.class)
            })
            .sum()
    }

    fn objective(&self) -> Result<f64> {
        let rows = self.eval.rows(&self.graph, &self.nodes)?;
        Ok(self.objective_from(&self.nodes, &rows))
    }

    fn apply(&mut self, mv: &Move) -> Result<Move> {
        match *mv {
            Move::Feature(e) => {
                let old = self.graph.features().get(e.node, e.dim);
                self.graph.apply_feature_edit(&e)?;
                Ok(Move::Feature(FeatureEdit { value: old, ..e }))
            }
            Move::Edge(f) => {
                self.graph.apply_edge_flip(&f)?;
                let op = match f.op {
                    EdgeOp::Add => EdgeOp::Remove,
                    EdgeOp::Remove => EdgeOp::Add,
                };
                Ok(Move::Edge(EdgeFlip { op, ..f }))
            }
        }
    }

    /// Objective after `mv`, or `None` if it changes a clean prediction. The
    /// working graph is restored before returning.
    fn evaluate(&mut self, mv: &Move) -> Result<Option<f64>> {
        let touched = mv.touched();
        let before = self.graph.k_hop_union(&touched, 2);
        let undo = self.apply(mv)?;
        let result = self.evaluate_applied(&touched, before);
        self.apply(&undo)?;
        result
    }

    fn evaluate_applied(&self, touched: &[usize], before: Vec<usize>) -> Result<Option<f64>> {
        let check = union(before, self.graph.k_hop_union(touched, 2));
        let nodes = union(check.clone(), self.nodes.clone());
        let rows = self.eval.rows(&self.graph, &nodes)?;
        for (&v, row) in nodes.iter().zip(&rows) {
            if check.binary_search(&v).is_ok() && argmax_total(row) != self.base_preds[v] {
                return Ok(None);
            }
        }
        Ok(Some(self.objective_from(&nodes, &rows)))
    }

    fn edge_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.graph.num_nodes();
        let mut pairs = Vec::new();
        for &i in &self.nodes {
            for u in 0..n {
                if u == i || (self.nodes.binary_search(&u).is_ok() && u < i) {
                    continue;
                }
                pairs.push((i, u));
            }
        }
        pairs
    }

    fn edge_move(&self, i: usize, u: usize) -> Move {
        let op = if self.graph.has_edge(i, u) { EdgeOp::Remove } else { EdgeOp::Add };
        Move::Edge(EdgeFlip { u: i, v: u, op })
    }

    /// Feature values reachable from `x` in one move on `dim`.
    fn feature_targets(&self, x: f64, dim: usize) -> Vec<f64> {
        if self.binary {
            return vec![1.0 - x];
        }
        let (lo, hi) = self.ranges[dim];
        let step = self.steps[dim];
        [x + step, x - step]
            .into_iter()
            .map(|t| t.clamp(lo, hi))
            .filter(|&t| step > 0.0 && t != x)
            .collect()
    }

    /// Every single move, in a fixed order.
    fn all_moves(&self) -> Vec<Move> {
        let mut moves = Vec::new();
        let dim = self.graph.features().dim();
        for &i in &self.nodes {
            for d in 0..dim {
                let x = self.graph.features().get(i, d);
                for value in self.feature_targets(x, d) {
                    moves.push(Move::Feature(FeatureEdit { node: i, dim: d, value }));
                }
            }
        }
        for (i, u) in self.edge_pairs() {
            moves.push(self.edge_move(i, u));
        }
        moves
    }

    /// Moves ranked by the first-order estimate of their objective change.
    fn ranked_moves(&self, params: &Params) -> Result<Vec<(Move, f64)>> {
        let pairs = self.edge_pairs();
        let gs = gradients_for_terms(
            params,
            &self.graph,
            self.graph.features(),
            &self.terms,
            &self.nodes,
            &pairs,
        )?;
        let mut ranked = Vec::new();
        for (i, grad) in &gs.features {
            for (d, &g) in grad.iter().enumerate() {
                let x = self.graph.features().get(*i, d);
                let value = if self.binary {
                    Some(1.0 - x)
                } else {
                    let (lo, hi) = self.ranges[d];
                    let t = (x + g.signum() * self.steps[d]).clamp(lo, hi);
                    (g != 0.0 && t != x).then_some(t)
                };
                if let Some(value) = value {
                    ranked.push((Move::Feature(FeatureEdit { node: *i, dim: d, value }), g * (value - x)));
                }
            }
        }
        for &(i, u, g) in &gs.edges {
            let mv = self.edge_move(i, u);
            let gain = if self.graph.has_edge(i, u) { -g } else { g };
            ranked.push((mv, gain));
        }
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked)
    }

    fn run(mut self, budget: usize, move_pool_size: usize, rng: &mut ChaCha8Rng) -> Result<Outcome> {
        let mut trace = vec![self.objective()?];
        let mut delta = GraphDelta::default();
        let stop = loop {
            if delta.len() >= budget {
                break StopReason::BudgetReached;
            }
            let current = *trace.last().expect("trace starts non-empty");
            let params = match &self.eval {
                Evaluator::Gradient(p) => Some(p.clone()),
                Evaluator::Posterior(_) => None,
            };
            let accepted = match params {
                Some(p) => {
                    let ranked = self.ranked_moves(&p)?;
                    if ranked.is_empty() {
                        break StopReason::NoCandidates;
                    }
                    let mut found = None;
                    for (mv, _) in ranked.into_iter().take(move_pool_size) {
                        if let Some(obj) = self.evaluate(&mv)? {
                            if obj > current {
                                found = Some((mv, obj));
                                break;
                            }
                        }
                    }
                    found
                }
                None => {
                    let moves = self.all_moves();
                    if moves.is_empty() {
                        break StopReason::NoCandidates;
                    }
                    let picked: Vec<Move> = if move_pool_size >= moves.len() {
                        moves
                    } else {
                        sample(rng, moves.len(), move_pool_size).into_iter().map(|i| moves[i]).collect()
                    };
                    let mut best: Option<(Move, f64)> = None;
                    for mv in picked {
                        if let Some(obj) = self.evaluate(&mv)? {
                            if obj > current && best.is_none_or(|(_, b)| obj > b) {
                                best = Some((mv, obj));
                            }
                        }
                    }
                    best
                }
            };
            let Some((mv, obj)) = accepted else {
                break StopReason::Stalled;
            };
            self.apply(&mv)?;
            match mv {
                Move::Feature(e) => delta.feature_edits.push(e),
                Move::Edge(f) => delta.edge_flips.push(f),
            }
            trace.push(obj);
        };
        Ok(Outcome { graph: self.graph, delta, trace, stop })
    }
}

struct Outcome {
    graph: Graph,
    delta: GraphDelta,
    trace: Vec<f64>,
    stop: StopReason,
}

fn check_k(shadow: &Graph, k: usize) -> Result<Vec<usize>> {
    let pool = shadow.candidate_pool();
    if k == 0 || k > pool.len() {
        return Err(Error::PoolTooSmall { requested: k, available: pool.len() });
    }
    Ok(pool)
}

fn finish(
    shadow: &Graph,
    cfg: &InductiveConfig,
    method: FingerprintMethod,
    picked: &[(usize, f64)],
    base_preds: &[usize],
    targets: Option<Vec<usize>>,
    pool_size: usize,
    out: Outcome,
) -> InductiveFingerprintSet {
    let graph = Arc::new(out.graph);
    let provenance = Provenance { method, seed: cfg.seed, pool_size };
    let fingerprints = picked
        .iter()
        .map(|&(node, score)| Fingerprint {
            node,
            expected_label: base_preds[node],
            score,
            attached_graph: Some(Arc::clone(&graph)),
            provenance,
        })
        .collect();
    InductiveFingerprintSet {
        method,
        seed: cfg.seed,
        budget: cfg.budget,
        base_graph_hash: shadow.canonical_hash(),
        graph,
        fingerprints,
        targets,
        budget_used: out.delta.len(),
        delta: out.delta,
        objective_trace: out.trace,
        stop: out.stop,
    }
}

/// Gradient-guided construction. Fingerprints start as the Transductive-F top-k
/// of the shadow graph.
pub fn construct_inductive_f(
    m: &Model,
    shadow: &Graph,
    cfg: &InductiveConfig,
) -> Result<InductiveFingerprintSet> {
    let pool = check_k(shadow, cfg.k)?;
    let base_preds = predict_all(m, &normalize_adjacency(shadow), shadow.features())?;
    let table = score_table_f(m, shadow, &pool)?;
    let picked: Vec<(usize, f64)> =
        select_fingerprints(&table, cfg.k)?.into_iter().map(|v| (v, table.scores[&v])).collect();
    let terms =
        picked.iter().map(|&(v, _)| LossTerm { node: v, class: base_preds[v], weight: 1.0 }).collect();
    let search =
        Search::new(Evaluator::Gradient(m.params()), shadow, base_preds.clone(), terms, cfg.feature_step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = search.run(cfg.budget, cfg.move_pool_size, &mut rng)?;
    Ok(finish(shadow, cfg, FingerprintMethod::F, &picked, &base_preds, None, pool.len(), out))
}

fn oracle_predictions(oracle: &dyn PosteriorOracle, g: &Graph) -> Result<Posteriors> {
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let rows = oracle.posteriors(g, &all)?;
    if rows.len() != all.len() {
        return Err(Error::Oracle(format!("asked for {} rows, got {}", all.len(), rows.len())));
    }
    Ok(Posteriors { num_classes: g.num_classes(), values: rows.concat() })
}

/// Gradient-free construction through posterior queries. Fingerprints start as
/// the Transductive-L top-k of the shadow graph.
pub fn construct_inductive_l(
    oracle: &dyn PosteriorOracle,
    shadow: &Graph,
    cfg: &InductiveConfig,
) -> Result<InductiveFingerprintSet> {
    let pool = check_k(shadow, cfg.k)?;
    let post = oracle_predictions(oracle, shadow)?;
    let base_preds = post.predictions();
    let table = score_table_l(&post, &pool)?;
    let picked: Vec<(usize, f64)> =
        select_fingerprints(&table, cfg.k)?.into_iter().map(|v| (v, table.scores[&v])).collect();
    let terms =
        picked.iter().map(|&(v, _)| LossTerm { node: v, class: base_preds[v], weight: 1.0 }).collect();
    let search =
        Search::new(Evaluator::Posterior(oracle), shadow, base_preds.clone(), terms, cfg.feature_step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = search.run(cfg.budget, cfg.move_pool_size, &mut rng)?;
    Ok(finish(shadow, cfg, FingerprintMethod::L, &picked, &base_preds, None, pool.len(), out))
}

/// How the randomized construction reaches the clean model.
pub enum ModelAccess<'a> {
    /// Gradient search (randF).
    Gradient(&'a Model),
    /// Posterior search (randL).
    Posterior(&'a dyn PosteriorOracle),
}

/// Draws `k` fingerprint nodes and a random target class for each from the
/// seed, skipping nodes whose target is already their prediction, then
/// searches for a graph that pulls each node toward its target without
/// changing any prediction. The recorded objective is the negated summed
/// target loss, so it rises as the targets get closer.
pub fn construct_inductive_randomized(
    access: ModelAccess<'_>,
    shadow: &Graph,
    cfg: &InductiveConfig,
) -> Result<InductiveFingerprintSet> {
    let pool = check_k(shadow, cfg.k)?;
    let (method, base_preds) = match &access {
        ModelAccess::Gradient(m) => {
            (FingerprintMethod::RandF, predict_all(m, &normalize_adjacency(shadow), shadow.features())?)
        }
        ModelAccess::Posterior(o) => (FingerprintMethod::RandL, oracle_predictions(*o, shadow)?.predictions()),
    };
    let c = shadow.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = pool.clone();
    order.shuffle(&mut rng);
    let mut picked = Vec::with_capacity(cfg.k);
    let mut targets = Vec::with_capacity(cfg.k);
    for v in order {
        if picked.len() == cfg.k {
            break;
        }
        let target = rng.gen_range(0..c);
        if target != base_preds[v] {
            picked.push((v, 0.0));
            targets.push(target);
        }
    }
    if picked.len() < cfg.k {
        return Err(Error::PoolTooSmall { requested: cfg.k, available: picked.len() });
    }
    let terms = picked
        .iter()
        .zip(&targets)
        .map(|(&(v, _), &class)| LossTerm { node: v, class, weight: -1.0 })
        .collect();
    let eval = match access {
        ModelAccess::Gradient(m) => Evaluator::Gradient(m.params()),
        ModelAccess::Posterior(o) => Evaluator::Posterior(o),
    };
    let search = Search::new(eval, shadow, base_preds.clone(), terms, cfg.feature_step);
    let out = search.run(cfg.budget, cfg.move_pool_size, &mut rng)?;
    Ok(finish(shadow, cfg, method, &picked, &base_preds, Some(targets), pool.len(), out))
}
