//! Model-centric tampering: exponent bit flips on stored parameters and
//! model replacement by retraining on a poisoned graph.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::checkpoint::{model_hash, param_offset};
use crate::gcn::{
    accuracy_of, gradients_for_terms, predict_all, train, LossTerm, Model, ParamBlock, TrainConfig,
};
use crate::graph::{normalize_adjacency, EdgeFlip, EdgeOp, Graph, NormalizedAdjacency, MASK_TEST, MASK_TRAIN};

/// Most significant exponent bit of an IEEE-754 single.
pub const EXPONENT_MSB: u32 = 30;

pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.05;

pub fn bit_flip_value(x: f32) -> f32 {
    f32::from_bits(x.to_bits() ^ (1 << EXPONENT_MSB))
}

/// An attack counts only if it costs strictly more than `threshold` accuracy.
/// Drops within 1e-9 of the threshold count as equal, so 0.80 vs 0.75 is not
/// valid even though the float subtraction lands just above 0.05.
pub fn is_valid_attack(clean_acc: f64, attacked_acc: f64, threshold: f64) -> bool {
    clean_acc - attacked_acc > threshold + 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "bfa")]
    Bfa,
    #[serde(rename = "bfa-f")]
    BfaF,
    #[serde(rename = "bfa-l")]
    BfaL,
    #[serde(rename = "poison-rand")]
    PoisonRandom,
    #[serde(rename = "poison-grad")]
    PoisonGrad,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Bfa => "bfa",
            AttackKind::BfaF => "bfa-f",
            AttackKind::BfaL => "bfa-l",
            AttackKind::PoisonRandom => "poison-rand",
            AttackKind::PoisonGrad => "poison-grad",
        }
    }

    pub fn is_bit_flip(self) -> bool {
        matches!(self, AttackKind::Bfa | AttackKind::BfaF | AttackKind::BfaL)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bfa" => AttackKind::Bfa,
            "bfa-f" => AttackKind::BfaF,
            "bfa-l" => AttackKind::BfaL,
            "poison-rand" => AttackKind::PoisonRandom,
            "poison-grad" => AttackKind::PoisonGrad,
            other => return Err(Error::Config(format!("unknown attack kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttackDetail {
    BitFlip {
        block: ParamBlock,
        /// Index within the block.
        index: usize,
        /// Index in checkpoint order over all parameters.
        flat: usize,
        /// Byte offset of the flipped value in the checkpoint file.
        byte_offset: usize,
        bit: u32,
        before: f32,
        after: f32,
    },
    Poison {
        edges: Vec<(usize, usize)>,
        retrain_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub tampered: Model,
    pub kind: AttackKind,
    pub detail: AttackDetail,
    pub clean_acc: f64,
    pub attacked_acc: f64,
    pub valid: bool,
    pub seed: u64,
}

impl AttackOutcome {
    pub fn manifest(&self, checkpoint: &str) -> AttackManifest {
        AttackManifest {
            checkpoint: checkpoint.to_string(),
            model_hash: model_hash(&self.tampered),
            kind: self.kind,
            detail: self.detail.clone(),
            clean_acc: self.clean_acc,
            attacked_acc: self.attacked_acc,
            valid: self.valid,
            seed: self.seed,
        }
    }
}

/// JSON record of one attack, pointing at the tampered checkpoint on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub checkpoint: String,
    pub model_hash: String,
    pub kind: AttackKind,
    pub detail: AttackDetail,
    pub clean_acc: f64,
    pub attacked_acc: f64,
    pub valid: bool,
    pub seed: u64,
}

/// The clean model and hosted graph an attack is measured against. Accuracy
/// is taken over the test mask, or every node when the graph has none.
pub struct AttackTarget<'a> {
    pub clean: &'a Model,
    pub graph: &'a Graph,
    pub threshold: f64,
    adj: NormalizedAdjacency,
    mask: Vec<usize>,
    clean_acc: f64,
}

impl<'a> AttackTarget<'a> {
    pub fn new(clean: &'a Model, graph: &'a Graph, threshold: f64) -> Result<Self> {
        let adj = normalize_adjacency(graph);
        let mask = match graph.mask(MASK_TEST) {
            Some(m) if !m.is_empty() => m.to_vec(),
            _ => (0..graph.num_nodes()).collect(),
        };
        let preds = predict_all(clean, &adj, graph.features())?;
        let clean_acc = accuracy_of(&preds, graph, &mask)?;
        Ok(AttackTarget { clean, graph, threshold, adj, mask, clean_acc })
    }

    pub fn clean_acc(&self) -> f64 {
        self.clean_acc
    }

    pub fn accuracy(&self, m: &Model) -> Result<f64> {
        let preds = predict_all(m, &self.adj, self.graph.features())?;
        accuracy_of(&preds, self.graph, &self.mask)
    }

    fn outcome(&self, tampered: Model, kind: AttackKind, detail: AttackDetail, seed: u64) -> Result<AttackOutcome> {
        let attacked_acc = self.accuracy(&tampered)?;
        Ok(AttackOutcome {
            tampered,
            kind,
            detail,
            clean_acc: self.clean_acc,
            attacked_acc,
            valid: is_valid_attack(self.clean_acc, attacked_acc, self.threshold),
            seed,
        })
    }
}

/// Flips bit 30 of parameter `flat` (checkpoint order).
pub fn flip_parameter(m: &Model, flat: usize) -> Result<(Model, AttackDetail)> {
    let (block, index) = m
        .locate(flat)
        .ok_or_else(|| Error::Config(format!("parameter {flat} out of {}", m.num_params())))?;
    let before = m.get_flat(flat).expect("located");
    let after = bit_flip_value(before);
    let mut tampered = m.clone();
    tampered.set_flat(flat, after);
    let detail = AttackDetail::BitFlip {
        block,
        index,
        flat,
        byte_offset: param_offset(flat),
        bit: EXPONENT_MSB,
        before,
        after,
    };
    Ok((tampered, detail))
}

fn bfa_in(t: &AttackTarget<'_>, block: Option<ParamBlock>, kind: AttackKind, seed: u64) -> Result<AttackOutcome> {
    let range = match block {
        Some(b) => t.clean.block_range(b),
        None => 0..t.clean.num_params(),
    };
    if range.is_empty() {
        return Err(Error::Config(format!("{kind} has no parameter to flip")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = rng.gen_range(range);
    let (tampered, detail) = flip_parameter(t.clean, flat)?;
    t.outcome(tampered, kind, detail, seed)
}

/// One uniformly chosen parameter across all four blocks.
pub fn bfa_random(t: &AttackTarget<'_>, seed: u64) -> Result<AttackOutcome> {
    bfa_in(t, None, AttackKind::Bfa, seed)
}

/// One uniformly chosen entry of the first-layer bias.
pub fn bfa_first_bias(t: &AttackTarget<'_>, seed: u64) -> Result<AttackOutcome> {
    bfa_in(t, Some(ParamBlock::B1), AttackKind::BfaF, seed)
}

/// One uniformly chosen entry of the last-layer bias.
pub fn bfa_last_bias(t: &AttackTarget<'_>, seed: u64) -> Result<AttackOutcome> {
    bfa_in(t, Some(ParamBlock::B2), AttackKind::BfaL, seed)
}

fn absent_pairs(g: &Graph) -> usize {
    let n = g.num_nodes();
    n * n.saturating_sub(1) / 2 - g.num_edges()
}

fn check_budget(g: &Graph, n_edges: usize) -> Result<()> {
    let available = absent_pairs(g);
    if n_edges > available {
        return Err(Error::PoolTooSmall { requested: n_edges, available });
    }
    Ok(())
}

fn add_edges(g: &Graph, edges: &[(usize, usize)]) -> Result<Graph> {
    let mut poisoned = g.clone();
    for &(u, v) in edges {
        poisoned.apply_edge_flip(&EdgeFlip { u, v, op: EdgeOp::Add })?;
    }
    Ok(poisoned)
}

fn retrain(g: &Graph, cfg: &TrainConfig) -> Result<Model> {
    Ok(train(g, cfg)?.0)
}

/// Adds `n_edges` uniformly random absent edges and retrains on the result.
pub fn poison_random(
    t: &AttackTarget<'_>,
    n_edges: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    let g = t.graph;
    check_budget(g, n_edges)?;
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    let mut edges = Vec::with_capacity(n_edges);
    while edges.len() < n_edges {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let pair = (a.min(b), a.max(b));
        if a != b && !g.has_edge(a, b) && chosen.insert(pair) {
            edges.push(pair);
        }
    }
    let tampered = retrain(&add_edges(g, &edges)?, cfg)?;
    t.outcome(tampered, AttackKind::PoisonRandom, AttackDetail::Poison { edges, retrain_seed: cfg.seed }, seed)
}

/// Gradient surrogate for meta-gradient poisoning. Each step trains a model on
/// the current graph and adds the absent edge whose relaxed adjacency entry
/// has the largest positive gradient of the self-training loss (training
/// labels on the train mask, the model's own predictions elsewhere). Stops
/// early when no absent edge has a positive gradient, then retrains once.
pub fn poison_grad(
    t: &AttackTarget<'_>,
    n_edges: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    let g = t.graph;
    check_budget(g, n_edges)?;
    let n = g.num_nodes();
    let train_set: BTreeSet<usize> = g.mask(MASK_TRAIN).unwrap_or(&[]).iter().copied().collect();
    let mut current = g.clone();
    let mut edges = Vec::with_capacity(n_edges);
    let mut model = (n_edges > 0).then(|| retrain(&current, cfg)).transpose()?;
    while edges.len() < n_edges {
        let m = model.as_ref().expect("trained while edges remain");
        let preds = predict_all(m, &current, current.features())?;
        let terms: Vec<LossTerm> = (0..n)
            .map(|v| {
                let class = if train_set.contains(&v) { g.labels()[v] } else { preds[v] };
                LossTerm { node: v, class, weight: 1.0 }
            })
            .collect();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !current.has_edge(i, j))
            .collect();
        let gs = gradients_for_terms(&m.params(), &current, current.features(), &terms, &[], &pairs)?;
        let best = gs
            .edges
            .iter()
            .filter(|e| e.2 > 0.0)
            .fold(None::<(usize, usize, f64)>, |best, &e| match best {
                Some(b) if b.2 >= e.2 => Some(b),
                _ => Some(e),
            });
        let Some((u, v, _)) = best else { break };
        current.apply_edge_flip(&EdgeFlip { u, v, op: EdgeOp::Add })?;
        edges.push((u, v));
        model = Some(retrain(&current, cfg)?);
    }
    let tampered = match model {
        Some(m) => m,
        None => retrain(&current, cfg)?,
    };
    t.outcome(tampered, AttackKind::PoisonGrad, AttackDetail::Poison { edges, retrain_seed: cfg.seed }, seed)
}

/// Poisoning budget and retraining recipe for the replacement attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub n_edges: usize,
    pub retrain: TrainConfig,
}

/// Runs `trials` independent attacks with seeds `seed, seed + 1, ...`.
pub fn run_attacks(
    t: &AttackTarget<'_>,
    kind: AttackKind,
    trials: usize,
    seed: u64,
    poison: Option<&PoisonConfig>,
) -> Result<Vec<AttackOutcome>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            match kind {
                AttackKind::Bfa => bfa_random(t, s),
                AttackKind::BfaF => bfa_first_bias(t, s),
                AttackKind::BfaL => bfa_last_bias(t, s),
                AttackKind::PoisonRandom | AttackKind::PoisonGrad => {
                    let p = poison.ok_or_else(|| Error::Config(format!("{kind} needs a poisoning config")))?;
                    // Each trial retrains with its own seed.
                    let cfg = p.retrain.clone().with_seed(s);
                    if kind == AttackKind::PoisonRandom {
                        poison_random(t, p.n_edges, &cfg, s)
                    } else {
                        poison_grad(t, p.n_edges, &cfg, s)
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::checkpoint::encode;
    use crate::graph::synthetic::{sbm, SbmConfig};

    #[test]
    fn ieee_examples() {
        assert_eq!(bit_flip_value(2.0).to_bits(), 0x0000_0000);
        assert_eq!(bit_flip_value(1.0).to_bits(), 0x7F80_0000);
        assert_eq!(bit_flip_value(0.5).to_bits(), 0x7F00_0000);
        assert!((bit_flip_value(0.5) - 1.7014e38).abs() / 1.7014e38 < 1e-4);
    }

    #[test]
    fn validity_is_strict() {
        assert!(is_valid_attack(0.80, 0.74, 0.05));
        assert!(!is_valid_attack(0.80, 0.76, 0.05));
        assert!(!is_valid_attack(0.80, 0.75, 0.05));
    }

    fn setup() -> (Model, Graph) {
        let g = sbm(&SbmConfig::default().with_seed(1)).unwrap();
        let m = train(&g, &TrainConfig::default().with_seed(1)).unwrap().0;
        (m, g)
    }

    #[test]
    fn bfa_changes_exactly_one_bit() {
        let (m, g) = setup();
        let t = AttackTarget::new(&m, &g, DEFAULT_VALIDITY_THRESHOLD).unwrap();
        let clean = encode(&m);
        for seed in 0..20 {
            for out in [bfa_random(&t, seed), bfa_first_bias(&t, seed), bfa_last_bias(&t, seed)] {
                let out = out.unwrap();
                let diff: u32 =
                    clean.iter().zip(encode(&out.tampered)).map(|(a, b)| (a ^ b).count_ones()).sum();
                assert_eq!(diff, 1);
                let AttackDetail::BitFlip { block, index, byte_offset, .. } = out.detail else {
                    panic!("bit flip detail expected")
                };
                let tampered = encode(&out.tampered);
                assert_eq!(tampered[byte_offset + 3] ^ clean[byte_offset + 3], 0x40);
                match out.kind {
                    AttackKind::BfaF => assert!(block == ParamBlock::B1 && index < m.hidden_dim),
                    AttackKind::BfaL => assert!(block == ParamBlock::B2 && index < 2),
                    _ => {}
                }
            }
        }
        assert_eq!(bfa_random(&t, 4).unwrap(), bfa_random(&t, 4).unwrap());
    }

    #[test]
    fn zero_budget_poisoning_is_a_clean_retrain() {
        let (m, g) = setup();
        let t = AttackTarget::new(&m, &g, DEFAULT_VALIDITY_THRESHOLD).unwrap();
        let cfg = TrainConfig::default().with_seed(1);
        for out in [poison_random(&t, 0, &cfg, 3).unwrap(), poison_grad(&t, 0, &cfg, 3).unwrap()] {
            assert_eq!(out.tampered, m);
            assert!(!out.valid);
        }
        let a = poison_random(&t, 5, &cfg, 3).unwrap();
        assert_eq!(a, poison_random(&t, 5, &cfg, 3).unwrap());
        let AttackDetail::Poison { edges, .. } = &a.detail else { panic!() };
        assert_eq!(edges.len(), 5);
        assert!(edges.iter().all(|&(u, v)| !g.has_edge(u, v)));
        assert!(poison_random(&t, usize::MAX, &cfg, 3).is_err());
    }
}
