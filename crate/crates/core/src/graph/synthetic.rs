//! Seeded synthetic graphs: a stochastic block model for desk-scale
//! experiments and a citation-network-shaped generator for scale tests.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Features, Graph, MASK_TEST, MASK_TRAIN};
use crate::error::{Error, Result};

/// Stochastic block model with class-aligned binary features. Feature `j` is
/// aligned with class `j % c`; a node turns on aligned features with
/// probability `feature_p_aligned` and the rest with `feature_p_other`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub num_features: usize,
    pub feature_p_aligned: f64,
    pub feature_p_other: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    /// The desk-scale acceptance graph: 2 blocks of 40, p_in 0.2, p_out 0.02, 16 binary features.
    fn default() -> Self {
        SbmConfig {
            block_sizes: vec![40, 40],
            p_in: 0.2,
            p_out: 0.02,
            num_features: 16,
            feature_p_aligned: 0.3,
            feature_p_other: 0.1,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

pub fn sbm(cfg: &SbmConfig) -> Result<Graph> {
    for (name, p) in [
        ("p_in", cfg.p_in),
        ("p_out", cfg.p_out),
        ("feature_p_aligned", cfg.feature_p_aligned),
        ("feature_p_other", cfg.feature_p_other),
        ("train_fraction", cfg.train_fraction),
    ] {
        check_prob(name, p)?;
    }
    let c = cfg.block_sizes.len();
    if c == 0 || cfg.block_sizes.contains(&0) {
        return Err(Error::Config("SBM needs at least one non-empty block".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> =
        cfg.block_sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
    let n = labels.len();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let d = cfg.num_features;
    let mut values = vec![0.0; n * d];
    for (v, &label) in labels.iter().enumerate() {
        for j in 0..d {
            let p = if j % c == label { cfg.feature_p_aligned } else { cfg.feature_p_other };
            if rng.gen::<f64>() < p {
                values[v * d + j] = 1.0;
            }
        }
    }

    let masks = split_masks(n, cfg.train_fraction, &mut rng);
    Graph::new(n, c, &edges, Features::Dense { dim: d, values }, labels, masks)
}

fn split_masks(n: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> BTreeMap<String, Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    BTreeMap::from([(MASK_TRAIN.to_string(), train), (MASK_TEST.to_string(), test)])
}

/// Shape of a citation benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationConfig {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Active binary features per node.
    pub features_per_node: usize,
    /// Probability that an edge or an active feature follows the node's class.
    pub homophily: f64,
    pub train_per_class: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl CitationConfig {
    /// 2708 nodes, 5429 edges, 1433 binary attributes, 7 classes.
    pub fn cora_scale(seed: u64) -> Self {
        CitationConfig {
            num_nodes: 2708,
            num_edges: 5429,
            num_features: 1433,
            num_classes: 7,
            features_per_node: 18,
            homophily: 0.8,
            train_per_class: 20,
            test_size: 1000,
            seed,
        }
    }
}

/// Citation-like graph with exactly `num_edges` undirected edges.
pub fn citation_like(cfg: &CitationConfig) -> Result<Graph> {
    let (n, c, d) = (cfg.num_nodes, cfg.num_classes, cfg.num_features);
    check_prob("homophily", cfg.homophily)?;
    if c == 0 || n < c || d < c {
        return Err(Error::Config("citation graph needs n >= c and d >= c".into()));
    }
    if cfg.num_edges > n * (n - 1) / 2 {
        return Err(Error::Config(format!("{} edges do not fit in {n} nodes", cfg.num_edges)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..n).map(|v| v % c).collect();
    let by_class: Vec<Vec<usize>> = (0..c).map(|k| (k..n).step_by(c).collect()).collect();

    let mut seen = BTreeSet::new();
    while seen.len() < cfg.num_edges {
        let u = rng.gen_range(0..n);
        let v = if rng.gen::<f64>() < cfg.homophily {
            *by_class[labels[u]].choose(&mut rng).expect("classes are non-empty")
        } else {
            rng.gen_range(0..n)
        };
        if u != v {
            seen.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<_> = seen.into_iter().collect();

    let block = d / c;
    let mut values = vec![0.0; n * d];
    for (v, &label) in labels.iter().enumerate() {
        for _ in 0..cfg.features_per_node {
            let j = if rng.gen::<f64>() < cfg.homophily {
                label * block + rng.gen_range(0..block)
            } else {
                rng.gen_range(0..d)
            };
            values[v * d + j] = 1.0;
        }
    }

    let mut train = Vec::new();
    for members in &by_class {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        train.extend(m.into_iter().take(cfg.train_per_class));
    }
    train.sort_unstable();
    let mut rest: Vec<usize> = (0..n).filter(|v| train.binary_search(v).is_err()).collect();
    rest.shuffle(&mut rng);
    let mut test: Vec<usize> = rest.into_iter().take(cfg.test_size).collect();
    test.sort_unstable();
    let masks = BTreeMap::from([(MASK_TRAIN.to_string(), train), (MASK_TEST.to_string(), test)]);
    Graph::new(n, c, &edges, Features::Dense { dim: d, values }, labels, masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_is_seeded() {
        let a = sbm(&SbmConfig::default().with_seed(5)).unwrap();
        let b = sbm(&SbmConfig::default().with_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_nodes(), 80);
        assert_eq!(a.features().dim(), 16);
        assert_ne!(a, sbm(&SbmConfig::default().with_seed(6)).unwrap());
    }

    #[test]
    fn citation_counts_are_exact() {
        let cfg = CitationConfig {
            num_nodes: 300,
            num_edges: 600,
            num_features: 70,
            num_classes: 7,
            features_per_node: 5,
            homophily: 0.8,
            train_per_class: 5,
            test_size: 100,
            seed: 1,
        };
        let g = citation_like(&cfg).unwrap();
        assert_eq!(g.num_edges(), 600);
        assert_eq!(g.mask(MASK_TRAIN).unwrap().len(), 35);
        assert_eq!(g.mask(MASK_TEST).unwrap().len(), 100);
    }
}
