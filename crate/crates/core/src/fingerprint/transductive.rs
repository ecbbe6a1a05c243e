use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Fingerprint, FingerprintMethod, Provenance, ScoreTable};
use crate::error::{Error, Result};
use crate::gcn::{
    forward, hidden_preactivations, param_gradients, predict, predict_all, Model, Posteriors,
};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};

/// Sum over W1, b1, W2, b2 of the L2 norm of `∂L(f(G)_v, ŷ_v)/∂θ`, with `ŷ_v`
/// the clean model's own prediction.
pub fn score_transductive_f(m: &Model, g: &Graph, v: usize) -> Result<f64> {
    g.check_node(v)?;
    let adj = normalize_adjacency(g);
    let y = predict(m, &adj, g.features(), v)?;
    score_f_with(m, g, &adj, v, y)
}

fn score_f_with(m: &Model, g: &Graph, adj: &NormalizedAdjacency, v: usize, y: usize) -> Result<f64> {
    let gs = param_gradients(m, adj, g.features(), v, y)?;
    if !gs.is_finite() {
        return Err(Error::NonFiniteGradient(v));
    }
    Ok(gs.param_norm_sum())
}

/// `1 − max_k p_k` for the posterior row of `v`.
pub fn score_transductive_l(post: &Posteriors, v: usize) -> Result<f64> {
    if v >= post.num_nodes() {
        return Err(Error::NodeOutOfRange { node: v, num_nodes: post.num_nodes() });
    }
    let row = post.row(v);
    let sum: f64 = row.iter().sum();
    if row.is_empty() || row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::MalformedPosterior(v));
    }
    let max = row.iter().copied().fold(0.0, f64::max);
    Ok((1.0 - max).max(0.0))
}

fn check_pool(g: &Graph, pool: &[usize]) -> Result<()> {
    pool.iter().try_for_each(|&v| g.check_node(v))
}

pub fn score_table_f(m: &Model, g: &Graph, pool: &[usize]) -> Result<ScoreTable> {
    check_pool(g, pool)?;
    let adj = normalize_adjacency(g);
    let preds = predict_all(m, &adj, g.features())?;
    let scores = pool
        .par_iter()
        .map(|&v| score_f_with(m, g, &adj, v, preds[v]).map(|s| (v, s)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ScoreTable { method: FingerprintMethod::F, scores })
}

pub fn score_table_l(post: &Posteriors, pool: &[usize]) -> Result<ScoreTable> {
    let scores = pool
        .iter()
        .map(|&v| score_transductive_l(post, v).map(|s| (v, s)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ScoreTable { method: FingerprintMethod::L, scores })
}

/// The `k` highest-scoring nodes, best first, ties to the smaller id.
pub fn select_fingerprints(table: &ScoreTable, k: usize) -> Result<Vec<usize>> {
    if k > table.len() {
        return Err(Error::PoolTooSmall { requested: k, available: table.len() });
    }
    let mut entries: Vec<(usize, f64)> = table.scores.iter().map(|(&v, &s)| (v, s)).collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(entries.into_iter().take(k).map(|(v, _)| v).collect())
}

fn score_pool(
    m: &Model,
    g: &Graph,
    pool: &[usize],
    method: FingerprintMethod,
) -> Result<ScoreTable> {
    match method {
        FingerprintMethod::F => score_table_f(m, g, pool),
        FingerprintMethod::L => {
            let post = forward(m, &normalize_adjacency(g), g.features())?;
            check_pool(g, pool)?;
            score_table_l(&post, pool)
        }
        other => Err(Error::Config(format!("{other} is not a scoring method"))),
    }
}

fn package(
    m: &Model,
    g: &Graph,
    picked: &[(usize, f64)],
    provenance: Provenance,
) -> Result<Vec<Fingerprint>> {
    let preds = predict_all(m, &normalize_adjacency(g), g.features())?;
    Ok(picked
        .iter()
        .map(|&(node, score)| Fingerprint {
            node,
            expected_label: preds[node],
            score,
            attached_graph: None,
            provenance,
        })
        .collect())
}

/// Deterministic top-`k` over the whole pool with Transductive-F or -L scores.
pub fn generate(
    m: &Model,
    g: &Graph,
    pool: &[usize],
    k: usize,
    method: FingerprintMethod,
) -> Result<Vec<Fingerprint>> {
    let table = score_pool(m, g, pool, method)?;
    let picked: Vec<(usize, f64)> =
        select_fingerprints(&table, k)?.into_iter().map(|v| (v, table.scores[&v])).collect();
    package(m, g, &picked, Provenance { method, seed: 0, pool_size: pool.len() })
}

/// Samples `sample_size` candidates from `pool`, scores them and keeps the top `k`.
pub fn generate_randomized(
    m: &Model,
    g: &Graph,
    pool: &[usize],
    sample_size: usize,
    k: usize,
    seed: u64,
    method: FingerprintMethod,
) -> Result<Vec<Fingerprint>> {
    if sample_size > pool.len() {
        return Err(Error::PoolTooSmall { requested: sample_size, available: pool.len() });
    }
    if k > sample_size {
        return Err(Error::PoolTooSmall { requested: k, available: sample_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled: Vec<usize> = if sample_size == pool.len() {
        pool.to_vec()
    } else {
        sample(&mut rng, pool.len(), sample_size).into_iter().map(|i| pool[i]).collect()
    };
    let table = score_pool(m, g, &sampled, method)?;
    let picked: Vec<(usize, f64)> =
        select_fingerprints(&table, k)?.into_iter().map(|v| (v, table.scores[&v])).collect();
    package(m, g, &picked, Provenance { method, seed, pool_size: sample_size })
}

/// Uniform sample of `k` pool nodes without replacement, in draw order.
pub fn baseline_random(
    m: &Model,
    g: &Graph,
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<Fingerprint>> {
    check_pool(g, pool)?;
    if k > pool.len() {
        return Err(Error::PoolTooSmall { requested: k, available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, f64)> =
        sample(&mut rng, pool.len(), k).into_iter().map(|i| (pool[i], 0.0)).collect();
    package(
        m,
        g,
        &picked,
        Provenance { method: FingerprintMethod::Random, seed, pool_size: pool.len() },
    )
}

/// Greedy maximum coverage of hidden units with positive pre-activation. Each
/// fingerprint's score is the number of units it newly covered.
pub fn baseline_manc(m: &Model, g: &Graph, pool: &[usize], k: usize) -> Result<Vec<Fingerprint>> {
    check_pool(g, pool)?;
    if k > pool.len() {
        return Err(Error::PoolTooSmall { requested: k, available: pool.len() });
    }
    let h = m.hidden_dim;
    let s1 = hidden_preactivations(m, &normalize_adjacency(g), g.features())?;
    let mut candidates: Vec<usize> = pool.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let mut covered = vec![false; h];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let (pos, gain) = candidates
            .iter()
            .enumerate()
            .map(|(pos, &v)| {
                let gain = (0..h).filter(|&u| !covered[u] && s1[v * h + u] > 0.0).count();
                (pos, gain)
            })
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let v = candidates.remove(pos);
        for (u, c) in covered.iter_mut().enumerate() {
            *c |= s1[v * h + u] > 0.0;
        }
        picked.push((v, gain as f64));
    }
    package(m, g, &picked, Provenance { method: FingerprintMethod::Manc, seed: 0, pool_size: pool.len() })
}

/// Fraction of hidden units activated by at least one of `nodes`.
pub fn activation_coverage(m: &Model, g: &Graph, nodes: &[usize]) -> Result<f64> {
    let h = m.hidden_dim;
    let s1 = hidden_preactivations(m, &normalize_adjacency(g), g.features())?;
    let covered = (0..h).filter(|&u| nodes.iter().any(|&v| s1[v * h + u] > 0.0)).count();
    Ok(covered as f64 / h.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::gcn::Params;
    use crate::graph::Features;

    fn table(scores: &[(usize, f64)]) -> ScoreTable {
        ScoreTable { method: FingerprintMethod::F, scores: scores.iter().copied().collect() }
    }

    #[test]
    fn selection_order_and_ties() {
        let t = table(&[(0, 0.9), (1, 0.1), (2, 0.5)]);
        assert_eq!(select_fingerprints(&t, 2).unwrap(), vec![0, 2]);
        assert_eq!(select_fingerprints(&t, 3).unwrap(), vec![0, 2, 1]);
        let t = table(&[(4, 0.3), (2, 0.3), (9, 0.3)]);
        assert_eq!(select_fingerprints(&t, 2).unwrap(), vec![2, 4]);
        assert!(matches!(select_fingerprints(&t, 4), Err(Error::PoolTooSmall { .. })));
    }

    fn post(rows: &[&[f64]]) -> Posteriors {
        Posteriors { num_classes: rows[0].len(), values: rows.concat() }
    }

    #[test]
    fn transductive_l_examples() {
        let p = post(&[&[1.0, 0.0, 0.0], &[0.6, 0.3, 0.1]]);
        assert_eq!(score_transductive_l(&p, 0).unwrap(), 0.0);
        assert!((score_transductive_l(&p, 1).unwrap() - 0.4).abs() < 1e-15);
        let u = post(&[&[0.25; 4]]);
        assert_eq!(score_transductive_l(&u, 0).unwrap(), 0.75);
        let bad = post(&[&[0.7, 0.7]]);
        assert!(matches!(score_transductive_l(&bad, 0), Err(Error::MalformedPosterior(0))));
    }

    fn star() -> Graph {
        Graph::new(
            4,
            2,
            &[(0, 1), (0, 2), (0, 3)],
            Features::Dense { dim: 2, values: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0] },
            vec![0, 1, 0, 1],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn transductive_f_with_zero_second_layer() {
        let g = star();
        let r = (0.5f64 * 0.5 * 2.0).sqrt();
        // dead hidden layer: only db2 = softmax(0) - onehot survives
        let mut p = Params::zeros(2, 3, 2);
        p.b1 = vec![-1.0; 3];
        let s = score_transductive_f(&Model::from_params(&p, 0), &g, 2).unwrap();
        assert!((s - r).abs() < 1e-12, "{s} vs {r}");

        // live hidden layer: dW2 = (Â·H)_v ⊗ r adds ‖(Â·H)_v‖·‖r‖, dW1 and db1 vanish
        p.w1 = vec![0.4, -0.2, 0.1, 0.3, 0.5, -0.6];
        p.b1 = vec![0.0; 3];
        let m = Model::from_params(&p, 0);
        let adj = normalize_adjacency(&g);
        let s1 = hidden_preactivations(&m, &adj, g.features()).unwrap();
        let mut agg = [0.0; 3];
        for (j, w) in adj.row(2) {
            for k in 0..3 {
                agg[k] += w * s1[j * 3 + k].max(0.0);
            }
        }
        let expected = r * (1.0 + agg.iter().map(|x| x * x).sum::<f64>().sqrt());
        let s = score_transductive_f(&m, &g, 2).unwrap();
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn manc_greedy_coverage() {
        let g = star();
        let mut p = Params::zeros(2, 2, 2);
        // unit 0 fires on dim 0, unit 1 on dim 1
        p.w1 = vec![1.0, -1.0, -1.0, 1.0];
        p.b1 = vec![-0.05, -0.05];
        let m = Model::from_params(&p, 0);
        // nodes 0 and 1 cover unit 1, nodes 2 and 3 cover unit 0
        let nodes: Vec<usize> =
            baseline_manc(&m, &g, &[0, 1, 2, 3], 3).unwrap().iter().map(|f| f.node).collect();
        assert_eq!(nodes, vec![0, 2, 1]);

        p.b1 = vec![5.0, 5.0];
        let m = Model::from_params(&p, 0);
        let fps = baseline_manc(&m, &g, &[3, 2, 1, 0], 3).unwrap();
        assert_eq!(fps.iter().map(|f| f.node).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(fps[0].score, 2.0);
        assert_eq!(activation_coverage(&m, &g, &[0]).unwrap(), 1.0);
    }

    #[test]
    fn random_baseline_whole_pool_is_a_permutation() {
        let g = star();
        let m = Model::from_params(&Params::zeros(2, 2, 2), 0);
        let fps = baseline_random(&m, &g, &[0, 1, 2, 3], 4, 7).unwrap();
        let mut nodes: Vec<usize> = fps.iter().map(|f| f.node).collect();
        nodes.sort_unstable();
        assert_eq!(nodes, vec![0, 1, 2, 3]);
        let again = |seed| baseline_random(&m, &g, &[0, 1, 2, 3], 2, seed).unwrap();
        assert_eq!(again(7), again(7));
        assert!(baseline_random(&m, &g, &[0, 1], 3, 7).is_err());
    }
}
