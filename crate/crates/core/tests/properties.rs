mod common;

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;

use nodeprint::attacks::bit_flip_value;
use nodeprint::fingerprint::{score_transductive_l, select_fingerprints, ScoreTable};
use nodeprint::gcn::checkpoint::{decode, encode};
use nodeprint::gcn::{argmax_total, forward, Model};
use nodeprint::graph::{normalize_adjacency, parse_graph, EdgeFlip, EdgeOp, FeatureEdit, GraphFile, LoadOptions};
use nodeprint::harness::{bypass_prob_approx, bypass_prob_exact};
use nodeprint::{FingerprintMethod, Graph, GraphDelta, Posteriors};

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (1usize..14, any::<u64>(), 0.0f64..0.6).prop_map(|(n, seed, p)| {
        let mut rng = common::rng(seed);
        common::random_graph(&mut rng, n, 3, 2, p)
    })
}

fn binomial(n: u64, k: u64) -> BigUint {
    (0..k).fold(BigUint::from(1u32), |acc, i| acc * (n - i) / (i + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_adjacency_is_bitwise_symmetric(g in graph_strategy()) {
        let a = normalize_adjacency(&g).to_dense();
        for i in 0..g.num_nodes() {
            for j in 0..g.num_nodes() {
                prop_assert_eq!(a[i][j].to_bits(), a[j][i].to_bits());
            }
        }
    }

    #[test]
    fn two_hop_matches_matrix_square(g in graph_strategy()) {
        let n = g.num_nodes();
        let reach: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| i == j || g.has_edge(i, j)).collect())
            .collect();
        for v in 0..n {
            let expected: Vec<usize> =
                (0..n).filter(|&w| (0..n).any(|m| reach[v][m] && reach[m][w])).collect();
            prop_assert_eq!(&g.two_hop_neighborhood(v).unwrap(), &expected);
            prop_assert_eq!(&g.k_hop_union(&[v], 2), &expected);
        }
    }

    #[test]
    fn delta_inverse_restores_graph(g in graph_strategy(), picks in prop::collection::vec((any::<usize>(), any::<usize>(), any::<usize>(), -2.0f64..2.0), 0..8)) {
        let n = g.num_nodes();
        let mut work = g.clone();
        let mut delta = GraphDelta::default();
        for (a, b, dim, value) in picks {
            let (u, v) = (a % n, b % n);
            if u != v && !delta.edge_flips.iter().any(|f| (f.u.min(f.v), f.u.max(f.v)) == (u.min(v), u.max(v))) {
                let op = if work.has_edge(u, v) { EdgeOp::Remove } else { EdgeOp::Add };
                let flip = GraphDelta { edge_flips: vec![EdgeFlip { u, v, op }], feature_edits: vec![] };
                work = work.apply_delta(&flip).unwrap();
                delta.edge_flips.push(EdgeFlip { u, v, op });
            }
            delta.feature_edits.push(FeatureEdit { node: u, dim: dim % 3, value });
        }
        let edited = g.apply_delta(&delta).unwrap();
        let back = edited.apply_delta(&delta.inverse(&g).unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn graph_json_round_trip(g in graph_strategy()) {
        let bytes = serde_json::to_vec(&GraphFile::from_graph(&g)).unwrap();
        let back = parse_graph(&bytes, LoadOptions::default()).unwrap();
        prop_assert_eq!(back.canonical_hash(), g.canonical_hash());
        prop_assert_eq!(back, g);
    }

    #[test]
    fn posteriors_are_distributions(g in graph_strategy(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let m = Model::from_params(&common::random_params(&mut rng, 3, 4, 2, 1.0), 0);
        let post = forward(&m, &normalize_adjacency(&g), g.features()).unwrap();
        for v in 0..g.num_nodes() {
            let row = post.row(v);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn argmax_is_scale_invariant(row in prop::collection::vec(-1e3f64..1e3, 1..8), scale in 1e-3f64..1e3) {
        let scaled: Vec<f64> = row.iter().map(|x| x * scale).collect();
        let a = argmax_total(&row);
        prop_assert_eq!(argmax_total(&scaled), a);
        prop_assert!(row.iter().all(|&x| x <= row[a]));
        prop_assert!(row[..a].iter().all(|&x| x < row[a]));
    }

    #[test]
    fn bit_flip_is_an_involution(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assert_eq!(bit_flip_value(bit_flip_value(x)).to_bits(), bits);
        prop_assert_eq!(bit_flip_value(x).to_bits() ^ bits, 1 << 30);
    }

    #[test]
    fn selection_matches_brute_force(scores in prop::collection::vec(0u8..6, 1..12), k_seed in any::<usize>()) {
        let table = ScoreTable {
            method: FingerprintMethod::F,
            scores: scores.iter().enumerate().map(|(v, &s)| (v * 3, s as f64)).collect::<BTreeMap<_, _>>(),
        };
        let k = k_seed % (scores.len() + 1);
        let picked = select_fingerprints(&table, k).unwrap();
        let mut brute: Vec<(usize, f64)> = table.scores.iter().map(|(&v, &s)| (v, s)).collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = brute.into_iter().take(k).map(|(v, _)| v).collect();
        prop_assert_eq!(picked, expected);
    }

    #[test]
    fn score_l_range(logits in prop::collection::vec(-20f64..20.0, 2..6)) {
        let c = logits.len();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let post = Posteriors { num_classes: c, values: exps.iter().map(|e| e / sum).collect() };
        let s = score_transductive_l(&post, 0).unwrap();
        prop_assert!(s >= 0.0 && s <= 1.0 - 1.0 / c as f64 + 1e-12);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), d in 1usize..6, h in 1usize..6, c in 1usize..5) {
        let mut rng = common::rng(seed);
        let m = Model::from_params(&common::random_params(&mut rng, d, h, c, 1.0), seed);
        let bytes = encode(&m);
        prop_assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn bypass_matches_big_integer_ratio(n in 1usize..=60, a in any::<usize>(), v in any::<usize>()) {
        let m_a = a % (n + 1);
        let m_v = v % (n + 1);
        let exact = bypass_prob_exact(n, m_a, m_v).unwrap();
        let oracle = if m_v > m_a {
            0.0
        } else {
            BigRational::new(
                binomial((n - m_v) as u64, (m_a - m_v) as u64).into(),
                binomial(n as u64, m_a as u64).into(),
            )
            .to_f64()
            .unwrap()
        };
        prop_assert!((exact - oracle).abs() <= 1e-12 * oracle.max(1e-300));
        let approx = bypass_prob_approx(n, m_a, m_v, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&approx));
    }
}
