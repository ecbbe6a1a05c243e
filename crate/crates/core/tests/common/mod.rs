//! Dense reference implementations shared by the integration tests. Written
//! against plain `Vec<Vec<f64>>` so they share no code with the sparse engine.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nodeprint::graph::MASK_TRAIN;
use nodeprint::{Features, Graph, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for t in 0..k {
            for j in 0..m {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn reshape(v: &[f64], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|r| v[r * cols..(r + 1) * cols].to_vec()).collect()
}

/// Weighted `A + I` from the graph's edges, with unit weights.
pub fn adjacency_weights(g: &Graph) -> Mat {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (i, j) in g.edges() {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    a
}

/// `D^-1/2 (W + I) D^-1/2` for a symmetric weight matrix without its diagonal.
pub fn normalize(w: &Mat) -> Mat {
    let n = w.len();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + w[i].iter().sum::<f64>()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let a = if i == j { 1.0 + w[i][j] } else { w[i][j] };
                    a / (deg[i].sqrt() * deg[j].sqrt())
                })
                .collect()
        })
        .collect()
}

pub fn dense_features(g: &Graph) -> Mat {
    (0..g.num_nodes()).map(|v| g.features().row(v)).collect()
}

pub struct DenseForward {
    pub pre1: Mat,
    pub logits: Mat,
}

pub fn dense_forward(p: &Params, a_hat: &Mat, x: &Mat) -> DenseForward {
    let (d, h, c) = (p.input_dim, p.hidden_dim, p.num_classes);
    let w1 = reshape(&p.w1, d, h);
    let w2 = reshape(&p.w2, h, c);
    let mut pre1 = matmul(a_hat, &matmul(x, &w1));
    for row in pre1.iter_mut() {
        for (k, s) in row.iter_mut().enumerate() {
            *s += p.b1[k];
        }
    }
    let act: Mat = pre1.iter().map(|r| r.iter().map(|&s| s.max(0.0)).collect()).collect();
    let mut logits = matmul(a_hat, &matmul(&act, &w2));
    for row in logits.iter_mut() {
        for (k, z) in row.iter_mut().enumerate() {
            *z += p.b2[k];
        }
    }
    DenseForward { pre1, logits }
}

pub fn dense_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn dense_nll(z: &[f64], y: usize) -> f64 {
    -dense_softmax(z)[y].ln()
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize, h: usize, c: usize, scale: f64) -> Params {
    let mut p = Params::zeros(d, h, c);
    for v in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2] {
        for x in v.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
    p
}

/// Erdős–Rényi graph with real-valued features and random labels.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize, p_edge: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p_edge {
                edges.push((i, j));
            }
        }
    }
    let values = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let masks = BTreeMap::from([(MASK_TRAIN.to_string(), (0..n).collect())]);
    Graph::new(n, c, &edges, Features::Dense { dim: d, values }, labels, masks).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Smallest |pre-activation| across the graph; finite differences are only
/// meaningful away from ReLU kinks.
pub fn kink_margin(p: &Params, a_hat: &Mat, x: &Mat) -> f64 {
    dense_forward(p, a_hat, x)
        .pre1
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, &s| m.min(s.abs()))
}

fn block(q: &mut Params, which: usize) -> &mut Vec<f64> {
    match which {
        0 => &mut q.w1,
        1 => &mut q.b1,
        2 => &mut q.w2,
        _ => &mut q.b2,
    }
}

pub const FD_STEP: f64 = 1e-4;

fn central<F: FnMut(f64) -> f64>(x0: f64, mut f: F) -> f64 {
    (f(x0 + FD_STEP) - f(x0 - FD_STEP)) / (2.0 * FD_STEP)
}

/// Worst relative error between analytic and central-difference gradients on
/// one random 10-node instance, or `None` when the instance sits too close to
/// a ReLU kink for finite differences to be trusted.
pub struct GradCheck {
    pub param_err: f64,
    pub feature_err: f64,
    pub edge_err: f64,
}

pub fn grad_check_instance(seed: u64) -> Option<GradCheck> {
    use nodeprint::gcn::{gradients_for_terms, LossTerm};
    use nodeprint::graph::normalize_adjacency;

    let mut r = rng(seed);
    let (n, d, h, c) = (10, 4, 6, 3);
    let g = random_graph(&mut r, n, d, c, 0.3);
    let p = random_params(&mut r, d, h, c, 1.0);
    let v = r.gen_range(0..n);
    let y = r.gen_range(0..c);
    let w = adjacency_weights(&g);
    let x = dense_features(&g);
    if kink_margin(&p, &normalize(&w), &x) < 1e-2 {
        return None;
    }
    let pairs: Vec<(usize, usize)> = (0..n).filter(|&u| u != v).map(|u| (v, u)).collect();
    let gs = gradients_for_terms(
        &p,
        &normalize_adjacency(&g),
        g.features(),
        &[LossTerm { node: v, class: y, weight: 1.0 }],
        &[v],
        &pairs,
    )
    .unwrap();

    let loss = |p: &Params, w: &Mat, x: &Mat| dense_nll(&dense_forward(p, &normalize(w), x).logits[v], y);

    let mut param_err: f64 = 0.0;
    for (analytic, which) in [(&gs.w1, 0), (&gs.b1, 1), (&gs.w2, 2), (&gs.b2, 3)] {
        let len = analytic.len();
        let fd: Vec<f64> = (0..len)
            .map(|i| {
                let mut q = p.clone();
                let x0 = block(&mut q, which)[i];
                central(x0, |t| {
                    block(&mut q, which)[i] = t;
                    loss(&q, &w, &x)
                })
            })
            .collect();
        param_err = param_err.max(rel_err(analytic, &fd, 1e-6));
    }

    let fd_x: Vec<f64> = (0..d)
        .map(|k| {
            let mut xx = x.clone();
            central(x[v][k], |t| {
                xx[v][k] = t;
                loss(&p, &w, &xx)
            })
        })
        .collect();
    let feature_err = rel_err(&gs.features[0].1, &fd_x, 1e-6);

    let fd_e: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| {
            let mut ww = w.clone();
            central(w[a][b], |t| {
                ww[a][b] = t;
                ww[b][a] = t;
                loss(&p, &ww, &x)
            })
        })
        .collect();
    let analytic_e: Vec<f64> = gs.edges.iter().map(|e| e.2).collect();
    let edge_err = rel_err(&analytic_e, &fd_e, 1e-6);

    Some(GradCheck { param_err, feature_err, edge_err })
}

/// Relative error of the sparse forward pass against the dense oracle on a random graph.
pub fn forward_check_instance(seed: u64, n: usize) -> f64 {
    use nodeprint::gcn::{logits, Model};
    use nodeprint::graph::normalize_adjacency;

    let mut r = rng(seed);
    let (d, h, c) = (5, 8, 3);
    let g = random_graph(&mut r, n, d, c, 3.0 / n as f64);
    // Round-trip through f32 so both sides see identical parameters.
    let m = Model::from_params(&random_params(&mut r, d, h, c, 1.0), seed);
    let p = m.params();
    let sparse = logits(&m, &normalize_adjacency(&g), g.features()).unwrap();
    let dense = dense_forward(&p, &normalize(&adjacency_weights(&g)), &dense_features(&g)).logits;
    let flat: Vec<f64> = dense.into_iter().flatten().collect();
    rel_err(&sparse, &flat, 1e-12)
}
