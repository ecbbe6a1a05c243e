//! Forward and reverse passes of `softmax(Â·ReLU(Â·X·W1 + b1)·W2 + b2)`.
//!
//! A pass only computes the rows its targets depend on: logits for the
//! targets, hidden rows on their closed neighborhood (plus any extra rows the
//! caller asks for), and `X·W1` rows one hop further out. Every row is
//! produced by the same code whatever the row set, so a local pass is
//! bit-identical to the corresponding rows of a full pass.

use super::Params;
use crate::graph::{Features, Propagation};

/// One weighted NLL term `weight · -log softmax(logits[node])[class]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub node: usize,
    pub class: usize,
    pub weight: f64,
}

pub(crate) struct Pass {
    pub n: usize,
    pub h: usize,
    pub c: usize,
    pub hidden_rows: Vec<usize>,
    pub input_rows: Vec<usize>,
    pub p: Vec<f64>,
    pub s1: Vec<f64>,
    pub hid: Vec<f64>,
    pub q: Vec<f64>,
    pub logits: Vec<f64>,
    dropout: Option<Vec<f64>>,
}

fn closed_neighborhood<P: Propagation>(prop: &P, seeds: &[usize], extra: &[usize]) -> Vec<usize> {
    let n = prop.num_nodes();
    let mut mark = vec![false; n];
    for &s in seeds {
        prop.for_each_in_row(s, |j, _| mark[j] = true);
    }
    for &e in extra {
        mark[e] = true;
    }
    (0..n).filter(|&i| mark[i]).collect()
}

/// Row `i` of `X·W1`. Structural zeros of `X` contribute nothing.
fn input_row(params: &Params, features: &Features, i: usize, out: &mut [f64]) {
    let h = params.hidden_dim;
    out.iter_mut().for_each(|x| *x = 0.0);
    features.for_each_nonzero(i, |d, x| {
        let w = &params.w1[d * h..(d + 1) * h];
        for (o, &wk) in out.iter_mut().zip(w) {
            *o += x * wk;
        }
    });
}

impl Pass {
    pub fn run<P: Propagation>(
        params: &Params,
        prop: &P,
        features: &Features,
        targets: &[usize],
        extra_hidden: &[usize],
        dropout: Option<Vec<f64>>,
    ) -> Pass {
        let n = prop.num_nodes();
        let (h, c) = (params.hidden_dim, params.num_classes);
        let full = targets.len() == n;
        let hidden_rows: Vec<usize> =
            if full { (0..n).collect() } else { closed_neighborhood(prop, targets, extra_hidden) };
        let input_rows: Vec<usize> = if full || hidden_rows.len() == n {
            (0..n).collect()
        } else {
            closed_neighborhood(prop, &hidden_rows, &[])
        };

        let mut p = vec![0.0; n * h];
        for &i in &input_rows {
            input_row(params, features, i, &mut p[i * h..(i + 1) * h]);
        }

        let mut s1 = vec![0.0; n * h];
        let mut hid = vec![0.0; n * h];
        let mut q = vec![0.0; n * c];
        let mut acc = vec![0.0; h];
        for &i in &hidden_rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            prop.for_each_in_row(i, |j, w| {
                for (a, &pj) in acc.iter_mut().zip(&p[j * h..(j + 1) * h]) {
                    *a += w * pj;
                }
            });
            for k in 0..h {
                let s = acc[k] + params.b1[k];
                s1[i * h + k] = s;
                let mut a = if s > 0.0 { s } else { 0.0 };
                if let Some(mask) = &dropout {
                    a *= mask[i * h + k];
                }
                hid[i * h + k] = a;
            }
            let qi = &mut q[i * c..(i + 1) * c];
            for k in 0..h {
                let a = hid[i * h + k];
                for (qo, &w) in qi.iter_mut().zip(&params.w2[k * c..(k + 1) * c]) {
                    *qo += a * w;
                }
            }
        }

        let mut logits = vec![0.0; n * c];
        let mut acc = vec![0.0; c];
        for &t in targets {
            acc.iter_mut().for_each(|a| *a = 0.0);
            prop.for_each_in_row(t, |j, w| {
                for (a, &qj) in acc.iter_mut().zip(&q[j * c..(j + 1) * c]) {
                    *a += w * qj;
                }
            });
            for k in 0..c {
                logits[t * c + k] = acc[k] + params.b2[k];
            }
        }

        Pass {
            n,
            h,
            c,
            hidden_rows,
            input_rows,
            p,
            s1,
            hid,
            q,
            logits,
            dropout,
        }
    }

    pub fn logits_row(&self, t: usize) -> &[f64] {
        &self.logits[t * self.c..(t + 1) * self.c]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[class]`.
pub fn nll(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[class]
}

pub(crate) struct Backward {
    pub loss: f64,
    pub dw1: Vec<f64>,
    pub db1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub db2: Vec<f64>,
    pub ds2: Vec<f64>,
    pub ds1: Vec<f64>,
    pub dp: Vec<f64>,
    /// `∂L/∂D̃_i` on the input rows, filled by `degree_grads`.
    dd: Option<Vec<f64>>,
}

impl Backward {
    pub fn run<P: Propagation>(
        pass: &Pass,
        params: &Params,
        prop: &P,
        features: &Features,
        terms: &[LossTerm],
    ) -> Backward {
        let (n, h, c) = (pass.n, pass.h, pass.c);
        let mut loss = 0.0;
        let mut ds2 = vec![0.0; n * c];
        let mut term_rows = Vec::new();
        for term in terms {
            let z = pass.logits_row(term.node);
            loss += term.weight * nll(z, term.class);
            let probs = softmax(z);
            for k in 0..c {
                let onehot = if k == term.class { 1.0 } else { 0.0 };
                ds2[term.node * c + k] += term.weight * (probs[k] - onehot);
            }
            term_rows.push(term.node);
        }
        term_rows.sort_unstable();
        term_rows.dedup();

        let mut db2 = vec![0.0; c];
        let mut dq = vec![0.0; n * c];
        for &t in &term_rows {
            let g = &ds2[t * c..(t + 1) * c];
            for (b, &gk) in db2.iter_mut().zip(g) {
                *b += gk;
            }
            prop.for_each_in_row(t, |j, w| {
                for (d, &gk) in dq[j * c..(j + 1) * c].iter_mut().zip(g) {
                    *d += w * gk;
                }
            });
        }

        let mut dw2 = vec![0.0; h * c];
        let mut ds1 = vec![0.0; n * h];
        let mut db1 = vec![0.0; h];
        for &j in &pass.hidden_rows {
            let dqj = &dq[j * c..(j + 1) * c];
            if dqj.iter().all(|&x| x == 0.0) {
                continue;
            }
            for k in 0..h {
                let a = pass.hid[j * h + k];
                let w2k = &params.w2[k * c..(k + 1) * c];
                let mut dh = 0.0;
                for m in 0..c {
                    dw2[k * c + m] += a * dqj[m];
                    dh += dqj[m] * w2k[m];
                }
                if let Some(mask) = &pass.dropout {
                    dh *= mask[j * h + k];
                }
                let g = if pass.s1[j * h + k] > 0.0 { dh } else { 0.0 };
                ds1[j * h + k] = g;
                db1[k] += g;
            }
        }

        let mut dp = vec![0.0; n * h];
        for &j in &pass.hidden_rows {
            let g = &ds1[j * h..(j + 1) * h];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            prop.for_each_in_row(j, |i, w| {
                for (d, &gk) in dp[i * h..(i + 1) * h].iter_mut().zip(g) {
                    *d += w * gk;
                }
            });
        }

        let d = params.input_dim;
        let mut dw1 = vec![0.0; d * h];
        for &i in &pass.input_rows {
            let g = &dp[i * h..(i + 1) * h];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            features.for_each_nonzero(i, |dim, x| {
                for (o, &gk) in dw1[dim * h..(dim + 1) * h].iter_mut().zip(g) {
                    *o += x * gk;
                }
            });
        }

        Backward { loss, dw1, db1, dw2, db2, ds2, ds1, dp, dd: None }
    }

    /// `∂L/∂X[i, :] = dP[i, :] · W1ᵀ`.
    pub fn feature_grad(&self, params: &Params, i: usize) -> Vec<f64> {
        let h = params.hidden_dim;
        let g = &self.dp[i * h..(i + 1) * h];
        (0..params.input_dim)
            .map(|d| params.w1[d * h..(d + 1) * h].iter().zip(g).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `∂L/∂Â_ij` summed over both propagation layers.
    fn adj_grad(&self, pass: &Pass, i: usize, j: usize) -> f64 {
        let (h, c) = (pass.h, pass.c);
        let l1: f64 =
            self.ds1[i * h..(i + 1) * h].iter().zip(&pass.p[j * h..(j + 1) * h]).map(|(a, b)| a * b).sum();
        let l2: f64 =
            self.ds2[i * c..(i + 1) * c].iter().zip(&pass.q[j * c..(j + 1) * c]).map(|(a, b)| a * b).sum();
        l1 + l2
    }

    fn degree_grad<P: Propagation>(&self, pass: &Pass, prop: &P, i: usize) -> f64 {
        let mut s = 0.0;
        prop.for_each_in_row(i, |l, w| {
            s += w * (self.adj_grad(pass, i, l) + self.adj_grad(pass, l, i));
        });
        -0.5 * s / prop.augmented_degree(i) as f64
    }

    /// Prepares `∂L/∂D̃`. Must precede `edge_grad`.
    pub fn degree_grads<P: Propagation>(&mut self, pass: &Pass, prop: &P) {
        let mut dd = vec![0.0; pass.n];
        for &i in &pass.input_rows {
            dd[i] = self.degree_grad(pass, prop, i);
        }
        self.dd = Some(dd);
    }

    /// Derivative of the loss w.r.t. a symmetric relaxed edge weight `w = a_uv = a_vu`
    /// of `A + I`, including the effect on both endpoint degrees. Both endpoints
    /// must be hidden rows of the pass.
    pub fn edge_grad<P: Propagation>(&self, pass: &Pass, prop: &P, u: usize, v: usize) -> f64 {
        let dd = self.dd.as_ref().expect("degree_grads must run before edge_grad");
        let scale = 1.0
            / ((prop.augmented_degree(u) as u64 * prop.augmented_degree(v) as u64) as f64).sqrt();
        (self.adj_grad(pass, u, v) + self.adj_grad(pass, v, u)) * scale + dd[u] + dd[v]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_and_nll_agree() {
        let z = [1.0, -2.0, 0.5];
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((nll(&z, 2) + p[2].ln()).abs() < 1e-14);
    }
}
