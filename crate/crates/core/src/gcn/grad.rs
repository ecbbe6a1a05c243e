use super::{Backward, LossTerm, Model, Params, Pass};
use crate::error::{Error, Result};
use crate::graph::{Features, Propagation};

/// Reverse-mode gradients of a per-node NLL loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub loss: f64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// `(node, ∂L/∂x_node)` for each node whose features were requested.
    pub features: Vec<(usize, Vec<f64>)>,
    /// `(u, v, ∂L/∂w_uv)` for the relaxed symmetric entry of `A + I`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl GradientSet {
    /// Sum over the four parameter blocks of their entrywise L2 norms.
    pub fn param_norm_sum(&self) -> f64 {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .map(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|b| b.iter().all(|x| x.is_finite()))
            && self.features.iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
            && self.edges.iter().all(|e| e.2.is_finite())
    }
}

fn check_inputs<P: Propagation>(
    params: &Params,
    prop: &P,
    features: &Features,
    terms: &[LossTerm],
) -> Result<()> {
    params.check_features(prop.num_nodes(), features)?;
    for t in terms {
        if t.node >= prop.num_nodes() {
            return Err(Error::NodeOutOfRange { node: t.node, num_nodes: prop.num_nodes() });
        }
        if t.class >= params.num_classes {
            return Err(Error::Dimension(format!(
                "class {} outside [0, {})",
                t.class, params.num_classes
            )));
        }
    }
    Ok(())
}

/// Gradients of `Σ terms` w.r.t. the parameters, the features of `feature_nodes`
/// and the relaxed edge weights of `pairs`.
pub fn gradients_for_terms<P: Propagation>(
    params: &Params,
    prop: &P,
    features: &Features,
    terms: &[LossTerm],
    feature_nodes: &[usize],
    pairs: &[(usize, usize)],
) -> Result<GradientSet> {
    check_inputs(params, prop, features, terms)?;
    let n = prop.num_nodes();
    for &(u, v) in pairs {
        if u >= n || v >= n {
            return Err(Error::NodeOutOfRange { node: u.max(v), num_nodes: n });
        }
        if u == v {
            return Err(Error::Config(format!("candidate pair ({u}, {v}) is a self-pair")));
        }
    }
    for &v in feature_nodes {
        if v >= n {
            return Err(Error::NodeOutOfRange { node: v, num_nodes: n });
        }
    }
    let mut targets: Vec<usize> = terms.iter().map(|t| t.node).collect();
    targets.sort_unstable();
    targets.dedup();
    let mut extra: Vec<usize> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    extra.extend(feature_nodes);
    extra.sort_unstable();
    extra.dedup();

    let pass = Pass::run(params, prop, features, &targets, &extra, None);
    let mut bw = Backward::run(&pass, params, prop, features, terms);
    let feature_grads = feature_nodes.iter().map(|&v| (v, bw.feature_grad(params, v))).collect();
    let edges = if pairs.is_empty() {
        Vec::new()
    } else {
        bw.degree_grads(&pass, prop);
        pairs.iter().map(|&(u, v)| (u, v, bw.edge_grad(&pass, prop, u, v))).collect()
    };
    Ok(GradientSet {
        loss: bw.loss,
        w1: bw.dw1,
        b1: bw.db1,
        w2: bw.dw2,
        b2: bw.db2,
        features: feature_grads,
        edges,
    })
}

/// Gradients of the single-node loss `-log softmax(f(G)_v)[y]` w.r.t. every parameter block.
pub fn param_gradients<P: Propagation>(
    m: &Model,
    prop: &P,
    features: &Features,
    v: usize,
    y: usize,
) -> Result<GradientSet> {
    let term = LossTerm { node: v, class: y, weight: 1.0 };
    gradients_for_terms(&m.params(), prop, features, &[term], &[], &[])
}

/// Gradients of the single-node loss w.r.t. the features of `v` and the relaxed
/// adjacency entries of `candidate_pairs`, each of which must touch `v`.
pub fn input_gradients<P: Propagation>(
    m: &Model,
    prop: &P,
    features: &Features,
    v: usize,
    y: usize,
    candidate_pairs: &[(usize, usize)],
) -> Result<GradientSet> {
    if let Some(&(a, b)) = candidate_pairs.iter().find(|&&(a, b)| a != v && b != v) {
        return Err(Error::Config(format!("candidate pair ({a}, {b}) does not touch node {v}")));
    }
    let term = LossTerm { node: v, class: y, weight: 1.0 };
    gradients_for_terms(&m.params(), prop, features, &[term], &[v], candidate_pairs)
}
