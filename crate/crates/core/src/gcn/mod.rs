//! Two-layer graph convolutional network.
//!
//! Parameters live canonically in single precision (`Model`) so that bit flips
//! act on the stored representation. All arithmetic runs on a double
//! precision copy (`Params`).

pub mod checkpoint;
pub(crate) mod engine;
mod grad;
mod train;

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Features, Graph, Propagation};

pub use engine::{nll, softmax, LossTerm};
pub use grad::{gradients_for_terms, input_gradients, param_gradients, GradientSet};
pub use train::{train, TrainConfig, TrainReport};

pub(crate) use engine::{Backward, Pass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamBlock {
    W1,
    B1,
    W2,
    B2,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 4] = [ParamBlock::W1, ParamBlock::B1, ParamBlock::W2, ParamBlock::B2];
}

/// Double-precision parameter view. `w1` is `d×h`, `w2` is `h×c`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Params {
            input_dim,
            hidden_dim,
            num_classes,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * num_classes],
            b2: vec![0.0; num_classes],
        }
    }

    pub fn block(&self, b: ParamBlock) -> &[f64] {
        match b {
            ParamBlock::W1 => &self.w1,
            ParamBlock::B1 => &self.b1,
            ParamBlock::W2 => &self.w2,
            ParamBlock::B2 => &self.b2,
        }
    }

    pub fn block_mut(&mut self, b: ParamBlock) -> &mut Vec<f64> {
        match b {
            ParamBlock::W1 => &mut self.w1,
            ParamBlock::B1 => &mut self.b1,
            ParamBlock::W2 => &mut self.w2,
            ParamBlock::B2 => &mut self.b2,
        }
    }

    fn check_features(&self, n: usize, features: &Features) -> Result<()> {
        if features.dim() != self.input_dim {
            return Err(Error::Dimension(format!(
                "features have {} dims, model expects {}",
                features.dim(),
                self.input_dim
            )));
        }
        match features {
            Features::Identity(m) if *m != n => {
                Err(Error::Dimension(format!("identity features of size {m} for {n} nodes")))
            }
            Features::Dense { dim, values } if values.len() != n * dim => Err(Error::Dimension(
                format!("feature matrix has {} entries for {n} nodes x {dim} dims", values.len()),
            )),
            _ => Ok(()),
        }
    }
}

/// A trained two-layer GCN with single-precision parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl Model {
    /// Rounds every parameter to the nearest single-precision value.
    pub fn from_params(p: &Params, seed: u64) -> Self {
        let round = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        Model {
            input_dim: p.input_dim,
            hidden_dim: p.hidden_dim,
            num_classes: p.num_classes,
            seed,
            w1: round(&p.w1),
            b1: round(&p.b1),
            w2: round(&p.w2),
            b2: round(&p.b2),
        }
    }

    pub fn params(&self) -> Params {
        let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect();
        Params {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            w1: widen(&self.w1),
            b1: widen(&self.b1),
            w2: widen(&self.w2),
            b2: widen(&self.b2),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat index range of a block in checkpoint order (W1, b1, W2, b2).
    pub fn block_range(&self, b: ParamBlock) -> Range<usize> {
        let (a, bb, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        match b {
            ParamBlock::W1 => 0..a,
            ParamBlock::B1 => a..a + bb,
            ParamBlock::W2 => a + bb..a + bb + c,
            ParamBlock::B2 => a + bb + c..self.num_params(),
        }
    }

    /// Block and in-block offset of a flat index.
    pub fn locate(&self, flat: usize) -> Option<(ParamBlock, usize)> {
        ParamBlock::ALL.into_iter().find_map(|b| {
            let r = self.block_range(b);
            r.contains(&flat).then(|| (b, flat - r.start))
        })
    }

    fn block_vec_mut(&mut self, b: ParamBlock) -> &mut Vec<f32> {
        match b {
            ParamBlock::W1 => &mut self.w1,
            ParamBlock::B1 => &mut self.b1,
            ParamBlock::W2 => &mut self.w2,
            ParamBlock::B2 => &mut self.b2,
        }
    }

    pub fn get_flat(&self, flat: usize) -> Option<f32> {
        let (b, i) = self.locate(flat)?;
        let v = match b {
            ParamBlock::W1 => &self.w1,
            ParamBlock::B1 => &self.b1,
            ParamBlock::W2 => &self.w2,
            ParamBlock::B2 => &self.b2,
        };
        Some(v[i])
    }

    pub fn set_flat(&mut self, flat: usize, value: f32) -> Option<()> {
        let (b, i) = self.locate(flat)?;
        self.block_vec_mut(b)[i] = value;
        Some(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Per-node class probabilities, `N×c` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub num_classes: usize,
    pub values: Vec<f64>,
}

impl Posteriors {
    pub fn num_nodes(&self) -> usize {
        if self.num_classes == 0 {
            0
        } else {
            self.values.len() / self.num_classes
        }
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.num_classes..(v + 1) * self.num_classes]
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| argmax_total(self.row(v))).collect()
    }
}

fn rank(x: f64) -> u8 {
    if x.is_nan() {
        0
    } else if x == f64::NEG_INFINITY {
        1
    } else if x == f64::INFINITY {
        3
    } else {
        2
    }
}

/// Total order used for predictions: NaN < -Inf < finite < +Inf.
pub fn total_order(a: f64, b: f64) -> Ordering {
    rank(a).cmp(&rank(b)).then_with(|| if rank(a) == 2 { a.total_cmp(&b) } else { Ordering::Equal })
}

/// Argmax under `total_order`, ties to the smallest index.
pub fn argmax_total(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate().skip(1) {
        if total_order(x, row[best]) == Ordering::Greater {
            best = k;
        }
    }
    best
}

/// Logits for every node, `N×c`.
pub fn logits<P: Propagation>(m: &Model, prop: &P, features: &Features) -> Result<Vec<f64>> {
    let params = m.params();
    params.check_features(prop.num_nodes(), features)?;
    let all: Vec<usize> = (0..prop.num_nodes()).collect();
    Ok(Pass::run(&params, prop, features, &all, &[], None).logits)
}

/// Posterior probabilities for every node. Inference never applies dropout.
pub fn forward<P: Propagation>(m: &Model, prop: &P, features: &Features) -> Result<Posteriors> {
    let z = logits(m, prop, features)?;
    let c = m.num_classes;
    let values = z.chunks(c.max(1)).flat_map(softmax).collect();
    Ok(Posteriors { num_classes: c, values })
}

/// Predicted class for every node. Works on the logits, so it is defined even
/// when tampered parameters make the posteriors non-finite.
pub fn predict_all<P: Propagation>(m: &Model, prop: &P, features: &Features) -> Result<Vec<usize>> {
    let z = logits(m, prop, features)?;
    Ok(z.chunks(m.num_classes.max(1)).map(argmax_total).collect())
}

pub fn predict<P: Propagation>(m: &Model, prop: &P, features: &Features, v: usize) -> Result<usize> {
    if v >= prop.num_nodes() {
        return Err(Error::NodeOutOfRange { node: v, num_nodes: prop.num_nodes() });
    }
    let params = m.params();
    params.check_features(prop.num_nodes(), features)?;
    let pass = Pass::run(&params, prop, features, &[v], &[], None);
    Ok(argmax_total(pass.logits_row(v)))
}

/// First-layer pre-activations `Â·X·W1 + b1` for every node, `N×h`.
pub fn hidden_preactivations<P: Propagation>(
    m: &Model,
    prop: &P,
    features: &Features,
) -> Result<Vec<f64>> {
    let params = m.params();
    params.check_features(prop.num_nodes(), features)?;
    let all: Vec<usize> = (0..prop.num_nodes()).collect();
    Ok(Pass::run(&params, prop, features, &all, &[], None).s1)
}

/// Logits for `targets` only, each a length-`c` row, computed from their receptive fields.
pub fn local_logits(params: &Params, g: &Graph, targets: &[usize]) -> Result<Vec<Vec<f64>>> {
    params.check_features(g.num_nodes(), g.features())?;
    for &t in targets {
        g.check_node(t)?;
    }
    let pass = Pass::run(params, g, g.features(), targets, &[], None);
    Ok(targets.iter().map(|&t| pass.logits_row(t).to_vec()).collect())
}

/// Fraction of `mask` nodes whose prediction equals their label.
pub fn accuracy(m: &Model, g: &Graph, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Config("accuracy over an empty mask".into()));
    }
    let preds = predict_all(m, &normalize_adjacency(g), g.features())?;
    accuracy_of(&preds, g, mask)
}

pub fn accuracy_of(preds: &[usize], g: &Graph, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Config("accuracy over an empty mask".into()));
    }
    let mut correct = 0usize;
    for &v in mask {
        g.check_node(v)?;
        if preds[v] == g.labels()[v] {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::graph::Features;

    fn tiny_graph() -> Graph {
        Graph::new(
            3,
            2,
            &[(0, 1), (1, 2)],
            Features::Dense { dim: 2, values: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0] },
            vec![0, 1, 1],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let g = tiny_graph();
        let m = Model::from_params(&Params::zeros(2, 4, 2), 0);
        let post = forward(&m, &normalize_adjacency(&g), g.features()).unwrap();
        assert!(post.values.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn bias_dominates_single_node() {
        let g = Graph::new(
            1,
            1,
            &[],
            Features::Dense { dim: 1, values: vec![0.3] },
            vec![0],
            BTreeMap::new(),
        )
        .unwrap();
        let mut p = Params::zeros(1, 1, 1);
        p.b2 = vec![50.0];
        let m = Model::from_params(&p, 0);
        let post = forward(&m, &normalize_adjacency(&g), g.features()).unwrap();
        assert!((post.row(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax_total(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_total(&[0.5, 0.5]), 0);
        assert_eq!(argmax_total(&[f64::NAN, f64::NEG_INFINITY]), 1);
        assert_eq!(argmax_total(&[f64::INFINITY, 3.0, f64::INFINITY]), 0);
        assert_eq!(argmax_total(&[1e300, f64::INFINITY]), 1);
        assert_eq!(argmax_total(&[f64::NAN, f64::NAN]), 0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = tiny_graph();
        let m = Model::from_params(&Params::zeros(3, 4, 2), 0);
        assert!(matches!(
            forward(&m, &normalize_adjacency(&g), g.features()),
            Err(Error::Dimension(_))
        ));
        let m = Model::from_params(&Params::zeros(2, 4, 2), 0);
        assert!(matches!(
            predict(&m, &normalize_adjacency(&g), g.features(), 3),
            Err(Error::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn accuracy_arithmetic() {
        let g = tiny_graph();
        assert_eq!(accuracy_of(&[0, 1, 1], &g, &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy_of(&[1, 0, 0], &g, &[0, 1, 2]).unwrap(), 0.0);
        assert!(accuracy_of(&[0, 1, 1], &g, &[]).is_err());
    }

    #[test]
    fn flat_indexing_follows_checkpoint_order() {
        let m = Model::from_params(&Params::zeros(3, 2, 2), 0);
        assert_eq!(m.num_params(), 6 + 2 + 4 + 2);
        assert_eq!(m.locate(0), Some((ParamBlock::W1, 0)));
        assert_eq!(m.locate(6), Some((ParamBlock::B1, 0)));
        assert_eq!(m.locate(8), Some((ParamBlock::W2, 0)));
        assert_eq!(m.locate(13), Some((ParamBlock::B2, 1)));
        assert_eq!(m.locate(14), None);
    }
}
