use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy_of, predict_all, Backward, LossTerm, Model, ParamBlock, Params, Pass};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, MASK_TEST, MASK_TRAIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.02,
            epochs: 200,
            dropout: 0.5,
            hidden_dim: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Full-graph training with Adam on the mean NLL of the `train` mask.
/// Parameters are rounded to single precision after every step.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let train_nodes = g.mask(MASK_TRAIN).unwrap_or(&[]).to_vec();
    if train_nodes.is_empty() {
        return Err(Error::Config("train mask is empty".into()));
    }
    let (n, d, h, c) = (g.num_nodes(), g.features().dim(), cfg.hidden_dim, g.num_classes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::zeros(d, h, c);
    params.w1 = glorot(&mut rng, d, h);
    params.w2 = glorot(&mut rng, h, c);
    params = Model::from_params(&params, cfg.seed).params();

    let adj = normalize_adjacency(g);
    let weight = 1.0 / train_nodes.len() as f64;
    let terms: Vec<LossTerm> = train_nodes
        .iter()
        .map(|&v| LossTerm { node: v, class: g.labels()[v], weight })
        .collect();
    let mut adam: Vec<Adam> = ParamBlock::ALL
        .iter()
        .map(|&b| {
            let len = params.block(b).len();
            Adam { m: vec![0.0; len], v: vec![0.0; len] }
        })
        .collect();

    let keep = 1.0 - cfg.dropout;
    let mut final_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        let mask = (cfg.dropout > 0.0).then(|| {
            (0..n * h).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
        });
        let pass = Pass::run(&params, &adj, g.features(), &train_nodes, &[], mask);
        let bw = Backward::run(&pass, &params, &adj, g.features(), &terms);
        if !bw.loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        final_loss = bw.loss;
        let t = epoch as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let grads = [&bw.dw1, &bw.db1, &bw.dw2, &bw.db2];
        for ((&block, state), grad) in ParamBlock::ALL.iter().zip(&mut adam).zip(grads) {
            let p = params.block_mut(block);
            for i in 0..p.len() {
                let gi = grad[i];
                state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
                state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let step = cfg.learning_rate * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + cfg.eps);
                p[i] = ((p[i] - step) as f32) as f64;
            }
        }
    }

    let model = Model::from_params(&params, cfg.seed);
    let preds = predict_all(&model, &adj, g.features())?;
    let train_accuracy = accuracy_of(&preds, g, &train_nodes)?;
    let test_accuracy = match g.mask(MASK_TEST) {
        Some(m) if !m.is_empty() => Some(accuracy_of(&preds, g, m)?),
        _ => None,
    };
    Ok((model, TrainReport { epochs: cfg.epochs, final_loss, train_accuracy, test_accuracy }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{sbm, SbmConfig};

    #[test]
    fn zero_epochs_rejected() {
        let g = sbm(&SbmConfig::default()).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train(&g, &cfg), Err(Error::Config(_))));
        let cfg = TrainConfig { dropout: 1.0, ..Default::default() };
        assert!(matches!(train(&g, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn empty_train_mask_rejected() {
        let mut g = sbm(&SbmConfig::default()).unwrap();
        g.set_mask(MASK_TRAIN, vec![]).unwrap();
        assert!(matches!(train(&g, &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_model() {
        let g = sbm(&SbmConfig::default().with_seed(3)).unwrap();
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::default().with_seed(9) };
        let (a, _) = train(&g, &cfg).unwrap();
        let (b, _) = train(&g, &cfg).unwrap();
        assert_eq!(a, b);
        let (c, _) = train(&g, &cfg.clone().with_seed(10)).unwrap();
        assert_ne!(a, c);
    }
}
