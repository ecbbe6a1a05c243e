use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(n: usize, m_a: usize, m_v: usize) -> Result<()> {
    if m_a > n || m_v > n {
        return Err(Error::BypassArguments { n, m_a, m_v });
    }
    Ok(())
}

/// Probability that `m_V` distinct nodes drawn uniformly from `N` all fall in a
/// fixed set of `m_A` nodes: `Π_{i<m_V} (m_A - i) / (N - i)`.
pub fn bypass_prob_exact(n: usize, m_a: usize, m_v: usize) -> Result<f64> {
    check(n, m_a, m_v)?;
    if m_v > m_a {
        return Ok(0.0);
    }
    Ok((0..m_v).map(|i| (m_a - i) as f64 / (n - i) as f64).product())
}

/// As `bypass_prob_exact`, with every verifier target class also guessed from `c` uniform choices.
pub fn bypass_prob_exact_inductive(n: usize, m_a: usize, m_v: usize, c: usize) -> Result<f64> {
    if c == 0 {
        return Err(Error::Config("at least one class is required".into()));
    }
    Ok(bypass_prob_exact(n, m_a, m_v)? * (c as f64).powi(-(m_v as i32)))
}

/// `(m_A / (c·N))^m_V`; `c = 1` gives the transductive approximation.
pub fn bypass_prob_approx(n: usize, m_a: usize, m_v: usize, c: usize) -> Result<f64> {
    check(n, m_a, m_v)?;
    if c == 0 {
        return Err(Error::Config("at least one class is required".into()));
    }
    Ok((m_a as f64 / (c as f64 * n as f64)).powi(m_v as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "setting")]
pub enum BypassSetting {
    Transductive,
    Inductive { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BypassEstimate {
    pub trials: usize,
    pub bypasses: usize,
    pub rate: f64,
    pub stderr: f64,
}

/// Simulates an attacker who answers honestly on `m_A` uniformly sampled nodes
/// (and, inductively, one guessed target class per node) against a verifier
/// checking `m_V` uniformly sampled nodes. Nodes and target classes come from
/// separate streams, so the same seed gives paired node draws in both settings.
pub fn bypass_rate_monte_carlo(
    n: usize,
    m_a: usize,
    m_v: usize,
    trials: usize,
    seed: u64,
    setting: BypassSetting,
) -> Result<BypassEstimate> {
    check(n, m_a, m_v)?;
    if trials == 0 {
        return Err(Error::Config("Monte Carlo needs at least one trial".into()));
    }
    if let BypassSetting::Inductive { classes: 0 } = setting {
        return Err(Error::Config("at least one class is required".into()));
    }
    let mut nodes = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut bypasses = 0;
    for _ in 0..trials {
        let attacker: Vec<usize> = sample(&mut nodes, n, m_a).into_vec();
        let verifier: Vec<usize> = sample(&mut nodes, n, m_v).into_vec();
        let ok = match setting {
            BypassSetting::Transductive => {
                let mut honest = vec![false; n];
                attacker.iter().for_each(|&v| honest[v] = true);
                verifier.iter().all(|&v| honest[v])
            }
            BypassSetting::Inductive { classes } => {
                let guessed: BTreeMap<usize, usize> =
                    attacker.iter().map(|&v| (v, targets.gen_range(0..classes))).collect();
                let wanted: Vec<usize> = verifier.iter().map(|_| targets.gen_range(0..classes)).collect();
                verifier.iter().zip(&wanted).all(|(v, t)| guessed.get(v) == Some(t))
            }
        };
        bypasses += ok as usize;
    }
    let rate = bypasses as f64 / trials as f64;
    Ok(BypassEstimate { trials, bypasses, rate, stderr: (rate * (1.0 - rate) / trials as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_worked_example() {
        let p = bypass_prob_exact(100, 60, 2).unwrap();
        assert!((p - 60.0 * 59.0 / (100.0 * 99.0)).abs() < 1e-15);
        assert!((bypass_prob_approx(100, 60, 2, 1).unwrap() - 0.36).abs() < 1e-15);
        assert!((bypass_prob_approx(100, 60, 2, 2).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn edges() {
        assert_eq!(bypass_prob_exact(10, 10, 3).unwrap(), 1.0);
        assert_eq!(bypass_prob_exact(10, 0, 3).unwrap(), 0.0);
        assert_eq!(bypass_prob_exact(10, 2, 3).unwrap(), 0.0);
        assert!(bypass_prob_exact(10, 11, 3).is_err());
        assert_eq!(bypass_prob_exact(10, 5, 0).unwrap(), 1.0);
        assert!(bypass_prob_exact(10, 5, 11).is_err());
    }

    #[test]
    fn inductive_never_exceeds_transductive_pairwise() {
        let t = bypass_rate_monte_carlo(30, 20, 2, 2000, 4, BypassSetting::Transductive).unwrap();
        let i = bypass_rate_monte_carlo(30, 20, 2, 2000, 4, BypassSetting::Inductive { classes: 2 }).unwrap();
        assert!(i.bypasses <= t.bypasses);
    }
}
