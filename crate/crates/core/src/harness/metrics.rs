use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::verify::{verify, Verdict, VerifyOptions};
use crate::attacks::AttackOutcome;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::serving::PredictionEndpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub attempted: usize,
    pub valid: usize,
    /// Valid trials whose verification could not complete. Excluded from every rate.
    pub inconclusive: usize,
    pub detections: usize,
    /// `None` when no valid trial completed.
    pub dr: Option<f64>,
    /// Detection rate using only the first `k` fingerprints, for `k = 1..=K`.
    pub per_k: Vec<Option<f64>>,
    /// For each conclusive valid trial in input order, the 1-based position of the first mismatch.
    pub detected_at: Vec<Option<usize>>,
}

impl DetectionResult {
    /// Detection indicator per conclusive valid trial when only the first `k` fingerprints are used.
    pub fn indicators(&self, k: usize) -> Vec<f64> {
        self.detected_at.iter().map(|d| matches!(d, Some(p) if *p <= k) as u8 as f64).collect()
    }
}

/// Verifies `fps` against the endpoint built for every valid attack and
/// summarizes how often the tampering is caught.
pub fn detection_rate<F>(attacks: &[AttackOutcome], fps: &[Fingerprint], factory: F) -> Result<DetectionResult>
where
    F: Fn(&AttackOutcome) -> Result<Arc<dyn PredictionEndpoint>> + Sync,
{
    if fps.is_empty() {
        return Err(Error::Config("no fingerprints to verify".into()));
    }
    let valid: Vec<&AttackOutcome> = attacks.iter().filter(|a| a.valid).collect();
    let outcomes: Vec<Option<Option<usize>>> = valid
        .par_iter()
        .map(|a| {
            let ep = factory(a)?;
            let report = verify(ep.as_ref(), fps, VerifyOptions { fail_fast: false })?;
            Ok(match report.verdict {
                Verdict::Inconclusive => None,
                _ => Some(report.first_mismatch()),
            })
        })
        .collect::<Result<_>>()?;
    let detected_at: Vec<Option<usize>> = outcomes.iter().flatten().copied().collect();
    let conclusive = detected_at.len();
    let rate = |k: usize| {
        (conclusive > 0).then(|| {
            detected_at.iter().filter(|d| matches!(d, Some(p) if *p <= k)).count() as f64 / conclusive as f64
        })
    };
    let detections = detected_at.iter().filter(|d| d.is_some()).count();
    Ok(DetectionResult {
        attempted: attacks.len(),
        valid: valid.len(),
        inconclusive: valid.len() - conclusive,
        detections,
        dr: rate(fps.len()),
        per_k: (1..=fps.len()).map(rate).collect(),
        detected_at,
    })
}

/// Smallest `k` whose detection rate reaches 1.
pub fn min_queries_for_full_detection(per_k: &[Option<f64>]) -> Option<usize> {
    per_k.iter().position(|r| *r == Some(1.0)).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryImprovement {
    pub queries_a: Option<usize>,
    pub queries_b: Option<usize>,
    /// `queries_a / queries_b`, absent when unbounded or undefined.
    pub ratio: Option<f64>,
    /// Method A never reached full detection within the probed budget while B did.
    pub unbounded: bool,
}

/// How many times fewer queries method B needs than method A to detect every trial.
pub fn query_improvement(queries_a: Option<usize>, queries_b: Option<usize>) -> QueryImprovement {
    let (ratio, unbounded) = match (queries_a, queries_b) {
        (Some(a), Some(b)) => (Some(a as f64 / b as f64), false),
        (None, Some(_)) => (None, true),
        _ => (None, false),
    };
    QueryImprovement { queries_a, queries_b, ratio, unbounded }
}

/// One-sided percentile bootstrap lower bound on `mean(a - b)` over paired samples.
pub fn paired_bootstrap_lower(a: &[f64], b: &[f64], resamples: usize, confidence: f64, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Config(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    if resamples == 0 || !(0.0..1.0).contains(&confidence) {
        return Err(Error::Config("bootstrap needs resamples > 0 and confidence in [0, 1)".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let idx = (((1.0 - confidence) * resamples as f64).floor() as usize).min(resamples - 1);
    Ok(means[idx])
}
