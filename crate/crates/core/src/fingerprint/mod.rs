//! Fingerprint scoring, selection and construction.
//!
//! Transductive fingerprints are node ids of the hosted graph whose clean
//! predictions are fragile under parameter tampering. Inductive fingerprints
//! come with their own graph, a shadow graph nudged so its fingerprint nodes
//! become fragile while every clean prediction stays put.

mod file;
mod inductive;
mod transductive;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use file::{
    load_fingerprint_file, parse_fingerprint_file, save_fingerprint_file, FingerprintFile,
    InductiveFile, InductiveItem, TransductiveFile, TransductiveItem,
};
pub use inductive::{
    check_constraint, construct_inductive_f, construct_inductive_l,
    construct_inductive_randomized, ConstraintCheck, InductiveConfig, InductiveFingerprintSet,
    ModelAccess, ModelOracle, Move, PosteriorOracle, StopReason,
};
pub use transductive::{
    activation_coverage, baseline_manc, baseline_random, generate, generate_randomized, score_table_f, score_table_l,
    score_transductive_f, score_transductive_l, select_fingerprints,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FingerprintMethod {
    F,
    L,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "manc")]
    Manc,
    #[serde(rename = "randF")]
    RandF,
    #[serde(rename = "randL")]
    RandL,
}

impl FingerprintMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FingerprintMethod::F => "F",
            FingerprintMethod::L => "L",
            FingerprintMethod::Random => "random",
            FingerprintMethod::Manc => "manc",
            FingerprintMethod::RandF => "randF",
            FingerprintMethod::RandL => "randL",
        }
    }
}

impl fmt::Display for FingerprintMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FingerprintMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "F" => FingerprintMethod::F,
            "L" => FingerprintMethod::L,
            "random" => FingerprintMethod::Random,
            "manc" => FingerprintMethod::Manc,
            "randF" => FingerprintMethod::RandF,
            "randL" => FingerprintMethod::RandL,
            other => return Err(Error::Config(format!("unknown fingerprint method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerprintMode {
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: FingerprintMethod,
    pub seed: u64,
    pub pool_size: usize,
}

/// One verification query: a node, the clean model's label for it and, for
/// inductive fingerprints, the graph the query must be evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub node: usize,
    pub expected_label: usize,
    pub score: f64,
    pub attached_graph: Option<Arc<Graph>>,
    pub provenance: Provenance,
}

impl Fingerprint {
    pub fn mode(&self) -> FingerprintMode {
        if self.attached_graph.is_some() {
            FingerprintMode::Inductive
        } else {
            FingerprintMode::Transductive
        }
    }
}

/// Fingerprint scores over a candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub method: FingerprintMethod,
    pub scores: BTreeMap<usize, f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, v: usize) -> Option<f64> {
        self.scores.get(&v).copied()
    }
}
