//! Ranking metrics for engagement predictions, per partner and pooled.
//!
//! Every ranked metric orders records by score descending and breaks ties
//! by ascending record id, so results are a pure function of
//! `(id, score, label)` triples.

mod ranking;
mod report;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ranking::{auc_roc, average_precision, ndcg_at_k, precision_at_k, roc_points, roc_trapezoid_area};
pub use report::{aggregate, aggregate_pooled, EvalReport, Exclusion, ExclusionReason, KRule, MetricValues, PartnerMetrics};

/// One scored impression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: u64,
    pub partner: u32,
    pub score: f64,
    pub label: bool,
}

/// A non-empty collection of scored records with unique ids and finite scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    records: Vec<Scored>,
    positives: usize,
}

impl ScoredSet {
    pub fn new(records: Vec<Scored>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyData("a scored set needs at least one record".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !r.score.is_finite() {
                return Err(Error::InvalidConfig(format!("record {} has non-finite score {}", r.id, r.score)));
            }
            if !seen.insert(r.id) {
                return Err(Error::InvalidConfig(format!("duplicate record id {}", r.id)));
            }
        }
        let positives = records.iter().filter(|r| r.label).count();
        Ok(Self { records, positives })
    }

    /// Build from `(id, partner, score, label)` tuples.
    pub fn from_parts(parts: impl IntoIterator<Item = (u64, u32, f64, bool)>) -> Result<Self> {
        Self::new(
            parts
                .into_iter()
                .map(|(id, partner, score, label)| Scored {
                    id,
                    partner,
                    score,
                    label,
                })
                .collect(),
        )
    }

    pub fn records(&self) -> &[Scored] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.records.len() - self.positives
    }

    /// Records in ranking order: score descending, then id ascending.
    pub fn ranked(&self) -> Vec<Scored> {
        let mut out = self.records.clone();
        out.sort_by(rank_order);
        out
    }

    /// Split into one set per partner id.
    pub fn by_partner(&self) -> BTreeMap<u32, ScoredSet> {
        let mut groups: BTreeMap<u32, Vec<Scored>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(r.partner).or_default().push(*r);
        }
        groups
            .into_iter()
            .map(|(p, records)| {
                let positives = records.iter().filter(|r| r.label).count();
                (p, ScoredSet { records, positives })
            })
            .collect()
    }

    /// Concatenate sets into one pooled set.
    pub fn pool<'a>(sets: impl IntoIterator<Item = &'a ScoredSet>) -> Result<Self> {
        Self::new(sets.into_iter().flat_map(|s| s.records.iter().copied()).collect())
    }
}

pub(crate) fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    // scores are finite, so partial_cmp never fails; -0.0 and 0.0 compare equal
    b.score
        .partial_cmp(&a.score)
        .expect("finite scores")
        .then(a.id.cmp(&b.id))
}

/// The metrics reported per partner and pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ndcg,
    Ap,
    Precision,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Auc, Metric::Ndcg, Metric::Ap, Metric::Precision];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Ndcg => "ndcg",
            Metric::Ap => "ap",
            Metric::Precision => "precision",
        }
    }

    /// Whether the metric is cut off at rank k.
    pub fn uses_k(self) -> bool {
        matches!(self, Metric::Ndcg | Metric::Precision)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auc" | "auc-roc" | "auc_roc" => Ok(Metric::Auc),
            "ndcg" => Ok(Metric::Ndcg),
            "ap" => Ok(Metric::Ap),
            "precision" | "p@k" => Ok(Metric::Precision),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric {other:?} (expected auc, ndcg, ap or precision)"
            ))),
        }
    }
}
