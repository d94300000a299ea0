use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ranking::{auc_roc, average_precision, ndcg_at_k, precision_at_k};
use super::{Metric, ScoredSet};
use crate::error::{Error, Result};

/// How k is chosen for the @k metrics of a set with `n` records.
///
/// With `scale` unset k is always `cap`; otherwise it is
/// `min(cap, ceil(scale * n))`, never below 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KRule {
    pub cap: usize,
    #[serde(default)]
    pub scale: Option<f64>,
}

impl KRule {
    pub fn fixed(k: usize) -> Self {
        Self { cap: k, scale: None }
    }

    pub fn scaled(cap: usize, scale: f64) -> Self {
        Self {
            cap,
            scale: Some(scale),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cap == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        match self.scale {
            Some(s) if !(s > 0.0 && s <= 1.0) => Err(Error::InvalidConfig(format!("k scale {s} outside (0, 1]"))),
            _ => Ok(()),
        }
    }

    pub fn k_for(&self, n: usize) -> usize {
        match self.scale {
            None => self.cap,
            Some(s) => ((s * n as f64).ceil() as usize).clamp(1, self.cap.max(1)),
        }
    }
}

impl Default for KRule {
    fn default() -> Self {
        Self::scaled(1000, 0.1)
    }
}

/// One value per metric; `None` where the metric is undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub auc: Option<f64>,
    pub ndcg: Option<f64>,
    pub ap: Option<f64>,
    pub precision: Option<f64>,
}

impl MetricValues {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Auc => self.auc,
            Metric::Ndcg => self.ndcg,
            Metric::Ap => self.ap,
            Metric::Precision => self.precision,
        }
    }

    fn set(&mut self, metric: Metric, value: Option<f64>) {
        match metric {
            Metric::Auc => self.auc = value,
            Metric::Ndcg => self.ndcg = value,
            Metric::Ap => self.ap = value,
            Metric::Precision => self.precision = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    SingleClass,
    NoPositives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub partner: u32,
    pub metric: Metric,
    pub reason: ExclusionReason,
}

/// Metrics of a single partner's records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerMetrics {
    pub partner: u32,
    pub n_records: usize,
    pub n_positives: usize,
    pub k: usize,
    pub values: MetricValues,
}

/// Per-partner table plus macro and micro aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub partners: Vec<PartnerMetrics>,
    /// Unweighted mean over partners where the metric is defined; `None`
    /// when every partner was excluded.
    pub macro_values: MetricValues,
    pub micro_values: MetricValues,
    pub excluded: Vec<Exclusion>,
    pub k_rule: KRule,
    /// k applied to the pooled set.
    pub micro_k: usize,
}

impl EvalReport {
    pub fn macro_value(&self, metric: Metric) -> Option<f64> {
        self.macro_values.get(metric)
    }

    pub fn micro_value(&self, metric: Metric) -> Option<f64> {
        self.micro_values.get(metric)
    }

    /// Number of partners contributing to the macro value of `metric`.
    pub fn n_included(&self, metric: Metric) -> usize {
        self.partners.iter().filter(|p| p.values.get(metric).is_some()).count()
    }
}

/// Neumaier-compensated mean.
fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    Some((sum + comp) / values.len() as f64)
}

fn metric_values(set: &ScoredSet, k: usize) -> Result<MetricValues> {
    let has_pos = set.positives() > 0;
    Ok(MetricValues {
        auc: auc_roc(set),
        // a partner without positives has no ranking quality to measure
        ndcg: if has_pos { Some(ndcg_at_k(set, k)?) } else { None },
        ap: average_precision(set),
        precision: Some(precision_at_k(set, k)?),
    })
}

/// Evaluate per-partner sets and aggregate them.
///
/// Each set must hold records of exactly one partner, and no partner may
/// appear twice.
pub fn aggregate(sets: &[ScoredSet], k_rule: KRule) -> Result<EvalReport> {
    k_rule.validate()?;
    if sets.is_empty() {
        return Err(Error::EmptyData("no partners to aggregate".into()));
    }
    let mut seen = BTreeSet::new();
    let mut partners = Vec::with_capacity(sets.len());
    let mut excluded = Vec::new();
    for set in sets {
        let partner = set.records()[0].partner;
        if set.records().iter().any(|r| r.partner != partner) {
            return Err(Error::InvalidConfig(format!("set for partner {partner} mixes partners")));
        }
        if !seen.insert(partner) {
            return Err(Error::InvalidConfig(format!("partner {partner} appears twice")));
        }
        let k = k_rule.k_for(set.len());
        let values = metric_values(set, k)?;
        for metric in Metric::ALL {
            if values.get(metric).is_none() {
                let reason = if metric == Metric::Auc && set.positives() > 0 {
                    ExclusionReason::SingleClass
                } else {
                    ExclusionReason::NoPositives
                };
                excluded.push(Exclusion { partner, metric, reason });
            }
        }
        partners.push(PartnerMetrics {
            partner,
            n_records: set.len(),
            n_positives: set.positives(),
            k,
            values,
        });
    }
    partners.sort_by_key(|p| p.partner);
    excluded.sort_by_key(|e| (e.partner, e.metric));

    let mut macro_values = MetricValues::default();
    for metric in Metric::ALL {
        let defined: Vec<f64> = partners.iter().filter_map(|p| p.values.get(metric)).collect();
        macro_values.set(metric, mean(&defined));
    }
    let pooled = ScoredSet::pool(sets)?;
    let micro_k = k_rule.k_for(pooled.len());
    let micro_values = metric_values(&pooled, micro_k)?;
    Ok(EvalReport {
        partners,
        macro_values,
        micro_values,
        excluded,
        k_rule,
        micro_k,
    })
}

/// Split a pooled set by partner and aggregate.
pub fn aggregate_pooled(set: &ScoredSet, k_rule: KRule) -> Result<EvalReport> {
    let sets: Vec<ScoredSet> = set.by_partner().into_values().collect();
    aggregate(&sets, k_rule)
}
