use super::{rank_order, Scored, ScoredSet};
use crate::error::{Error, Result};

/// Area under the ROC curve by rank sum, ties scored one half.
///
/// `None` when the set lacks positives or negatives.
pub fn auc_roc(set: &ScoredSet) -> Option<f64> {
    let (p, n) = (set.positives(), set.negatives());
    if p == 0 || n == 0 {
        return None;
    }
    // ascending scores; tied groups share their average rank
    let mut sorted: Vec<&Scored> = set.records().iter().collect();
    sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].score == sorted[start].score {
            end += 1;
        }
        // ranks start+1 ..= end, averaged
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let group_pos = sorted[start..end].iter().filter(|r| r.label).count();
        rank_sum += avg_rank * group_pos as f64;
        start = end;
    }
    let (p, n) = (p as f64, n as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean of the precision at each positive's rank. `None` without positives.
pub fn average_precision(set: &ScoredSet) -> Option<f64> {
    if set.positives() == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, r) in set.ranked().iter().enumerate() {
        if r.label {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Some(total / set.positives() as f64)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidConfig("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// DCG over the top `min(k, n)` records with binary relevance, divided by
/// the DCG of the ideal ordering. Zero when the set has no positives.
pub fn ndcg_at_k(set: &ScoredSet, k: usize) -> Result<f64> {
    check_k(k)?;
    if set.positives() == 0 {
        return Ok(0.0);
    }
    let dcg: f64 = set
        .ranked()
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, r)| r.label)
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=k.min(set.positives())).map(discount).sum();
    Ok(dcg / ideal)
}

/// Share of positives in the top `min(k, n)` records.
pub fn precision_at_k(set: &ScoredSet, k: usize) -> Result<f64> {
    check_k(k)?;
    let cut = k.min(set.len());
    let hits = set.ranked().iter().take(cut).filter(|r| r.label).count();
    Ok(hits as f64 / cut as f64)
}

/// ROC staircase `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per
/// distinct score threshold. `None` unless both classes are present.
pub fn roc_points(set: &ScoredSet) -> Option<Vec<(f64, f64)>> {
    let (p, n) = (set.positives() as f64, set.negatives() as f64);
    if p == 0.0 || n == 0.0 {
        return None;
    }
    let mut sorted: Vec<&Scored> = set.records().iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Some(points)
}

/// Trapezoid area under a polyline of `(x, y)` points.
pub fn roc_trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}
