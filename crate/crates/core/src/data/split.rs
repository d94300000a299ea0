use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Day};
use crate::error::{Error, Result};
use crate::nn::substream;

pub const SPLIT_FILE: &str = "split.json";

const STREAM_TAIL_SPLIT: u64 = 1;
const FRACTION_STREAM_BASE: u64 = 1 << 32;

/// Partner ids of the head, tail-validation and tail-test groups, each sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub head: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
    pub head_volume_fraction: f64,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn tail(&self) -> Vec<u32> {
        let mut t: Vec<u32> = self.validation.iter().chain(&self.test).copied().collect();
        t.sort_unstable();
        t
    }
}

/// Validation share of the tail, 37 of every 186 tail partners, rounded.
pub fn default_validation_count(n_tail: usize) -> usize {
    (n_tail as f64 * 37.0 / 186.0).round() as usize
}

/// Split partners into the head (the shortest budget-ranked prefix with at
/// least `head_volume_fraction` of train-day impressions) and a tail that a
/// seeded draw divides into `n_validation` validation partners and the rest
/// for testing. `None` uses [`default_validation_count`].
pub fn split_head_tail(
    dataset: &Dataset,
    head_volume_fraction: f64,
    n_validation: Option<usize>,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(head_volume_fraction > 0.0 && head_volume_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "head volume fraction must lie in (0, 1), got {head_volume_fraction}"
        )));
    }
    let counts = dataset.impressions_per_partner(Day::Train);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyData("no train-day records to split".into()));
    }
    // partners are stored in budget-rank order
    let needed = head_volume_fraction * total as f64;
    let mut covered = 0usize;
    let mut head_len = 0;
    for &c in &counts {
        if covered as f64 >= needed {
            break;
        }
        covered += c;
        head_len += 1;
    }
    let head: Vec<u32> = (0..head_len as u32).collect();
    let mut tail: Vec<u32> = (head_len as u32..counts.len() as u32).collect();
    let n_validation = n_validation.unwrap_or_else(|| default_validation_count(tail.len()));
    if n_validation > tail.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_validation} validation partners requested but the tail has {}",
            tail.len()
        )));
    }
    tail.shuffle(&mut substream(seed, STREAM_TAIL_SPLIT));
    let mut validation = tail[..n_validation].to_vec();
    let mut test = tail[n_validation..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        head,
        validation,
        test,
        head_volume_fraction,
        seed,
    })
}

/// Uniform subset of one partner's records of size `round(fraction * n)`,
/// returned in input order. Subsets are nested in `fraction` for a fixed
/// `(partner, seed)`.
pub fn sample_fraction(records: &[usize], fraction: f64, partner: u32, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("fraction {fraction} outside [0, 1]")));
    }
    let take = (fraction * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut substream(seed, FRACTION_STREAM_BASE + partner as u64));
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i]).collect())
}

impl Dataset {
    /// Train-day records of `partners` sampled at `fraction` per partner.
    pub fn sample_partners(&self, partners: &[u32], fraction: f64, seed: u64) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for &p in partners {
            let ids = self.record_ids(Day::Train, &[p]);
            out.extend(sample_fraction(&ids, fraction, p, seed)?);
        }
        Ok(out)
    }
}

pub fn write_split(split: &DatasetSplit, dir: impl AsRef<Path>) -> Result<()> {
    let path = dir.as_ref().join(SPLIT_FILE);
    let mut text = serde_json::to_string_pretty(split)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_split(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = dir.as_ref().join(SPLIT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let split: DatasetSplit = serde_json::from_str(&text)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorConfig};
    use proptest::prelude::*;

    fn dataset() -> Dataset {
        generate(&GeneratorConfig {
            n_partners: 60,
            n_users: 300,
            train_day_impressions: 5_000,
            eval_day_impressions: 1_000,
            seed: 11,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn groups_are_disjoint_and_cover_all_partners() {
        let ds = dataset();
        let split = split_head_tail(&ds, 0.8, None, 1).unwrap();
        let mut all: Vec<u32> = split.head.iter().chain(&split.validation).chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        assert_eq!(split.validation.len(), default_validation_count(60 - split.head.len()));
    }

    #[test]
    fn head_is_the_minimal_prefix() {
        let ds = dataset();
        let split = split_head_tail(&ds, 0.8, None, 1).unwrap();
        let counts = ds.impressions_per_partner(Day::Train);
        let total: usize = counts.iter().sum();
        let covered: usize = counts[..split.head.len()].iter().sum();
        let short: usize = counts[..split.head.len() - 1].iter().sum();
        assert!(covered as f64 >= 0.8 * total as f64);
        assert!((short as f64) < 0.8 * total as f64);
    }

    #[test]
    fn near_one_fraction_takes_every_active_partner() {
        let ds = dataset();
        let split = split_head_tail(&ds, 1.0 - 1e-12, Some(0), 1).unwrap();
        let active = ds.impressions_per_partner(Day::Train).iter().filter(|&&c| c > 0).count();
        assert_eq!(split.head.len(), active);
    }

    #[test]
    fn bad_fractions_rejected() {
        let ds = dataset();
        assert!(split_head_tail(&ds, 0.0, None, 1).is_err());
        assert!(split_head_tail(&ds, 1.0, None, 1).is_err());
        assert!(split_head_tail(&ds, 0.8, Some(1000), 1).is_err());
    }

    #[test]
    fn fraction_examples() {
        let ids: Vec<usize> = (100..200).collect();
        assert_eq!(sample_fraction(&ids, 1.0, 0, 5).unwrap(), ids);
        assert!(sample_fraction(&ids, 0.0, 0, 5).unwrap().is_empty());
        let half = sample_fraction(&ids, 0.5, 0, 5).unwrap();
        assert_eq!(half.len(), 50);
        assert!(half.iter().all(|i| ids.contains(i)));
        assert!(sample_fraction(&ids, 1.5, 0, 5).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let split = split_head_tail(&dataset(), 0.8, None, 2).unwrap();
        write_split(&split, dir.path()).unwrap();
        assert_eq!(read_split(dir.path()).unwrap(), split);
    }

    proptest! {
        #[test]
        fn fractions_are_nested(n in 0usize..300, a in 0.0f64..=1.0, b in 0.0f64..=1.0, partner in 0u32..50, seed in any::<u64>()) {
            let ids: Vec<usize> = (0..n).map(|i| i * 3).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = sample_fraction(&ids, lo, partner, seed).unwrap();
            let large = sample_fraction(&ids, hi, partner, seed).unwrap();
            prop_assert_eq!(small.len(), (lo * n as f64).round() as usize);
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }
}
