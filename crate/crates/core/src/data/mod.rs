//! Synthetic partner-skewed campaign logs and the head/tail split protocol.

mod generate;
mod io;
mod split;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureSchema, LabeledData};

pub use generate::{generate, GeneratorConfig};
pub use io::{read_dataset, write_dataset, DATASET_FILE, PROFILES_FILE};
pub use split::{default_validation_count, read_split, sample_fraction, split_head_tail, write_split, DatasetSplit, SPLIT_FILE};

/// Version of the generative mechanism, written into dataset manifests.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Day {
    Train,
    Eval,
}

impl Day {
    pub fn as_str(self) -> &'static str {
        match self {
            Day::Train => "train",
            Day::Eval => "eval",
        }
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Day {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Day::Train),
            "eval" => Ok(Day::Eval),
            other => Err(Error::InvalidConfig(format!("unknown day {other:?}"))),
        }
    }
}

/// An advertising partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerProfile {
    /// Also the partner's budget rank (0 = largest).
    pub id: u32,
    /// Sorted indices of the partner's categories.
    pub categories: Vec<usize>,
    pub budget_weight: f64,
    /// Row-major `campaign_dim x (category_dim + 1)` matrix taking a user's
    /// category affinities and history effect to log engagement-count rates.
    pub coefficients: Vec<f64>,
}

impl PartnerProfile {
    pub fn multi_hot(&self, category_dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; category_dim];
        for &c in &self.categories {
            v[c] = 1.0;
        }
        v
    }
}

/// One displayed advertisement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub partner: u32,
    pub user: u32,
    pub day: Day,
    /// The user's affinity for each of the partner's categories; zero for
    /// categories the partner does not sell.
    pub categories: Vec<f64>,
    /// Log-transformed engagement counts, `ln(1 + count)`.
    pub campaign: Vec<f64>,
    pub label: bool,
}

/// Profiles plus both days of records, in canonical order (day, partner,
/// draw index). A record's position is its id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub profiles: Vec<PartnerProfile>,
    pub records: Vec<ImpressionRecord>,
}

impl Dataset {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            category_dim: self.config.category_dim,
            campaign_dim: self.config.campaign_dim,
        }
    }

    /// Ids of `day` records belonging to any partner in `partners`, in order.
    pub fn record_ids(&self, day: Day, partners: &[u32]) -> Vec<usize> {
        let mut wanted = vec![false; self.profiles.len()];
        for &p in partners {
            if let Some(w) = wanted.get_mut(p as usize) {
                *w = true;
            }
        }
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.day == day && wanted.get(r.partner as usize).copied().unwrap_or(false))
            .map(|(i, _)| i)
            .collect()
    }

    /// Impressions per partner on `day`, indexed by partner id.
    pub fn impressions_per_partner(&self, day: Day) -> Vec<usize> {
        let mut counts = vec![0; self.profiles.len()];
        for r in self.records.iter().filter(|r| r.day == day) {
            counts[r.partner as usize] += 1;
        }
        counts
    }

    pub fn positive_rate(&self, day: Day) -> f64 {
        let (n, pos) = self
            .records
            .iter()
            .filter(|r| r.day == day)
            .fold((0usize, 0usize), |(n, p), r| (n + 1, p + r.label as usize));
        pos as f64 / n.max(1) as f64
    }

    /// Source-view feature rows and labels of the given records.
    pub fn labeled(&self, ids: &[usize]) -> Result<LabeledData> {
        let schema = self.schema();
        let mut x = Array2::zeros((ids.len(), schema.total_dim()));
        let mut y = Array1::zeros(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            let r = self
                .records
                .get(id)
                .ok_or_else(|| Error::InvalidConfig(format!("record id {id} out of range")))?;
            let mut out = x.row_mut(row);
            for (j, v) in r.categories.iter().chain(&r.campaign).enumerate() {
                out[j] = *v;
            }
            y[row] = r.label as u8 as f64;
        }
        LabeledData::new(&schema, x, y)
    }
}
