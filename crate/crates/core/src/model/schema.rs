use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Feature layout shared by both domains: category slots first, then
/// campaign (engineered engagement count) slots. The target domain is the
/// same space with every campaign slot set to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub category_dim: usize,
    pub campaign_dim: usize,
}

impl FeatureSchema {
    pub fn new(category_dim: usize, campaign_dim: usize) -> Result<Self> {
        if category_dim == 0 || campaign_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "schema dims must be positive, got category {category_dim}, campaign {campaign_dim}"
            )));
        }
        Ok(Self {
            category_dim,
            campaign_dim,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.category_dim + self.campaign_dim
    }

    pub fn category_range(&self) -> Range<usize> {
        0..self.category_dim
    }

    pub fn campaign_range(&self) -> Range<usize> {
        self.category_dim..self.total_dim()
    }

    /// Stable 64-bit digest of the layout.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(b"anchorda/feature-schema/v1");
        hasher.update((self.category_dim as u64).to_le_bytes());
        hasher.update((self.campaign_dim as u64).to_le_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }

    /// Target-domain view of source-domain rows.
    pub fn target_view(&self, source: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(source.ncols())?;
        let mut target = source.to_owned();
        target.slice_mut(s![.., self.campaign_range()]).fill(0.0);
        Ok(target)
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if width == self.total_dim() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "rows have {width} features, schema expects {}",
                self.total_dim()
            )))
        }
    }
}

/// Which domain a batch of records is presented in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Source,
    Target,
}

/// Source-domain feature rows with binary labels, tied to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    fingerprint: u64,
    source: Array2<f64>,
    labels: Array1<f64>,
}

impl LabeledData {
    pub fn new(schema: &FeatureSchema, source: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        schema.check_width(source.ncols())?;
        if source.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                source.nrows(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        if source.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature value".into()));
        }
        Ok(Self {
            fingerprint: schema.fingerprint(),
            source,
            labels,
        })
    }

    pub fn empty(schema: &FeatureSchema) -> Self {
        Self {
            fingerprint: schema.fingerprint(),
            source: Array2::zeros((0, schema.total_dim())),
            labels: Array1::zeros(0),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn source(&self) -> ArrayView2<'_, f64> {
        self.source.view()
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
