use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::metrics::{KRule, Metric};
use crate::model::{ModelKind, TrainConfig};

/// Metrics an alpha can be selected for. Precision@k reuses the NDCG choice.
pub const SELECTION_METRICS: [Metric; 3] = [Metric::Auc, Metric::Ndcg, Metric::Ap];

/// Alpha per (model kind, selection metric).
pub type AlphaTable = BTreeMap<ModelKind, BTreeMap<Metric, f64>>;

/// The metric whose alpha is used when reporting `metric`.
pub fn selection_metric(metric: Metric) -> Metric {
    match metric {
        Metric::Precision => Metric::Ndcg,
        m => m,
    }
}

fn per_metric(auc: f64, ndcg: f64, ap: f64) -> BTreeMap<Metric, f64> {
    BTreeMap::from([(Metric::Auc, auc), (Metric::Ndcg, ndcg), (Metric::Ap, ap)])
}

/// Alpha values chosen by the original grid search on production data.
pub fn reference_alphas() -> AlphaTable {
    BTreeMap::from([
        (ModelKind::Sda, per_metric(0.5, 0.5, 0.5)),
        (ModelKind::Iada, per_metric(0.8, 0.5, 0.8)),
        (ModelKind::Lada, per_metric(0.9, 0.8, 0.9)),
    ])
}

/// Everything a full experiment needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    /// Training settings shared by every kind.
    pub train: TrainConfig,
    /// Per-kind settings that replace `train` wholesale for that kind.
    pub train_by_kind: BTreeMap<ModelKind, TrainConfig>,
    pub models: Vec<ModelKind>,
    pub fractions: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Alpha used by the journey for kinds without a grid-search result.
    pub alpha: AlphaTable,
    /// Metrics written to the results table.
    pub metrics: Vec<Metric>,
    pub k: KRule,
    pub seeds: Vec<u64>,
    pub head_volume_fraction: f64,
    /// Number of tail partners held out for alpha selection; unset keeps
    /// the 37:149 validation-to-test proportion.
    pub n_validation: Option<usize>,
    pub split_seed: u64,
    /// Worker threads for journey cells; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            train_by_kind: BTreeMap::new(),
            models: ModelKind::ALL.to_vec(),
            fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            alpha_grid: (1..=10).map(|i| i as f64 / 10.0).collect(),
            alpha: reference_alphas(),
            metrics: Metric::ALL.to_vec(),
            k: KRule::default(),
            seeds: (0..10).collect(),
            head_volume_fraction: 0.8,
            n_validation: None,
            split_seed: 0,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.generator.validate()?;
        self.train.validate()?;
        for cfg in self.train_by_kind.values() {
            cfg.validate()?;
        }
        self.k.validate()?;
        if self.models.is_empty() {
            return bad("no model kinds to run".into());
        }
        if self.fractions.first() != Some(&0.0) {
            return bad("the fraction schedule must start at 0".into());
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad(format!("fractions must lie in [0, 1], got {:?}", self.fractions));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return bad("fractions must be strictly increasing".into());
        }
        if self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad(format!("alpha grid values must lie in (0, 1], got {:?}", self.alpha_grid));
        }
        for (kind, table) in &self.alpha {
            for (metric, a) in table {
                if !(*a > 0.0 && *a <= 1.0) {
                    return bad(format!("alpha for {kind}/{metric} must lie in (0, 1], got {a}"));
                }
            }
        }
        if self.seeds.is_empty() {
            return bad("the seed list is empty".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        if !(self.head_volume_fraction > 0.0 && self.head_volume_fraction < 1.0) {
            return bad(format!(
                "head_volume_fraction must lie in (0, 1), got {}",
                self.head_volume_fraction
            ));
        }
        if self.metrics.is_empty() {
            return bad("no metrics to report".into());
        }
        Ok(())
    }

    pub fn train_for(&self, kind: ModelKind) -> &TrainConfig {
        self.train_by_kind.get(&kind).unwrap_or(&self.train)
    }

    /// Alpha for `kind` reported under `metric`, looked up in `chosen` first
    /// and then in the config table. NT always uses 1.
    pub fn alpha_for(&self, kind: ModelKind, metric: Metric, chosen: Option<&AlphaTable>) -> f64 {
        if !kind.uses_alpha() {
            return 1.0;
        }
        let key = selection_metric(metric);
        chosen
            .and_then(|t| t.get(&kind))
            .and_then(|m| m.get(&key))
            .or_else(|| self.alpha.get(&kind).and_then(|m| m.get(&key)))
            .copied()
            .unwrap_or(self.train_for(kind).alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seeds = [1, 2]\nmodels = [\"nt\", \"lada\"]\n[generator]\nn_partners = 50\n[alpha.lada]\nap = 0.3\n",
        )
        .unwrap();
        assert_eq!(cfg.generator.n_partners, 50);
        assert_eq!(cfg.generator.campaign_dim, 20);
        assert_eq!(cfg.alpha_for(ModelKind::Lada, Metric::Ap, None), 0.3);
        assert_eq!(cfg.alpha_for(ModelKind::Nt, Metric::Ap, None), 1.0);
    }

    #[test]
    fn alpha_lookup_order() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.alpha_for(ModelKind::Iada, Metric::Auc, None), 0.8);
        assert_eq!(cfg.alpha_for(ModelKind::Iada, Metric::Precision, None), 0.5);
        let chosen = AlphaTable::from([(ModelKind::Iada, BTreeMap::from([(Metric::Auc, 0.2)]))]);
        assert_eq!(cfg.alpha_for(ModelKind::Iada, Metric::Auc, Some(&chosen)), 0.2);
        assert_eq!(cfg.alpha_for(ModelKind::Iada, Metric::Ap, Some(&chosen)), 0.8);
    }

    #[test]
    fn invalid_schedules_rejected() {
        for text in [
            "fractions = [0.2, 0.4]",
            "fractions = [0.0, 0.6, 0.4]",
            "fractions = [0.0, 1.5]",
            "seeds = [1, 1]",
            "alpha_grid = [0.0]",
            "unknown_key = 3",
            "[generator]\ntarget_positive_rate = 0.7",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
