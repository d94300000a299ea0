use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{generate, read_dataset, read_split, split_head_tail, write_dataset, write_split, Dataset, DatasetSplit, Day};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_pooled, EvalReport, KRule, Metric, MetricValues, ScoredSet};
use crate::model::{predict, train_base, Checkpoint, LabeledData, ModelKind, TrainConfig, View};

use super::config::{AlphaTable, ExperimentConfig};

pub const ALPHA_FILE: &str = "alpha.json";

/// A dataset together with its partner split.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: DatasetSplit,
}

impl Prepared {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = generate(&cfg.generator)?;
        let split = split_head_tail(&dataset, cfg.head_volume_fraction, cfg.n_validation, cfg.split_seed)?;
        Ok(Self { dataset, split })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_dataset(&self.dataset, dir.as_ref())?;
        write_split(&self.split, dir.as_ref())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            dataset: read_dataset(dir.as_ref())?,
            split: read_split(dir.as_ref())?,
        })
    }

    /// Train-day records of the head partners.
    pub fn head_data(&self) -> Result<LabeledData> {
        self.dataset.labeled(&self.dataset.record_ids(Day::Train, &self.split.head))
    }

    /// Train-day records of the tail-test partners sampled at `fraction`.
    pub fn fine_tune_data(&self, fraction: f64, seed: u64) -> Result<LabeledData> {
        self.dataset
            .labeled(&self.dataset.sample_partners(&self.split.test, fraction, seed)?)
    }
}

/// Score records with a checkpoint; record ids become the scored ids.
pub fn score_records(checkpoint: &Checkpoint, dataset: &Dataset, ids: &[usize], view: View) -> Result<ScoredSet> {
    if ids.is_empty() {
        return Err(Error::EmptyData("no records to evaluate".into()));
    }
    let data = dataset.labeled(ids)?;
    let scores = predict(checkpoint, data.source(), view)?;
    ScoredSet::from_parts(
        ids.iter()
            .zip(scores.iter())
            .map(|(&id, &s)| (id as u64, dataset.records[id].partner, s, dataset.records[id].label)),
    )
}

/// Evaluate on the eval-day records of `partners`.
pub fn evaluate_partners(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    partners: &[u32],
    view: View,
    k: KRule,
) -> Result<(EvalReport, ScoredSet)> {
    let ids = dataset.record_ids(Day::Eval, partners);
    let set = score_records(checkpoint, dataset, &ids, view)?;
    Ok((aggregate_pooled(&set, k)?, set))
}

/// Cold start is scored through the target view, later fractions through the source view.
pub fn view_for_fraction(fraction: f64) -> View {
    if fraction == 0.0 {
        View::Target
    } else {
        View::Source
    }
}

/// Outcome of an alpha grid search for one model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub kind: ModelKind,
    /// Cold-start macro values on the validation partners per alpha tried.
    pub scores: Vec<(f64, MetricValues)>,
    pub chosen: BTreeMap<Metric, f64>,
}

/// Pick alpha per metric by cold-start macro performance on the validation
/// partners, training one base model per grid value. Ties go to the larger
/// alpha. NT has no transfer term and always gets alpha 1.
pub fn grid_search(
    prepared: &Prepared,
    kind: ModelKind,
    metrics: &[Metric],
    grid: &[f64],
    train: &TrainConfig,
    k: KRule,
    seed: u64,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("the alpha grid is empty".into()));
    }
    if !kind.uses_alpha() {
        return Ok(GridOutcome {
            kind,
            scores: Vec::new(),
            chosen: metrics.iter().map(|&m| (m, 1.0)).collect(),
        });
    }
    if grid.len() == 1 {
        return Ok(GridOutcome {
            kind,
            scores: Vec::new(),
            chosen: metrics.iter().map(|&m| (m, grid[0])).collect(),
        });
    }
    if prepared.split.validation.is_empty() {
        return Err(Error::EmptyData("no validation partners for the grid search".into()));
    }
    let head = prepared.head_data()?;
    let schema = prepared.dataset.schema();
    let mut scores = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let cfg = train.with_alpha(alpha).with_seed(seed);
        let ckpt = train_base(kind, schema, &head, &cfg)?;
        let (report, _) = evaluate_partners(&ckpt, &prepared.dataset, &prepared.split.validation, View::Target, k)?;
        scores.push((alpha, report.macro_values));
    }
    let mut chosen = BTreeMap::new();
    for &metric in metrics {
        let mut best: Option<(f64, f64)> = None;
        for (alpha, values) in &scores {
            let Some(v) = values.get(metric) else { continue };
            let better = match best {
                None => true,
                Some((ba, bv)) => v > bv || (v == bv && *alpha > ba),
            };
            if better {
                best = Some((*alpha, v));
            }
        }
        let (alpha, _) = best.ok_or_else(|| {
            Error::Experiment(format!("{metric} is undefined on every validation partner for all alphas"))
        })?;
        chosen.insert(metric, alpha);
    }
    Ok(GridOutcome { kind, scores, chosen })
}

pub fn read_alpha_table(dir: impl AsRef<Path>) -> Result<Option<AlphaTable>> {
    let path = dir.as_ref().join(ALPHA_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Merge `kind`'s choices into the alpha file in `dir`.
pub fn record_alpha_choice(dir: impl AsRef<Path>, kind: ModelKind, chosen: &BTreeMap<Metric, f64>) -> Result<AlphaTable> {
    let mut table = read_alpha_table(dir.as_ref())?.unwrap_or_default();
    table.entry(kind).or_default().extend(chosen.iter().map(|(m, a)| (*m, *a)));
    let path = dir.as_ref().join(ALPHA_FILE);
    let mut text = serde_json::to_string_pretty(&table)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}
