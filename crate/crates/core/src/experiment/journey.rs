// Output directory layout of a journey:
//
//   cells/<model>_a<alpha>_s<seed>.csv   rows of one finished cell (all metrics)
//   cells/<model>_a<alpha>_s<seed>.roc   cold-start pooled ROC points of that cell
//   cells/<...>.failed                   error message of a failed cell
//   results.csv                          merged rows, one alpha per (model, metric)
//   roc/<model>_s<seed>.csv              cold-start ROC of the AUC-selected model
//   alphas.json                          alpha used per (model, metric)
//   failures.csv                         failed cells
//
// Finished cell files are never recomputed, so rerunning a journey only
// trains what is missing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlphaTable, ExperimentConfig};
use super::run::{evaluate_partners, view_for_fraction, Prepared};
use crate::error::{Error, Result};
use crate::metrics::{roc_points, EvalReport, Metric};
use crate::model::{fine_tune, train_base, LabeledData, ModelKind};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "model,fraction,setting,metric,k,value,n_partners_included,seed";
pub const ALPHAS_FILE: &str = "alphas.json";
pub const FAILURES_FILE: &str = "failures.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Macro,
    Micro,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Macro => "macro",
            Setting::Micro => "micro",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Setting::Macro),
            "micro" => Ok(Setting::Micro),
            other => Err(Error::InvalidConfig(format!("unknown setting {other:?}"))),
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: ModelKind,
    pub fraction: f64,
    pub setting: Setting,
    pub metric: Metric,
    /// Cut-off of @k metrics: the configured cap for macro rows, the
    /// pooled k for micro rows.
    pub k: Option<usize>,
    /// `None` when every partner was excluded.
    pub value: Option<f64>,
    pub n_partners_included: usize,
    pub seed: u64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let k = self.k.map(|k| k.to_string()).unwrap_or_default();
        let value = self.value.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model, self.fraction, self.setting, self.metric, k, value, self.n_partners_included, self.seed
        )
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("expected 8 fields, found {}", f.len()));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| format!("invalid {what} {s:?}"));
        Ok(Self {
            model: f[0].parse().map_err(|e: Error| e.to_string())?,
            fraction: num(f[1], "fraction")?,
            setting: f[2].parse().map_err(|e: Error| e.to_string())?,
            metric: f[3].parse().map_err(|e: Error| e.to_string())?,
            k: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|_| format!("invalid k {:?}", f[4]))?)
            },
            value: if f[5] == "NA" { None } else { Some(num(f[5], "value")?) },
            n_partners_included: f[6].parse().map_err(|_| format!("invalid partner count {:?}", f[6]))?,
            seed: f[7].parse().map_err(|_| format!("invalid seed {:?}", f[7]))?,
        })
    }

    fn from_report(model: ModelKind, fraction: f64, seed: u64, metric: Metric, report: &EvalReport) -> [Self; 2] {
        let (k_macro, k_micro) = if metric.uses_k() {
            (Some(report.k_rule.cap), Some(report.micro_k))
        } else {
            (None, None)
        };
        [
            Self {
                model,
                fraction,
                setting: Setting::Macro,
                metric,
                k: k_macro,
                value: report.macro_value(metric),
                n_partners_included: report.n_included(metric),
                seed,
            },
            Self {
                model,
                fraction,
                setting: Setting::Micro,
                metric,
                k: k_micro,
                value: report.micro_value(metric),
                n_partners_included: report.partners.len(),
                seed,
            },
        ]
    }
}

/// Parse a results table, header included.
pub fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected results header".into(),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            ResultRow::parse(l).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message,
            })
        })
        .collect()
}

fn render_rows(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// One trained model followed through every fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub model: ModelKind,
    pub alpha: f64,
    pub seed: u64,
}

impl CellKey {
    pub fn stem(&self) -> String {
        format!("{}_a{}_s{}", self.model, self.alpha, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done,
    Failed(String),
}

/// All rows of a journey plus the alpha used per (model, metric).
#[derive(Debug, Clone, PartialEq)]
pub struct JourneyResult {
    pub alphas: AlphaTable,
    pub cells: Vec<(CellKey, CellStatus)>,
    pub rows: Vec<ResultRow>,
}

impl JourneyResult {
    pub fn failures(&self) -> Vec<(CellKey, String)> {
        self.cells
            .iter()
            .filter_map(|(k, s)| match s {
                CellStatus::Failed(msg) => Some((*k, msg.clone())),
                CellStatus::Done => None,
            })
            .collect()
    }

    pub fn value(&self, model: ModelKind, seed: u64, fraction: f64, setting: Setting, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.seed == seed && r.fraction == fraction && r.setting == setting && r.metric == metric)
            .and_then(|r| r.value)
    }

    /// Mean over the seeds with a value.
    pub fn seed_mean(&self, model: ModelKind, fraction: f64, setting: Setting, metric: Metric) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.fraction == fraction && r.setting == setting && r.metric == metric)
            .filter_map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

struct CellOutput {
    rows: Vec<ResultRow>,
    roc: Vec<(f64, f64)>,
}

fn run_cell(prepared: &Prepared, head: &LabeledData, cfg: &ExperimentConfig, key: CellKey) -> Result<CellOutput> {
    let train = cfg.train_for(key.model).with_alpha(key.alpha).with_seed(key.seed);
    let base = train_base(key.model, prepared.dataset.schema(), head, &train)?;
    let mut rows = Vec::new();
    let mut roc = Vec::new();
    for &fraction in &cfg.fractions {
        let data = prepared.fine_tune_data(fraction, key.seed)?;
        let tuned = fine_tune(&base, &data, &train, fraction)?;
        let (report, set) = evaluate_partners(
            &tuned,
            &prepared.dataset,
            &prepared.split.test,
            view_for_fraction(fraction),
            cfg.k,
        )?;
        for &metric in &cfg.metrics {
            rows.extend(ResultRow::from_report(key.model, fraction, key.seed, metric, &report));
        }
        if fraction == 0.0 {
            roc = roc_points(&set).unwrap_or_default();
        }
    }
    Ok(CellOutput { rows, roc })
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn render_roc(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

/// Run (or resume) the fraction journey for every configured model and
/// seed, writing per-cell files and the merged tables under `out`.
///
/// `chosen` overrides the config's alpha table where it has entries.
/// Cell failures are recorded and the remaining cells still run.
pub fn run_journey(prepared: &Prepared, cfg: &ExperimentConfig, chosen: Option<&AlphaTable>, out: &Path) -> Result<JourneyResult> {
    cfg.validate()?;
    if prepared.split.test.is_empty() {
        return Err(Error::EmptyData("no tail-test partners to evaluate".into()));
    }
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;

    let mut alphas = AlphaTable::new();
    let mut keys = Vec::new();
    for &model in &cfg.models {
        let per_metric: BTreeMap<Metric, f64> =
            cfg.metrics.iter().map(|&m| (m, cfg.alpha_for(model, m, chosen))).collect();
        let distinct: BTreeSet<u64> = per_metric.values().map(|a| a.to_bits()).collect();
        alphas.insert(model, per_metric);
        for &seed in &cfg.seeds {
            for bits in &distinct {
                keys.push(CellKey {
                    model,
                    alpha: f64::from_bits(*bits),
                    seed,
                });
            }
        }
    }

    let cell_path = |key: &CellKey, ext: &str| -> PathBuf { cells_dir.join(format!("{}.{ext}", key.stem())) };
    let pending: Vec<CellKey> = keys.iter().copied().filter(|k| !cell_path(k, "csv").exists()).collect();
    if !pending.is_empty() {
        let head = prepared.head_data()?;
        let work = |key: &CellKey| -> Result<()> {
            match run_cell(prepared, &head, cfg, *key) {
                Ok(output) => {
                    let failed = cell_path(key, "failed");
                    if failed.exists() {
                        fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
                    }
                    write_atomic(&cell_path(key, "roc"), &render_roc(&output.roc))?;
                    write_atomic(&cell_path(key, "csv"), &render_rows(&output.rows))
                }
                Err(err) => write_atomic(&cell_path(key, "failed"), &format!("{err}\n")),
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Experiment(format!("thread pool: {e}")))?;
        let io_results: Vec<Result<()>> = pool.install(|| pending.par_iter().map(work).collect());
        io_results.into_iter().collect::<Result<Vec<()>>>()?;
    }

    // merge in canonical order
    let mut cells = Vec::with_capacity(keys.len());
    let mut cell_rows: BTreeMap<String, Vec<ResultRow>> = BTreeMap::new();
    for key in &keys {
        let path = cell_path(key, "csv");
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            cell_rows.insert(key.stem(), parse_results(&text, &path)?);
            cells.push((*key, CellStatus::Done));
        } else {
            let failed = cell_path(key, "failed");
            let msg = fs::read_to_string(&failed).unwrap_or_else(|_| "cell did not finish".into());
            cells.push((*key, CellStatus::Failed(msg.trim().to_string())));
        }
    }
    let mut rows = Vec::new();
    let roc_dir = out.join("roc");
    fs::create_dir_all(&roc_dir).map_err(|e| Error::io(&roc_dir, e))?;
    for &model in &cfg.models {
        for &seed in &cfg.seeds {
            let key_for = |metric: Metric| CellKey {
                model,
                alpha: alphas[&model][&metric],
                seed,
            };
            for &fraction in &cfg.fractions {
                for setting in [Setting::Macro, Setting::Micro] {
                    for &metric in &cfg.metrics {
                        let Some(source) = cell_rows.get(&key_for(metric).stem()) else { continue };
                        rows.extend(
                            source
                                .iter()
                                .filter(|r| r.fraction == fraction && r.setting == setting && r.metric == metric)
                                .cloned(),
                        );
                    }
                }
            }
            let roc_metric = if cfg.metrics.contains(&Metric::Auc) { Metric::Auc } else { cfg.metrics[0] };
            let src = cell_path(&key_for(roc_metric), "roc");
            if src.exists() {
                let dst = roc_dir.join(format!("{model}_s{seed}.csv"));
                fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
            }
        }
    }
    write_atomic(&out.join(RESULTS_FILE), &render_rows(&rows))?;
    let mut alpha_text = serde_json::to_string_pretty(&alphas)?;
    alpha_text.push('\n');
    write_atomic(&out.join(ALPHAS_FILE), &alpha_text)?;
    let mut failures = String::from("model,alpha,seed,error\n");
    for (key, status) in &cells {
        if let CellStatus::Failed(msg) = status {
            let msg = msg.replace([',', '\n'], " ");
            failures.push_str(&format!("{},{},{},{msg}\n", key.model, key.alpha, key.seed));
        }
    }
    write_atomic(&out.join(FAILURES_FILE), &failures)?;
    Ok(JourneyResult { alphas, cells, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::run::tests::tiny_config;
    use crate::model::View;

    #[test]
    fn row_csv_round_trip() {
        let row = ResultRow {
            model: ModelKind::Lada,
            fraction: 0.2,
            setting: Setting::Micro,
            metric: Metric::Ndcg,
            k: Some(40),
            value: Some(0.123456789),
            n_partners_included: 7,
            seed: 3,
        };
        assert_eq!(ResultRow::parse(&row.to_csv()).unwrap(), row);
        let na = ResultRow { k: None, value: None, ..row };
        assert_eq!(na.to_csv(), "lada,0.2,micro,ndcg,,NA,7,3");
        assert_eq!(ResultRow::parse(&na.to_csv()).unwrap(), na);
    }

    #[test]
    fn journey_is_complete_resumable_and_matches_direct_cold_start() {
        let cfg = ExperimentConfig {
            models: vec![ModelKind::Nt, ModelKind::Iada],
            ..tiny_config()
        };
        let prep = Prepared::generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let result = run_journey(&prep, &cfg, None, dir.path()).unwrap();
        assert!(result.failures().is_empty());
        for &model in &cfg.models {
            for &seed in &cfg.seeds {
                for &metric in &cfg.metrics {
                    for setting in [Setting::Macro, Setting::Micro] {
                        let n = result
                            .rows
                            .iter()
                            .filter(|r| r.model == model && r.seed == seed && r.metric == metric && r.setting == setting)
                            .count();
                        assert_eq!(n, cfg.fractions.len());
                    }
                }
            }
        }
        // IADA reports under two alphas (0.8 for AUC/AP, 0.5 for NDCG/precision)
        assert_eq!(fs::read_dir(dir.path().join("cells")).unwrap().count(), (1 + 2) * 2 * 2);

        // fraction 0 equals a direct cold-start evaluation of the base model
        let train = cfg.train.with_alpha(1.0).with_seed(1);
        let base = train_base(ModelKind::Nt, prep.dataset.schema(), &prep.head_data().unwrap(), &train).unwrap();
        let (direct, _) = evaluate_partners(&base, &prep.dataset, &prep.split.test, View::Target, cfg.k).unwrap();
        assert_eq!(
            result.value(ModelKind::Nt, 1, 0.0, Setting::Macro, Metric::Auc),
            direct.macro_value(Metric::Auc)
        );

        // a rerun trains nothing and rewrites identical bytes
        let before = fs::read(dir.path().join(RESULTS_FILE)).unwrap();
        let marker = dir.path().join("cells").join("nt_a1_s0.csv");
        let stamp = fs::metadata(&marker).unwrap().modified().unwrap();
        let again = run_journey(&prep, &cfg, None, dir.path()).unwrap();
        assert_eq!(again, result);
        assert_eq!(fs::metadata(&marker).unwrap().modified().unwrap(), stamp);
        assert_eq!(fs::read(dir.path().join(RESULTS_FILE)).unwrap(), before);
        assert!(dir.path().join("roc").join("iada_s0.csv").exists());
    }
}
