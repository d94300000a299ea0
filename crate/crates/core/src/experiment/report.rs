use std::fs;
use std::path::Path;

use super::journey::{parse_results, ResultRow, Setting, RESULTS_FILE};
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::model::ModelKind;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const GAINS_FILE: &str = "gains.csv";

/// Seed-averaged value of one (model, fraction, setting, metric) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub fraction: f64,
    pub setting: Setting,
    pub metric: Metric,
    pub k: Option<usize>,
    pub mean: Option<f64>,
    pub n_seeds: usize,
}

/// Cold-start value of a model relative to NT.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub setting: Setting,
    pub metric: Metric,
    pub model: ModelKind,
    pub value: Option<f64>,
    pub nt_value: Option<f64>,
    pub gain_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub gains: Vec<GainRow>,
}

/// `100 * (model - nt) / nt`, undefined when `nt` is zero.
pub fn gain_percent(model: f64, nt: f64) -> Option<f64> {
    if nt == 0.0 {
        None
    } else {
        Some(100.0 * (model - nt) / nt)
    }
}

fn na(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

/// Average rows over seeds and compute cold-start gains against NT.
pub fn summarize(rows: &[ResultRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Experiment("the results table is empty; nothing to report".into()));
    }
    let mut summary: Vec<SummaryRow> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        let pos = summary
            .iter()
            .position(|s| s.model == r.model && s.fraction == r.fraction && s.setting == r.setting && s.metric == r.metric);
        let i = match pos {
            Some(i) => i,
            None => {
                summary.push(SummaryRow {
                    model: r.model,
                    fraction: r.fraction,
                    setting: r.setting,
                    metric: r.metric,
                    k: r.k,
                    mean: None,
                    n_seeds: 0,
                });
                sums.push((0.0, 0));
                summary.len() - 1
            }
        };
        if let Some(v) = r.value {
            sums[i].0 += v;
            sums[i].1 += 1;
        }
    }
    for (s, (sum, n)) in summary.iter_mut().zip(&sums) {
        s.n_seeds = *n;
        s.mean = (*n > 0).then(|| sum / *n as f64);
    }
    summary.sort_by(|a, b| {
        (a.model, a.setting, a.metric)
            .cmp(&(b.model, b.setting, b.metric))
            .then(a.fraction.partial_cmp(&b.fraction).expect("finite fractions"))
    });

    let mut gains = Vec::new();
    let cold: Vec<&SummaryRow> = summary.iter().filter(|s| s.fraction == 0.0).collect();
    let mut keys: Vec<(Setting, Metric)> = cold.iter().map(|s| (s.setting, s.metric)).collect();
    keys.sort();
    keys.dedup();
    for (setting, metric) in keys {
        let nt = cold
            .iter()
            .find(|s| s.model == ModelKind::Nt && s.setting == setting && s.metric == metric)
            .and_then(|s| s.mean);
        for s in cold.iter().filter(|s| s.setting == setting && s.metric == metric) {
            gains.push(GainRow {
                setting,
                metric,
                model: s.model,
                value: s.mean,
                nt_value: nt,
                gain_percent: match (s.mean, nt) {
                    (Some(v), Some(n)) => gain_percent(v, n),
                    _ => None,
                },
            });
        }
    }
    Ok(Report { summary, gains })
}

/// Read `results.csv` from `dir`, write the summary and gain tables next to
/// it and return them.
pub fn write_report(dir: impl AsRef<Path>) -> Result<Report> {
    let dir = dir.as_ref();
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Err(Error::Experiment(format!(
            "no {RESULTS_FILE} in {}; nothing to report",
            dir.display()
        )));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report = summarize(&parse_results(&text, &path)?)?;

    let mut out = String::from("model,fraction,setting,metric,k,mean,n_seeds\n");
    for s in &report.summary {
        let k = s.k.map(|k| k.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{k},{},{}\n",
            s.model,
            s.fraction,
            s.setting,
            s.metric,
            na(s.mean),
            s.n_seeds
        ));
    }
    let p = dir.join(SUMMARY_FILE);
    fs::write(&p, out).map_err(|e| Error::io(&p, e))?;

    let mut out = String::from("setting,metric,model,value,nt_value,gain_percent\n");
    for g in &report.gains {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.setting,
            g.metric,
            g.model,
            na(g.value),
            na(g.nt_value),
            na(g.gain_percent)
        ));
    }
    let p = dir.join(GAINS_FILE);
    fs::write(&p, out).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
