//! The experimental protocol: alpha selection on validation partners, the
//! cold-start-to-full-data journey on test partners, and reporting.

mod config;
mod journey;
mod report;
mod run;

pub use config::{reference_alphas, selection_metric, AlphaTable, ExperimentConfig, SELECTION_METRICS};
pub use journey::{
    parse_results, run_journey, CellKey, CellStatus, JourneyResult, ResultRow, Setting, ALPHAS_FILE, FAILURES_FILE,
    RESULTS_FILE, RESULTS_HEADER,
};
pub use report::{gain_percent, summarize, write_report, GainRow, Report, SummaryRow, GAINS_FILE, SUMMARY_FILE};
pub use run::{
    evaluate_partners, grid_search, read_alpha_table, record_alpha_choice, score_records, view_for_fraction,
    GridOutcome, Prepared, ALPHA_FILE,
};
