use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorda::data::Day;
use anchorda::experiment::{
    evaluate_partners, grid_search, read_alpha_table, record_alpha_choice, run_journey, view_for_fraction, write_report,
    ExperimentConfig, Prepared, ALPHA_FILE, SELECTION_METRICS,
};
use anchorda::metrics::{KRule, Metric};
use anchorda::model::{fine_tune, load_checkpoint_for, save_checkpoint, train_base, ModelKind};
use anchorda::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Config copied next to a generated dataset so later commands can find it.
const CONFIG_COPY: &str = "config.toml";

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CELLS: u8 = 3;

/// Anchored domain adaptation experiments on synthetic campaign logs.
///
/// Exit codes: 0 success, 1 usage error, 2 data or config error,
/// 3 journey finished with failed cells.
#[derive(Parser)]
#[command(name = "anchorda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its head/validation/test split.
    Generate {
        /// Experiment config (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick alpha on the validation partners and record it in the dataset's alpha.json.
    GridSearch {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        model: KindArg,
        /// Metric to select for; all of auc, ndcg and ap when omitted.
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a base model on the head partners.
    TrainBase {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        model: KindArg,
        /// Alpha for the transfer term; defaults to the config's choice for --metric.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value = "auc")]
        metric: MetricArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune a checkpoint on a nested sample of the test partners' train day.
    FineTune {
        #[command(flatten)]
        data: DataArgs,
        /// Base checkpoint to start from.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the fine-tuned checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test partners' eval day.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fraction the checkpoint was tuned on; 0 scores through the target view.
        #[arg(long, default_value_t = 0.0)]
        fraction: f64,
        /// Fixed k for NDCG@k and precision@k; the config's rule when omitted.
        #[arg(long)]
        k: Option<usize>,
        /// Evaluate on the validation partners instead of the test partners.
        #[arg(long)]
        validation: bool,
    },
    /// Run every model and seed through the fraction schedule.
    Journey {
        #[command(flatten)]
        data: DataArgs,
        /// Results directory; reruns skip finished cells.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's k rule with a fixed k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Seed-averaged tables and cold-start gains over NT from journey results.
    Report {
        /// Results directory written by `journey`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Experiment config; defaults to the copy stored with the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Nt,
    Sda,
    Iada,
    Lada,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Nt => ModelKind::Nt,
            KindArg::Sda => ModelKind::Sda,
            KindArg::Iada => ModelKind::Iada,
            KindArg::Lada => ModelKind::Lada,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Auc,
    Ndcg,
    Ap,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Auc => Metric::Auc,
            MetricArg::Ndcg => Metric::Ndcg,
            MetricArg::Ap => Metric::Ap,
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
    Cells(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

impl DataArgs {
    fn config(&self) -> anchorda::Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path),
            None => {
                let copy = self.data.join(CONFIG_COPY);
                if copy.exists() {
                    ExperimentConfig::load(copy)
                } else {
                    Ok(ExperimentConfig::default())
                }
            }
        }
    }

    fn load(&self) -> anchorda::Result<(ExperimentConfig, Prepared)> {
        Ok((self.config()?, Prepared::load(&self.data)?))
    }
}

fn check_fraction(fraction: f64) -> CmdResult {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--fraction must lie in [0, 1], got {fraction}")))
    }
}

fn fixed_k(k: Option<usize>, default: KRule) -> std::result::Result<KRule, Failure> {
    match k {
        None => Ok(default),
        Some(0) => Err(Failure::Usage("--k must be positive".into())),
        Some(k) => Ok(KRule::fixed(k)),
    }
}

fn generate(config: Option<&Path>, out: &Path) -> CmdResult {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let prepared = Prepared::generate(&cfg)?;
    prepared.write(out)?;
    let path = out.join(CONFIG_COPY);
    std::fs::write(&path, cfg.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    let split = &prepared.split;
    println!(
        "wrote {} records for {} partners to {}",
        prepared.dataset.records.len(),
        prepared.dataset.profiles.len(),
        out.display()
    );
    println!(
        "head {} partners, validation {}, test {}; train-day positive rate {:.4}",
        split.head.len(),
        split.validation.len(),
        split.test.len(),
        prepared.dataset.positive_rate(Day::Train)
    );
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate { config, out } => generate(config.as_deref(), &out),
        Command::GridSearch {
            data,
            model,
            metric,
            seed,
        } => {
            let (cfg, prepared) = data.load()?;
            let kind = ModelKind::from(model);
            let metrics: Vec<Metric> = match metric {
                Some(m) => vec![m.into()],
                None => SELECTION_METRICS.to_vec(),
            };
            let outcome = grid_search(&prepared, kind, &metrics, &cfg.alpha_grid, cfg.train_for(kind), cfg.k, seed)?;
            for (alpha, values) in &outcome.scores {
                let cols: Vec<String> = metrics
                    .iter()
                    .map(|m| format!("{m}={}", values.get(*m).map_or("NA".into(), |v| format!("{v:.6}"))))
                    .collect();
                println!("alpha {alpha}: {}", cols.join(" "));
            }
            for (m, a) in &outcome.chosen {
                println!("chosen {kind} {m} alpha {a}");
            }
            record_alpha_choice(&data.data, kind, &outcome.chosen)?;
            Ok(())
        }
        Command::TrainBase {
            data,
            model,
            alpha,
            metric,
            seed,
            checkpoint,
        } => {
            let (cfg, prepared) = data.load()?;
            let kind = ModelKind::from(model);
            let chosen = read_alpha_table(&data.data)?;
            let alpha = alpha.unwrap_or_else(|| cfg.alpha_for(kind, metric.into(), chosen.as_ref()));
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Failure::Usage(format!("--alpha must lie in (0, 1], got {alpha}")));
            }
            let train = cfg.train_for(kind).with_alpha(alpha).with_seed(seed);
            let ckpt = train_base(kind, prepared.dataset.schema(), &prepared.head_data()?, &train)?;
            save_checkpoint(&ckpt, &checkpoint)?;
            println!("trained {kind} (alpha {alpha}, seed {seed}) -> {}", checkpoint.display());
            Ok(())
        }
        Command::FineTune {
            data,
            checkpoint,
            fraction,
            seed,
            out,
        } => {
            check_fraction(fraction)?;
            let prepared = Prepared::load(&data.data)?;
            let base = load_checkpoint_for(&checkpoint, &prepared.dataset.schema())?;
            let tune_data = prepared.fine_tune_data(fraction, seed)?;
            let train = base.config.clone().with_seed(seed);
            let tuned = fine_tune(&base, &tune_data, &train, fraction)?;
            save_checkpoint(&tuned, &out)?;
            println!(
                "fine-tuned on {} records (fraction {fraction}) -> {}",
                tune_data.len(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            data,
            checkpoint,
            fraction,
            k,
            validation,
        } => {
            check_fraction(fraction)?;
            let (cfg, prepared) = data.load()?;
            let k = fixed_k(k, cfg.k)?;
            let ckpt = load_checkpoint_for(&checkpoint, &prepared.dataset.schema())?;
            let partners = if validation { &prepared.split.validation } else { &prepared.split.test };
            let (report, _) = evaluate_partners(&ckpt, &prepared.dataset, partners, view_for_fraction(fraction), k)?;
            println!("setting,metric,value,n_partners_included");
            for metric in Metric::ALL {
                let fmt = |v: Option<f64>| v.map_or("NA".into(), |v| v.to_string());
                println!("macro,{metric},{},{}", fmt(report.macro_value(metric)), report.n_included(metric));
                println!("micro,{metric},{},1", fmt(report.micro_value(metric)));
            }
            Ok(())
        }
        Command::Journey { data, out, k } => {
            let (mut cfg, prepared) = data.load()?;
            cfg.k = fixed_k(k, cfg.k)?;
            let chosen = read_alpha_table(&data.data)?;
            if chosen.is_some() {
                println!("using alpha choices from {}", data.data.join(ALPHA_FILE).display());
            }
            let result = run_journey(&prepared, &cfg, chosen.as_ref(), &out)?;
            let failures = result.failures();
            println!(
                "{} cells, {} failed, {} rows -> {}",
                result.cells.len(),
                failures.len(),
                result.rows.len(),
                out.display()
            );
            for (key, msg) in &failures {
                eprintln!("cell {} failed: {msg}", key.stem());
            }
            if failures.is_empty() {
                Ok(())
            } else {
                Err(Failure::Cells(failures.len()))
            }
        }
        Command::Report { out } => {
            let report = write_report(&out)?;
            println!("setting,metric,model,value,gain_percent");
            for g in &report.gains {
                let fmt = |v: Option<f64>| v.map_or("NA".into(), |v| format!("{v:.6}"));
                let gain = g.gain_percent.map_or("NA".into(), |v| format!("{v:.3}"));
                println!("{},{},{},{},{gain}", g.setting, g.metric, g.model, fmt(g.value));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Cells(n)) => {
            eprintln!("error: {n} journey cell(s) failed; see failures.csv");
            ExitCode::from(EXIT_CELLS)
        }
    }
}
