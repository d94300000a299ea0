//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anchorda::data::{generate, GeneratorConfig};
use anchorda::experiment::{run_journey, ExperimentConfig, Prepared, Setting};
use anchorda::metrics::{auc_roc, average_precision, ndcg_at_k, precision_at_k, roc_points, roc_trapezoid_area};
use anchorda::metrics::{Metric, ScoredSet};
use anchorda::model::{
    base_loss, build_model, fine_tune, load_checkpoint, save_checkpoint, train_base, Checkpoint, FeatureSchema,
    LabeledData, ModelBundle, ModelKind, PairedBatch, TrainConfig,
};
use anchorda::nn::{substream, DenseNet, NetGrads};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn params_mut(net: &mut DenseNet) -> Vec<&mut f64> {
    let mut out = Vec::new();
    for layer in net.layers_mut() {
        out.extend(layer.weights.iter_mut());
        out.extend(layer.bias.iter_mut());
    }
    out
}

fn n_params(net: &DenseNet) -> usize {
    net.layers().iter().map(|l| l.weights.len() + l.bias.len()).sum()
}

fn loss_at(bundle: &ModelBundle, batch: &PairedBatch, seed: u64) -> f64 {
    base_loss(bundle, batch, &mut substream(seed, 99)).unwrap().0
}

/// Largest relative error between analytic and central-difference gradients of
/// one net of the bundle. `which` picks g (0) or f (1).
fn worst_error(bundle: &ModelBundle, batch: &PairedBatch, seed: u64, analytic: &NetGrads, which: usize) -> f64 {
    let h = 1e-6;
    let flat = analytic.flatten();
    let net = |b: &ModelBundle| if which == 0 { b.g.clone() } else { b.f.clone() };
    let count = n_params(&net(bundle));
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let shifted = |delta: f64| {
            let mut b = bundle.clone();
            let target = if which == 0 { &mut b.g } else { &mut b.f };
            *params_mut(target).remove(i) += delta;
            loss_at(&b, batch, seed)
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let a = flat[i];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

fn random_batch<R: Rng>(schema: &FeatureSchema, n: usize, rng: &mut R) -> PairedBatch {
    let total = schema.total_dim();
    let mut x = Array2::zeros((n, total));
    for v in x.iter_mut() {
        if rng.random::<f64>() < 0.8 {
            *v = rng.random_range(0.0..2.0);
        }
    }
    let y = Array1::from_iter((0..n).map(|i| if i == 0 { 1.0 } else { rng.random_range(0..2) as f64 }));
    PairedBatch::from_source(schema, x, y).unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(2024, 1);
    let mut instances = 0;
    let mut worst: f64 = 0.0;
    let mut frozen_ok = true;
    for i in 0..24 {
        let kind = ModelKind::ALL[i % 4];
        let total = rng.random_range(3..=8);
        let category_dim = rng.random_range(1..total);
        let schema = FeatureSchema::new(category_dim, total - category_dim).unwrap();
        let config = TrainConfig {
            alpha: rng.random_range(0.1..0.95),
            hidden_width: rng.random_range(2..=5),
            latent_width: rng.random_range(2..=4),
            dropout: if i % 8 < 4 { 0.0 } else { 0.5 },
            ..TrainConfig::default()
        };
        let mut bundle = build_model(kind, schema, &config, i as u64).unwrap();
        // fresh init has zero biases, which puts all-zero input rows exactly
        // on the rectifier kink where finite differences are meaningless
        for net in [&mut bundle.g, &mut bundle.f] {
            for p in params_mut(net) {
                *p = rng.random_range(-1.0..1.0);
            }
        }
        let batch = random_batch(&schema, rng.random_range(1..=4), &mut rng);
        let seed = 1000 + i as u64;
        let (_, grads) = base_loss(&bundle, &batch, &mut substream(seed, 99)).unwrap();
        worst = worst.max(worst_error(&bundle, &batch, seed, &grads.g, 0));
        worst = worst.max(worst_error(&bundle, &batch, seed, &grads.f, 1));
        if kind == ModelKind::Lada {
            frozen_ok &= grads.he.as_ref().is_some_and(|g| g.is_all_zero());
        }
        instances += 1;
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-4 && frozen_ok && elapsed < Duration::from_secs(10),
        format!(
            "{instances} instances, worst relative error {worst:.2e}, frozen h+e gradient zero: {frozen_ok}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

struct Rec {
    id: u64,
    score: f64,
    label: bool,
}

fn oracle_order(recs: &mut [Rec]) {
    recs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

fn oracle_auc(recs: &[Rec]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for p in recs.iter().filter(|r| r.label) {
        for n in recs.iter().filter(|r| !r.label) {
            pairs += 1;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn oracle_ap(ranked: &[Rec]) -> Option<f64> {
    let ranks: Vec<usize> = (0..ranked.len()).filter(|&i| ranked[i].label).collect();
    if ranks.is_empty() {
        return None;
    }
    let precisions = ranks.iter().map(|&r| ranked[..=r].iter().filter(|x| x.label).count() as f64 / (r + 1) as f64);
    Some(precisions.sum::<f64>() / ranks.len() as f64)
}

fn oracle_ndcg(ranked: &[Rec], k: usize) -> f64 {
    let dcg = |labels: &[bool]| -> f64 {
        labels
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &l)| if l { 1.0 / ((i + 2) as f64).log2() } else { 0.0 })
            .sum()
    };
    let labels: Vec<bool> = ranked.iter().map(|r| r.label).collect();
    let mut ideal = labels.clone();
    ideal.sort_by(|a, b| b.cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        0.0
    } else {
        dcg(&labels) / best
    }
}

fn oracle_precision(ranked: &[Rec], k: usize) -> f64 {
    let cut = k.min(ranked.len());
    ranked[..cut].iter().filter(|r| r.label).count() as f64 / cut as f64
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(77, 2);
    let mut worst_exact: f64 = 0.0;
    let mut worst_area: f64 = 0.0;
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        let mut ids: Vec<u64> = (0..3 * n as u64).collect();
        ids.shuffle(&mut rng);
        let tied = case % 2 == 0;
        let rate = rng.random_range(0.0..1.0);
        let mut recs: Vec<Rec> = (0..n)
            .map(|i| Rec {
                id: ids[i],
                score: if tied { rng.random_range(0..6) as f64 / 5.0 } else { rng.random_range(-3.0..3.0) },
                label: rng.random::<f64>() < rate,
            })
            .collect();
        let set = ScoredSet::from_parts(recs.iter().map(|r| (r.id, 0, r.score, r.label))).unwrap();
        let k = rng.random_range(1..=n + 5);
        let auc = auc_roc(&set);
        let auc_ref = oracle_auc(&recs);
        oracle_order(&mut recs);
        let ap = average_precision(&set);
        let ap_ref = oracle_ap(&recs);
        let pairs = [
            ("auc", auc, auc_ref),
            ("ap", ap, ap_ref),
            ("ndcg", Some(ndcg_at_k(&set, k).unwrap()), Some(oracle_ndcg(&recs, k))),
            ("precision", Some(precision_at_k(&set, k).unwrap()), Some(oracle_precision(&recs, k))),
        ];
        for (name, got, want) in pairs {
            match (got, want) {
                (Some(g), Some(w)) => {
                    worst_exact = worst_exact.max((g - w).abs());
                    if (g - w).abs() > 1e-12 {
                        mismatches.push(format!("case {case} {name}: {g} vs {w}"));
                    }
                }
                (None, None) => {}
                _ => mismatches.push(format!("case {case} {name}: defined {:?} vs {:?}", got, want)),
            }
        }
        if let (Some(points), Some(a)) = (roc_points(&set), auc) {
            let diff = (roc_trapezoid_area(&points) - a).abs();
            worst_area = worst_area.max(diff);
            if diff > 1e-9 {
                mismatches.push(format!("case {case} roc area off by {diff:e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "1000 sets, max metric deviation {worst_exact:.1e}, max ROC area deviation {worst_area:.1e}, {:.2}s{}",
            elapsed.as_secs_f64(),
            mismatches.first().map(|m| format!(", first mismatch: {m}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn small_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_partners: 60,
        n_users: 1_000,
        train_day_impressions: 6_000,
        eval_day_impressions: 6_000,
        seed,
        ..GeneratorConfig::default()
    }
}

fn head_records(n: usize) -> LabeledData {
    let cfg = ExperimentConfig {
        generator: small_generator(3),
        ..ExperimentConfig::default()
    };
    let prep = Prepared::generate(&cfg).unwrap();
    let ids = prep.dataset.record_ids(anchorda::data::Day::Train, &prep.split.head);
    prep.dataset.labeled(&ids[..n]).unwrap()
}

fn bits(ckpt: &Checkpoint) -> Vec<u64> {
    let mut out = Vec::new();
    for net in [&ckpt.bundle.g, &ckpt.bundle.f] {
        for l in net.layers() {
            out.extend(l.weights.iter().chain(l.bias.iter()).map(|v| v.to_bits()));
        }
    }
    for state in [&ckpt.g_state, &ckpt.f_state] {
        out.push(state.step);
        for m in [&state.first_moment, &state.second_moment] {
            out.extend(m.flatten().iter().map(|v| v.to_bits()));
        }
    }
    out
}

fn boundary_equivalence() -> Outcome {
    let data = head_records(1000);
    let schema = FeatureSchema::new(10, 20).unwrap();
    let mut compared = 0;
    for epochs in 1..=3 {
        let config = TrainConfig {
            alpha: 1.0,
            epochs,
            latent_width: schema.total_dim(),
            seed: 11,
            ..TrainConfig::default()
        };
        let nt = bits(&train_base(ModelKind::Nt, schema, &data, &config).unwrap());
        for kind in [ModelKind::Iada, ModelKind::Lada] {
            let other = bits(&train_base(kind, schema, &data, &config).unwrap());
            if other != nt {
                return Err(format!("{kind} diverges from NT after epoch {epochs}"));
            }
            compared += other.len();
        }
    }
    Ok(format!(
        "IADA and LADA equal NT bit for bit after each of 3 epochs on 1000 records ({compared} values compared)"
    ))
}

// ---------------------------------------------------------------- 4

fn ckpt_bytes(c: &Checkpoint) -> Vec<u8> {
    c.to_bytes().unwrap()
}

fn checkpoint_continuity() -> Outcome {
    let cfg = ExperimentConfig {
        generator: small_generator(4),
        ..ExperimentConfig::default()
    };
    let prep = Prepared::generate(&cfg).unwrap();
    let head = prep.head_data().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let train = TrainConfig {
        hidden_width: 16,
        latent_width: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    for kind in ModelKind::ALL {
        let base = train_base(kind, prep.dataset.schema(), &head, &train.with_alpha(0.7)).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        save_checkpoint(&base, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let data = prep.fine_tune_data(0.6, 5).unwrap();
        let direct = fine_tune(&base, &data, &train, 0.6).unwrap();
        let resumed = fine_tune(&loaded, &data, &train, 0.6).unwrap();
        if ckpt_bytes(&direct) != ckpt_bytes(&resumed) {
            return Err(format!("{kind}: fine-tune after save/load differs"));
        }
        let steps = data.len().div_ceil(train.batch_size) * train.fine_tune_epochs;
        if direct.g_state.step != base.g_state.step + steps as u64 {
            return Err(format!("{kind}: optimizer step counter did not carry on"));
        }
        let cold = fine_tune(&loaded, &prep.fine_tune_data(0.0, 5).unwrap(), &train, 0.0).unwrap();
        if bits(&cold) != bits(&base) || cold.bundle != base.bundle {
            return Err(format!("{kind}: fraction-0 fine-tune changed the model"));
        }
    }
    Ok("all four kinds: save/load/fine-tune equals direct fine-tune, fraction 0 is a no-op".into())
}

// ---------------------------------------------------------------- 5

fn generator_shape() -> Outcome {
    let mut worst_prefix = 0;
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for seed in 0..10 {
        let cfg = GeneratorConfig {
            seed,
            ..GeneratorConfig::default()
        };
        let ds = generate(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        if ds.profiles.len() != 404 {
            return Err(format!("seed {seed}: {} partners", ds.profiles.len()));
        }
        let mut counts = vec![0usize; ds.profiles.len()];
        for r in &ds.records {
            counts[r.partner as usize] += 1;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let total: usize = counts.iter().sum();
        let mut acc = 0;
        let prefix = counts
            .iter()
            .position(|&c| {
                acc += c;
                2 * acc >= total
            })
            .unwrap()
            + 1;
        worst_prefix = worst_prefix.max(prefix);
        for day in [anchorda::data::Day::Train, anchorda::data::Day::Eval] {
            let rate = ds.positive_rate(day);
            lo = lo.min(rate);
            hi = hi.max(rate);
        }
    }
    check(
        worst_prefix <= 51 && lo >= 0.04 && hi <= 0.06,
        format!("10 seeds: largest 50%-volume prefix {worst_prefix} partners, positive rate in [{lo:.4}, {hi:.4}]"),
    )
}

// ---------------------------------------------------------------- 6 and 7

struct FullRun {
    result: anchorda::experiment::JourneyResult,
    seeds: Vec<u64>,
    elapsed: Duration,
}

fn full_journey() -> Result<FullRun, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let prep = Prepared::generate(&cfg).map_err(|e| e.to_string())?;
    let result = run_journey(&prep, &cfg, None, dir.path()).map_err(|e| e.to_string())?;
    if let Some((key, msg)) = result.failures().first() {
        return Err(format!("cell {} failed: {msg}", key.stem()));
    }
    Ok(FullRun {
        result,
        seeds: cfg.seeds,
        elapsed: start.elapsed(),
    })
}

fn cold_start_wins(run: &FullRun) -> Outcome {
    let r = &run.result;
    let mean = |kind, metric| r.seed_mean(kind, 0.0, Setting::Macro, metric).unwrap_or(f64::NAN);
    let mut lines = Vec::new();
    let mut ok = true;
    for metric in [Metric::Auc, Metric::Ap] {
        let nt = mean(ModelKind::Nt, metric);
        let iada = mean(ModelKind::Iada, metric);
        let lada = mean(ModelKind::Lada, metric);
        ok &= lada > nt && iada > nt;
        lines.push(format!("{metric} NT {nt:.4} IADA {iada:.4} LADA {lada:.4}"));
    }
    let wins = run
        .seeds
        .iter()
        .filter(|&&s| {
            let v = |k| r.value(k, s, 0.0, Setting::Macro, Metric::Ap);
            matches!((v(ModelKind::Lada), v(ModelKind::Nt)), (Some(l), Some(n)) if l >= n)
        })
        .count();
    ok &= wins >= 8;
    ok &= run.elapsed < Duration::from_secs(15 * 60);
    check(
        ok,
        format!(
            "cold-start macro {}; LADA >= NT on AP in {wins}/{} seeds; journey {:.0}s",
            lines.join(", "),
            run.seeds.len(),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn journey_improves(run: &FullRun) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in ModelKind::ALL {
        let at = |f| run.result.seed_mean(kind, f, Setting::Macro, Metric::Auc).unwrap_or(f64::NAN);
        let (cold, full) = (at(0.0), at(1.0));
        ok &= full >= cold;
        parts.push(format!("{kind} {cold:.4} -> {full:.4}"));
    }
    check(ok, format!("macro AUC at fraction 0 -> 1: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 8

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let cfg = |threads| ExperimentConfig {
        generator: small_generator(8),
        train: TrainConfig {
            hidden_width: 16,
            latent_width: 8,
            epochs: 2,
            ..TrainConfig::default()
        },
        fractions: vec![0.0, 0.5, 1.0],
        seeds: vec![0, 1, 2],
        threads,
        ..ExperimentConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, threads) in [(&a, 1), (&b, 3)] {
        let c = cfg(threads);
        let prep = Prepared::generate(&c).map_err(|e| e.to_string())?;
        run_journey(&prep, &c, None, dir.path()).map_err(|e| e.to_string())?;
    }
    let files = files_under(a.path());
    if files != files_under(b.path()) {
        return Err("the two runs wrote different file sets".into());
    }
    let names: BTreeSet<String> = files.iter().map(|p| p.display().to_string()).collect();
    if !names.contains("results.csv") {
        return Err("no results table written".into());
    }
    for f in &files {
        if fs::read(a.path().join(f)).unwrap() != fs::read(b.path().join(f)).unwrap() {
            return Err(format!("{} differs between runs", f.display()));
        }
    }
    let rows = fs::read_to_string(a.path().join("results.csv")).unwrap().lines().count() - 1;
    Ok(format!("{} files byte-identical across two runs (1 and 3 threads), {rows} result rows", files.len()))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(outcome) => outcome,
        Err(payload) => Err(payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .map_or("panicked".into(), |m| format!("panicked: {m}"))),
    }
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS  {n}. {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {n}. {name}: {detail}");
            }
        }
    };
    report(1, "gradient correctness", guarded(gradient_correctness));
    report(2, "metric oracle equivalence", guarded(metric_oracles));
    report(3, "boundary equivalence", guarded(boundary_equivalence));
    report(4, "checkpoint/optimizer continuity", guarded(checkpoint_continuity));
    report(5, "generator shape", guarded(generator_shape));
    match panic::catch_unwind(full_journey).unwrap_or_else(|_| Err("journey panicked".into())) {
        Ok(run) => {
            report(6, "cold-start transfer wins", guarded(|| cold_start_wins(&run)));
            report(7, "journey improvement", guarded(|| journey_improves(&run)));
        }
        Err(msg) => {
            report(6, "cold-start transfer wins", Err(msg.clone()));
            report(7, "journey improvement", Err(msg));
        }
    }
    report(8, "end-to-end determinism", guarded(determinism));
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
