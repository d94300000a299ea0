use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::bundle::*;
use super::checkpoint::{Checkpoint, Phase};
use super::objective::{base_loss, classification_loss, latent_anchor, loss_lada_with_anchor, BundleGrads, PairedBatch};
use super::schema::{FeatureSchema, LabeledData, View};
use crate::error::{Error, Result};
use crate::nn::{bce_loss, optimizer_step, substream, AdamState, DenseNet, Mode};

/// Shuffled mini-batch index lists, one epoch after another.
fn run_epochs<R: Rng>(
    n: usize,
    batch_size: usize,
    epochs: usize,
    shuffle_rng: &mut R,
    mut step: impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(shuffle_rng);
        for chunk in order.chunks(batch_size) {
            step(chunk)?;
        }
    }
    Ok(())
}

fn apply(bundle: &mut ModelBundle, grads: &BundleGrads, g_state: &mut AdamState, f_state: &mut AdamState) -> Result<()> {
    optimizer_step(&mut bundle.g, &grads.g, g_state)?;
    optimizer_step(&mut bundle.f, &grads.f, f_state)
}

fn check_data(schema: &FeatureSchema, data: &LabeledData) -> Result<()> {
    let expected = schema.fingerprint();
    if data.fingerprint() != expected {
        return Err(Error::SchemaMismatch {
            expected,
            found: data.fingerprint(),
        });
    }
    Ok(())
}

fn check_finite(net: &DenseNet, name: &str) -> Result<()> {
    let finite = net
        .layers()
        .iter()
        .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
    if finite {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{name} has non-finite parameters")))
    }
}

fn check_bundle(bundle: &ModelBundle) -> Result<()> {
    check_finite(&bundle.g, "g")?;
    check_finite(&bundle.f, "f")
}

/// LADA step 1: fit the `h+e` net as a plain classifier on head source
/// features. The net is left frozen by every later step.
pub fn train_lada_step1(he: &mut DenseNet, data: &LabeledData, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("LADA step 1 needs head-partner records".into()));
    }
    if he.input_dim() != data.source().ncols() || he.output_dim() != 1 {
        return Err(Error::Shape("h+e net does not match the data".into()));
    }
    let mut state = AdamState::new(he, config.adam())?;
    let mut shuffle = substream(config.seed, STREAM_HE_SHUFFLE);
    let mut dropout = substream(config.seed, STREAM_HE_DROPOUT);
    let source = data.source();
    let labels = data.labels();
    run_epochs(data.len(), config.batch_size, config.epochs, &mut shuffle, |idx| {
        let x = source.select(Axis(0), idx);
        let y = labels.select(Axis(0), idx);
        let (probs, cache) = he.forward(x.view(), Mode::Train, &mut dropout)?;
        let (_, d_probs) = bce_loss(probs.column(0), y.view())?;
        let (grads, _) = he.backward(&cache, d_probs.insert_axis(Axis(1)).view())?;
        optimizer_step(he, &grads, &mut state)
    })?;
    check_finite(he, "h+e")
}

/// Base training on head-partner data with the kind's joint objective.
///
/// Each record contributes its (target, source) view pair. LADA first runs
/// step 1 on its `h+e` net, then trains `g` and `f` against the frozen
/// latent anchor. Returns a checkpoint tagged [`Phase::Base`] that carries
/// the optimizer state for fine-tuning.
pub fn train_base(kind: ModelKind, schema: FeatureSchema, data: &LabeledData, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    check_data(&schema, data)?;
    if data.is_empty() {
        return Err(Error::EmptyData("base training needs head-partner records".into()));
    }
    let mut bundle = build_model(kind, schema, config, config.seed)?;
    if let Some(he) = bundle.he.as_mut() {
        train_lada_step1(he, data, config)?;
    }
    let mut g_state = AdamState::new(&bundle.g, config.adam())?;
    let mut f_state = AdamState::new(&bundle.f, config.adam())?;

    let source = data.source();
    let target = schema.target_view(source)?;
    let labels = data.labels();
    let anchors = match kind {
        ModelKind::Lada => Some(latent_anchor(&bundle, source)?),
        _ => None,
    };
    let mut shuffle = substream(config.seed, STREAM_SHUFFLE);
    let mut dropout = substream(config.seed, STREAM_DROPOUT);
    run_epochs(data.len(), config.batch_size, config.epochs, &mut shuffle, |idx| {
        let batch = PairedBatch::from_parts_unchecked(
            target.select(Axis(0), idx),
            source.select(Axis(0), idx),
            labels.select(Axis(0), idx),
        );
        let (_, grads) = match &anchors {
            Some(anchor) => {
                let anchor = anchor.select(Axis(0), idx);
                loss_lada_with_anchor(&bundle, &batch, anchor.view(), &mut dropout)?
            }
            None => base_loss(&bundle, &batch, &mut dropout)?,
        };
        apply(&mut bundle, &grads, &mut g_state, &mut f_state)
    })?;
    check_bundle(&bundle)?;

    Ok(Checkpoint {
        bundle,
        g_state,
        f_state,
        phase: Phase::Base,
        config: config.clone(),
    })
}

/// Incremental update on tail-partner source-domain data.
///
/// Every kind now minimises only `BCE(f(g(x_S)), y)`; the transfer term and
/// LADA's `h+e` net play no part. Optimizer moments and step counters carry
/// on from `checkpoint`. An empty `data` set (cold start) returns the
/// parameters untouched.
pub fn fine_tune(checkpoint: &Checkpoint, data: &LabeledData, config: &TrainConfig, fraction: f64) -> Result<Checkpoint> {
    check_data(&checkpoint.bundle.schema, data)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut next = checkpoint.clone();
    next.phase = Phase::FineTuned { fraction };
    if data.is_empty() {
        return Ok(next);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let source = data.source();
    let labels = data.labels();
    let mut shuffle = substream(config.seed, STREAM_FT_SHUFFLE);
    let mut dropout = substream(config.seed, STREAM_FT_DROPOUT);
    let Checkpoint {
        bundle,
        g_state,
        f_state,
        ..
    } = &mut next;
    run_epochs(data.len(), config.batch_size, config.fine_tune_epochs, &mut shuffle, |idx| {
        let x = source.select(Axis(0), idx);
        let y = labels.select(Axis(0), idx);
        let (_, grads) = classification_loss(bundle, x.view(), y.view(), &mut dropout)?;
        apply(bundle, &grads, g_state, f_state)
    })?;
    check_bundle(bundle)?;
    Ok(next)
}

/// Eval-mode engagement probabilities `f(g(x))` for source-view rows,
/// presented in `view`.
pub fn predict(checkpoint: &Checkpoint, source: ArrayView2<f64>, view: View) -> Result<Array1<f64>> {
    let bundle = &checkpoint.bundle;
    bundle.schema.check_width(source.ncols())?;
    let rows: Array2<f64> = match view {
        View::Source => source.to_owned(),
        View::Target => bundle.schema.target_view(source)?,
    };
    let mut scores = Array1::zeros(rows.nrows());
    const CHUNK: usize = 4096;
    for (start, chunk) in rows.axis_chunks_iter(Axis(0), CHUNK).enumerate() {
        let rep = bundle.g.predict(chunk)?;
        let probs = bundle.f.predict(rep.view())?;
        let offset = start * CHUNK;
        for (i, p) in probs.column(0).iter().enumerate() {
            scores[offset + i] = *p;
        }
    }
    Ok(scores)
}

/// Mean eval-mode cross-entropy of the model on `data` in `view`.
pub fn mean_log_loss(checkpoint: &Checkpoint, data: &LabeledData, view: View) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("no records to score".into()));
    }
    let scores = predict(checkpoint, data.source(), view)?;
    Ok(bce_loss(scores.view(), data.labels().view())?.0)
}
