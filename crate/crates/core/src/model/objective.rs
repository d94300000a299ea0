//! Composite training objectives of the four model kinds.
//!
//! Every objective returns the scalar loss of one mini-batch together with
//! exact gradients for `g` and `f`. Dropout masks are drawn from the `rng`
//! passed in, in a fixed order (`g` then `f`, target view before source
//! view), so replaying with an identically seeded stream reproduces the loss
//! bit for bit.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::bundle::{ModelBundle, ModelKind};
use super::schema::FeatureSchema;
use crate::error::{Error, Result};
use crate::nn::{bce_loss, mse_loss, DenseNet, ForwardCache, Mode, NetGrads};

/// A mini-batch presented in both domains: `target` is `source` with the
/// campaign slots zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    target: Array2<f64>,
    source: Array2<f64>,
    labels: Array1<f64>,
}

impl PairedBatch {
    pub fn new(schema: &FeatureSchema, target: Array2<f64>, source: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        schema.check_width(source.ncols())?;
        if target.dim() != source.dim() || labels.len() != source.nrows() {
            return Err(Error::Shape(format!(
                "unpaired views: target {:?}, source {:?}, {} labels",
                target.dim(),
                source.dim(),
                labels.len()
            )));
        }
        if source.nrows() == 0 {
            return Err(Error::EmptyData("batch has no rows".into()));
        }
        let cats = schema.category_range();
        let categories_agree = target.slice(s![.., cats.clone()]) == source.slice(s![.., cats]);
        let campaign_zero = target
            .slice(s![.., schema.campaign_range()])
            .iter()
            .all(|&v| v == 0.0);
        if !categories_agree || !campaign_zero {
            return Err(Error::Shape(
                "unpaired views: target rows must equal source rows with campaign slots zeroed".into(),
            ));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        Ok(Self { target, source, labels })
    }

    /// Pair source rows with their derived target view.
    pub fn from_source(schema: &FeatureSchema, source: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        let target = schema.target_view(source.view())?;
        Self::new(schema, target, source, labels)
    }

    pub(crate) fn from_parts_unchecked(target: Array2<f64>, source: Array2<f64>, labels: Array1<f64>) -> Self {
        Self { target, source, labels }
    }

    pub fn target(&self) -> ArrayView2<'_, f64> {
        self.target.view()
    }

    pub fn source(&self) -> ArrayView2<'_, f64> {
        self.source.view()
    }

    pub fn labels(&self) -> ArrayView1<'_, f64> {
        self.labels.view()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradients of one objective. `he` is present (and all zero) for LADA,
/// whose `h+e` net is frozen after step 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrads {
    pub g: NetGrads,
    pub f: NetGrads,
    pub he: Option<NetGrads>,
}

/// Result of one `f(g(x))` classification pass with gradients pushed back
/// to `g`'s output.
struct ClassifierPass {
    bce: f64,
    g_out: Array2<f64>,
    g_cache: ForwardCache,
    f_grads: NetGrads,
    d_g_out: Array2<f64>,
}

fn classifier_pass<R: Rng + ?Sized>(
    g: &DenseNet,
    f: &DenseNet,
    x: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    weight: f64,
    rng: &mut R,
) -> Result<ClassifierPass> {
    let (g_out, g_cache) = g.forward(x, Mode::Train, rng)?;
    let (probs, f_cache) = f.forward(g_out.view(), Mode::Train, rng)?;
    let (bce, d_probs) = bce_loss(probs.column(0), labels)?;
    let mut upstream = d_probs.insert_axis(Axis(1));
    if weight != 1.0 {
        upstream *= weight;
    }
    let (f_grads, d_g_out) = f.backward(&f_cache, upstream.view())?;
    Ok(ClassifierPass {
        bce,
        g_out,
        g_cache,
        f_grads,
        d_g_out,
    })
}

fn expect_kind(bundle: &ModelBundle, kind: ModelKind) -> Result<()> {
    if bundle.kind == kind {
        Ok(())
    } else {
        Err(Error::ModelMismatch(format!(
            "{kind} objective called on a {} model",
            bundle.kind
        )))
    }
}

/// Plain binary cross-entropy of `f(g(x))`. This is the fine-tuning
/// objective of every kind and the base objective of NT.
pub fn classification_loss<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    x: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    rng: &mut R,
) -> Result<(f64, BundleGrads)> {
    let pass = classifier_pass(&bundle.g, &bundle.f, x, labels, 1.0, rng)?;
    let (g_grads, _) = bundle.g.backward(&pass.g_cache, pass.d_g_out.view())?;
    Ok((
        pass.bce,
        BundleGrads {
            g: g_grads,
            f: pass.f_grads,
            he: zero_he(bundle),
        },
    ))
}

fn zero_he(bundle: &ModelBundle) -> Option<NetGrads> {
    bundle.he.as_ref().map(NetGrads::zeros_like)
}

/// NT: `BCE(f(g(x)), y)`. Base training feeds target views, fine-tuning source views.
pub fn loss_nt<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    x: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    rng: &mut R,
) -> Result<(f64, BundleGrads)> {
    expect_kind(bundle, ModelKind::Nt)?;
    classification_loss(bundle, x, labels, rng)
}

/// `alpha * BCE(f(g(x_T)), y) + (1 - alpha) * MSE(g(x_T), anchor)`.
/// The anchor is a constant target: nothing flows back into whatever produced it.
fn anchored_loss<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    target: ArrayView2<f64>,
    anchor: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    rng: &mut R,
) -> Result<(f64, BundleGrads)> {
    let alpha = bundle.alpha;
    let mut pass = classifier_pass(&bundle.g, &bundle.f, target, labels, alpha, rng)?;
    let mut loss = alpha * pass.bce;
    if alpha < 1.0 {
        let (mse, d_mse) = mse_loss(pass.g_out.view(), anchor)?;
        loss += (1.0 - alpha) * mse;
        pass.d_g_out.scaled_add(1.0 - alpha, &d_mse);
    }
    let (g_grads, _) = bundle.g.backward(&pass.g_cache, pass.d_g_out.view())?;
    Ok((
        loss,
        BundleGrads {
            g: g_grads,
            f: pass.f_grads,
            he: zero_he(bundle),
        },
    ))
}

/// IADA: `alpha * BCE(f(g(x_T)), y) + (1 - alpha) * MSE(g(x_T), x_S)`.
pub fn loss_iada<R: Rng + ?Sized>(bundle: &ModelBundle, batch: &PairedBatch, rng: &mut R) -> Result<(f64, BundleGrads)> {
    expect_kind(bundle, ModelKind::Iada)?;
    anchored_loss(bundle, batch.target(), batch.source(), batch.labels(), rng)
}

/// LADA joint step: `alpha * BCE(f(g(x_T)), y) + (1 - alpha) * MSE(g(x_T), h(x_S))`
/// with `h` taken from the frozen `h+e` net.
pub fn loss_lada<R: Rng + ?Sized>(bundle: &ModelBundle, batch: &PairedBatch, rng: &mut R) -> Result<(f64, BundleGrads)> {
    expect_kind(bundle, ModelKind::Lada)?;
    let anchor = latent_anchor(bundle, batch.source())?;
    anchored_loss(bundle, batch.target(), anchor.view(), batch.labels(), rng)
}

/// LADA objective with precomputed `h(x_S)` rows.
pub(crate) fn loss_lada_with_anchor<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    batch: &PairedBatch,
    anchor: ArrayView2<f64>,
    rng: &mut R,
) -> Result<(f64, BundleGrads)> {
    anchored_loss(bundle, batch.target(), anchor, batch.labels(), rng)
}

/// `h(x)`: eval-mode hidden activations of LADA's `h+e` net.
pub fn latent_anchor(bundle: &ModelBundle, source: ArrayView2<f64>) -> Result<Array2<f64>> {
    let he = bundle
        .he
        .as_ref()
        .ok_or_else(|| Error::ModelMismatch("LADA objective needs the trained h+e net".into()))?;
    he.hidden_activations(source, 0)
}

/// SDA: `alpha * (BCE(f(g(x_T)), y) + BCE(f(g(x_S)), y)) + (1 - alpha) * MSE(g(x_T), g(x_S))`.
/// The invariance term differentiates through both views.
pub fn loss_sda<R: Rng + ?Sized>(bundle: &ModelBundle, batch: &PairedBatch, rng: &mut R) -> Result<(f64, BundleGrads)> {
    expect_kind(bundle, ModelKind::Sda)?;
    let alpha = bundle.alpha;
    let mut on_target = classifier_pass(&bundle.g, &bundle.f, batch.target(), batch.labels(), alpha, rng)?;
    let mut on_source = classifier_pass(&bundle.g, &bundle.f, batch.source(), batch.labels(), alpha, rng)?;
    let mut loss = alpha * (on_target.bce + on_source.bce);
    if alpha < 1.0 {
        let (mse, d_mse) = mse_loss(on_target.g_out.view(), on_source.g_out.view())?;
        loss += (1.0 - alpha) * mse;
        on_target.d_g_out.scaled_add(1.0 - alpha, &d_mse);
        on_source.d_g_out.scaled_add(-(1.0 - alpha), &d_mse);
    }
    let (mut g_grads, _) = bundle.g.backward(&on_target.g_cache, on_target.d_g_out.view())?;
    let (g_source, _) = bundle.g.backward(&on_source.g_cache, on_source.d_g_out.view())?;
    g_grads.add_assign(&g_source)?;
    let mut f_grads = on_target.f_grads;
    f_grads.add_assign(&on_source.f_grads)?;
    Ok((
        loss,
        BundleGrads {
            g: g_grads,
            f: f_grads,
            he: None,
        },
    ))
}

/// Base-training objective of `bundle.kind` on a paired batch.
pub fn base_loss<R: Rng + ?Sized>(bundle: &ModelBundle, batch: &PairedBatch, rng: &mut R) -> Result<(f64, BundleGrads)> {
    match bundle.kind {
        ModelKind::Nt => loss_nt(bundle, batch.target(), batch.labels(), rng),
        ModelKind::Sda => loss_sda(bundle, batch, rng),
        ModelKind::Iada => loss_iada(bundle, batch, rng),
        ModelKind::Lada => loss_lada(bundle, batch, rng),
    }
}
