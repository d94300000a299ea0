use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use crate::error::{Error, Result};
use crate::nn::{substream, AdamConfig, DenseNet, OutputActivation};

/// The four model kinds compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// No transfer: classification on target features only.
    Nt,
    /// Supervised domain adaptation baseline: two-view classification plus
    /// an invariance penalty between the two views' representations.
    Sda,
    /// Interpretable anchored adaptation: `g` imputes the observed source features.
    Iada,
    /// Latent anchored adaptation: `g` regresses onto a frozen source-domain latent `h(x)`.
    Lada,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Nt, ModelKind::Sda, ModelKind::Iada, ModelKind::Lada];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nt => "nt",
            ModelKind::Sda => "sda",
            ModelKind::Iada => "iada",
            ModelKind::Lada => "lada",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ModelKind::Nt => 0,
            ModelKind::Sda => 1,
            ModelKind::Iada => 2,
            ModelKind::Lada => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Whether the kind has a transfer term for alpha to weigh.
    pub fn uses_alpha(self) -> bool {
        self != ModelKind::Nt
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt" => Ok(ModelKind::Nt),
            "sda" => Ok(ModelKind::Sda),
            "iada" => Ok(ModelKind::Iada),
            "lada" => Ok(ModelKind::Lada),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind {other:?} (expected nt, sda, iada or lada)"
            ))),
        }
    }
}

/// Training hyperparameters for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the classification term; the transfer term gets `1 - alpha`.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over the head data during base training (and LADA step 1).
    pub epochs: usize,
    /// Passes over the tail data per fine-tuning increment.
    pub fine_tune_epochs: usize,
    pub seed: u64,
    pub hidden_width: usize,
    /// Output width of `g` for NT, SDA and LADA, and the width of `h(x)`.
    pub latent_width: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            learning_rate: 0.01,
            batch_size: 256,
            epochs: 5,
            fine_tune_epochs: 2,
            seed: 0,
            hidden_width: 64,
            latent_width: 64,
            dropout: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden_width == 0 || self.latent_width == 0 {
            return bad("batch_size, epochs, hidden_width and latent_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

// Independent random streams derived from a training seed.
pub(crate) const STREAM_INIT_G: u64 = 1;
pub(crate) const STREAM_INIT_F: u64 = 2;
pub(crate) const STREAM_INIT_HE: u64 = 3;
pub(crate) const STREAM_SHUFFLE: u64 = 10;
pub(crate) const STREAM_DROPOUT: u64 = 11;
pub(crate) const STREAM_HE_SHUFFLE: u64 = 12;
pub(crate) const STREAM_HE_DROPOUT: u64 = 13;
pub(crate) const STREAM_FT_SHUFFLE: u64 = 20;
pub(crate) const STREAM_FT_DROPOUT: u64 = 21;

/// Networks and wiring of one model: `f(g(x))` predicts engagement, and for
/// LADA the frozen `he` net provides `h(x)` as its hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub schema: FeatureSchema,
    pub g: DenseNet,
    pub f: DenseNet,
    pub he: Option<DenseNet>,
    pub alpha: f64,
}

impl ModelBundle {
    /// Width of `g(x)`.
    pub fn representation_dim(&self) -> usize {
        self.g.output_dim()
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let total = self.schema.total_dim();
        let mismatch = |msg: String| Err(Error::ModelMismatch(msg));
        if self.g.input_dim() != total {
            return mismatch(format!("g takes {} inputs, schema has {total}", self.g.input_dim()));
        }
        if self.kind == ModelKind::Iada && self.g.output_dim() != total {
            return mismatch("IADA's g must reproduce the full feature vector".into());
        }
        if self.f.input_dim() != self.g.output_dim() || self.f.output_dim() != 1 {
            return mismatch("f must map g's output to a single probability".into());
        }
        if self.f.output_activation() != OutputActivation::Logistic {
            return mismatch("f needs a logistic output unit".into());
        }
        match (&self.he, self.kind) {
            (Some(he), ModelKind::Lada) => {
                if he.input_dim() != total || he.layers().len() != 2 || he.output_dim() != 1 {
                    return mismatch("LADA's h+e net must be one hidden layer over the source features".into());
                }
                if he.layers()[0].out_dim() != self.g.output_dim() {
                    return mismatch("h(x) and g(x) widths differ".into());
                }
            }
            (None, ModelKind::Lada) => return mismatch("LADA model without its h+e net".into()),
            (Some(_), kind) => return mismatch(format!("{kind} model carries an h+e net")),
            (None, _) => {}
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return mismatch(format!("alpha {} outside (0, 1]", self.alpha));
        }
        Ok(())
    }
}

/// Build an untrained model of `kind`.
///
/// `g` and `f` each get two hidden layers of `hidden_width`. IADA's `g`
/// reproduces the full feature vector, every other kind maps to
/// `latent_width`. LADA adds the `h+e` net `total -> latent -> 1`.
pub fn build_model(kind: ModelKind, schema: FeatureSchema, config: &TrainConfig, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    let total = schema.total_dim();
    let hidden = config.hidden_width;
    let g_out = if kind == ModelKind::Iada {
        total
    } else {
        config.latent_width
    };
    let g = DenseNet::init_with_rng(
        &[total, hidden, hidden, g_out],
        OutputActivation::Identity,
        config.dropout,
        &mut substream(seed, STREAM_INIT_G),
    )?;
    let f = DenseNet::init_with_rng(
        &[g_out, hidden, hidden, 1],
        OutputActivation::Logistic,
        config.dropout,
        &mut substream(seed, STREAM_INIT_F),
    )?;
    let he = if kind == ModelKind::Lada {
        Some(DenseNet::init_with_rng(
            &[total, config.latent_width, 1],
            OutputActivation::Logistic,
            config.dropout,
            &mut substream(seed, STREAM_INIT_HE),
        )?)
    } else {
        None
    };
    let alpha = if kind.uses_alpha() { config.alpha } else { 1.0 };
    let bundle = ModelBundle {
        kind,
        schema,
        g,
        f,
        he,
        alpha,
    };
    bundle.check_consistency()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(10, 20).unwrap()
    }

    #[test]
    fn iada_architecture() {
        let m = build_model(ModelKind::Iada, schema(), &TrainConfig::default(), 0).unwrap();
        assert_eq!(m.g.dims(), vec![30, 64, 64, 30]);
        assert_eq!(m.f.dims(), vec![30, 64, 64, 1]);
        assert!(m.he.is_none());
    }

    #[test]
    fn lada_architecture() {
        let m = build_model(ModelKind::Lada, schema(), &TrainConfig::default(), 0).unwrap();
        assert_eq!(m.g.dims(), vec![30, 64, 64, 64]);
        assert_eq!(m.f.dims(), vec![64, 64, 64, 1]);
        let he = m.he.as_ref().unwrap();
        assert_eq!(he.dims(), vec![30, 64, 1]);
        // the only gap of h+e sits before the output layer
        assert_eq!(he.dropout_after(), &[false]);
        assert_eq!(m.g.dropout_after(), &[true, false]);
        assert_eq!(m.g.dropout_rate(), 0.5);
    }

    #[test]
    fn nt_and_sda_architecture() {
        for kind in [ModelKind::Nt, ModelKind::Sda] {
            let m = build_model(kind, schema(), &TrainConfig::default(), 0).unwrap();
            assert_eq!(m.g.dims(), vec![30, 64, 64, 64]);
            assert_eq!(m.f.dims(), vec![64, 64, 64, 1]);
        }
    }

    #[test]
    fn nt_ignores_alpha() {
        let cfg = TrainConfig::default().with_alpha(0.3);
        assert_eq!(build_model(ModelKind::Nt, schema(), &cfg, 0).unwrap().alpha, 1.0);
        assert_eq!(build_model(ModelKind::Sda, schema(), &cfg, 0).unwrap().alpha, 0.3);
    }

    #[test]
    fn shared_seed_gives_shared_g_and_f() {
        let nt = build_model(ModelKind::Nt, schema(), &TrainConfig::default(), 5).unwrap();
        let lada = build_model(ModelKind::Lada, schema(), &TrainConfig::default(), 5).unwrap();
        assert_eq!(nt.g, lada.g);
        assert_eq!(nt.f, lada.f);
    }

    #[test]
    fn unknown_kind_and_bad_alpha() {
        assert!("dann".parse::<ModelKind>().is_err());
        assert_eq!("LADA".parse::<ModelKind>().unwrap(), ModelKind::Lada);
        let cfg = TrainConfig::default().with_alpha(0.0);
        assert!(build_model(ModelKind::Iada, schema(), &cfg, 0).is_err());
    }
}
