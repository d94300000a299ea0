//! The four model kinds, their objectives, training loops and checkpoints.

mod bundle;
mod checkpoint;
mod objective;
mod schema;
mod train;

pub use bundle::{build_model, ModelBundle, ModelKind, TrainConfig};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, Phase, FORMAT_VERSION};
pub use objective::{
    base_loss, classification_loss, latent_anchor, loss_iada, loss_lada, loss_nt, loss_sda,
    BundleGrads, PairedBatch,
};
pub use schema::{FeatureSchema, LabeledData, View};
pub use train::{fine_tune, mean_log_loss, predict, train_base, train_lada_step1};
