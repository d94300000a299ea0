//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Everything here works on row-major batches: an input batch is a
//! `[batch x in]` matrix and each layer stores its weights as `[in x out]`,
//! so a layer is `relu(x · W + b)`.

mod adam;
mod dense;
mod loss;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use dense::{
    init_dense_net, DenseNet, ForwardCache, Layer, LayerGrads, Mode, NetGrads, OutputActivation,
};
pub use loss::{bce_loss, mse_loss, PROB_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
