use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One affine layer. `weights` is `[in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Rectifier MLP with an identity or logistic output unit and inverted
/// dropout on selected hidden activations.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    output_activation: OutputActivation,
    dropout_rate: f64,
    /// `dropout_after[i]` applies dropout to the activations leaving layer `i`.
    dropout_after: Vec<bool>,
    /// Bumped on every parameter mutation so stale caches can be detected.
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.output_activation == other.output_activation
            && self.dropout_rate.to_bits() == other.dropout_rate.to_bits()
            && self.dropout_after == other.dropout_after
    }
}

/// Build a net with layer widths `layer_dims` (input first, output last).
///
/// Weights are drawn from `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`,
/// biases start at zero. Dropout sits after every hidden layer except the
/// last one, which feeds the output layer directly.
pub fn init_dense_net(
    layer_dims: &[usize],
    output_activation: OutputActivation,
    dropout_rate: f64,
    seed: u64,
) -> Result<DenseNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseNet::init_with_rng(layer_dims, output_activation, dropout_rate, &mut rng)
}

impl DenseNet {
    pub fn init_with_rng<R: Rng + ?Sized>(
        layer_dims: &[usize],
        output_activation: OutputActivation,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least an input and an output width, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer widths must be positive, got {layer_dims:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArchitecture(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect::<Vec<_>>();
        let gaps = layers.len() - 1;
        let dropout_after = (0..gaps).map(|i| i + 1 < gaps).collect();
        Ok(Self {
            layers,
            output_activation,
            dropout_rate,
            dropout_after,
            generation: 0,
        })
    }

    /// Assemble a net from explicit parameters (used by checkpoint loading).
    pub fn from_parts(
        layers: Vec<Layer>,
        output_activation: OutputActivation,
        dropout_rate: f64,
        dropout_after: Vec<bool>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if let Some(i) = layers.iter().position(|l| l.bias.len() != l.out_dim()) {
            return Err(Error::InvalidArchitecture(format!(
                "bias of layer {i} does not match its output width"
            )));
        }
        if dropout_after.len() != layers.len() - 1 {
            return Err(Error::InvalidArchitecture(format!(
                "{} dropout flags for {} inter-layer gaps",
                dropout_after.len(),
                layers.len() - 1
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArchitecture(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        Ok(Self {
            layers,
            output_activation,
            dropout_rate,
            dropout_after,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn dropout_after(&self) -> &[bool] {
        &self.dropout_after
    }

    /// Widths from input to output, e.g. `[30, 64, 64, 1]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "net expects {} input columns, batch has {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass. In train mode dropout masks are drawn from `rng`; in
    /// eval mode `rng` is untouched and the output is deterministic.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            inputs.push(current);
            if i == last {
                if self.output_activation == OutputActivation::Logistic {
                    z.mapv_inplace(logistic);
                }
                current = z;
                break;
            }
            z.mapv_inplace(|v| v.max(0.0));
            let mask = if mode == Mode::Train && self.dropout_after[i] && self.dropout_rate > 0.0 {
                let scale = 1.0 / keep;
                let mask = Array2::from_shape_simple_fn(z.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                });
                z *= &mask;
                Some(mask)
            } else {
                None
            };
            masks.push(mask);
            current = z;
        }
        let cache = ForwardCache {
            generation: self.generation,
            dims: self.dims(),
            inputs,
            masks,
            output: current.clone(),
        };
        Ok((current, cache))
    }

    /// Eval-mode forward without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            if i == last {
                if self.output_activation == OutputActivation::Logistic {
                    z.mapv_inplace(logistic);
                }
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            current = z;
        }
        Ok(current)
    }

    /// Eval-mode activations after the rectifier of hidden layer `depth`
    /// (0 = first hidden layer).
    pub fn hidden_activations(&self, x: ArrayView2<f64>, depth: usize) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        if depth + 1 >= self.layers.len() {
            return Err(Error::InvalidArchitecture(format!(
                "net has {} hidden layers, asked for hidden layer {depth}",
                self.layers.len() - 1
            )));
        }
        let mut current = x.to_owned();
        for layer in &self.layers[..=depth] {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            z.mapv_inplace(|v| v.max(0.0));
            current = z;
        }
        Ok(current)
    }

    /// Reverse pass. `upstream` is the loss gradient with respect to the
    /// net's (post-activation) output. Returns parameter gradients and the
    /// gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(NetGrads, Array2<f64>)> {
        if cache.generation != self.generation || cache.dims != self.dims() {
            return Err(Error::InvalidCache(format!(
                "cache was produced by a different net state (dims {:?}, generation {}) than \
                 the current one (dims {:?}, generation {})",
                cache.dims,
                cache.generation,
                self.dims(),
                self.generation
            )));
        }
        if upstream.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        let mut delta = upstream.to_owned();
        if self.output_activation == OutputActivation::Logistic {
            Zip::from(&mut delta)
                .and(&cache.output)
                .for_each(|d, &p| *d *= p * (1.0 - p));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let weights = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            grads.push(LayerGrads { weights, bias });
            let mut back = delta.dot(&layer.weights.t());
            if i > 0 {
                if let Some(mask) = &cache.masks[i - 1] {
                    back *= mask;
                }
                // input > 0 exactly where the rectifier was active and the unit survived dropout
                Zip::from(&mut back).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = back;
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, delta))
    }
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations recorded by [`DenseNet::forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    dims: Vec<usize>,
    /// Input to each layer, after the previous layer's rectifier and dropout.
    inputs: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients, shape-congruent with a [`DenseNet`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient sets have different depths".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.dim() != b.weights.dim() || a.bias.dim() != b.bias.dim() {
                return Err(Error::Shape("gradient layer shapes differ".into()));
            }
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
        Ok(())
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|&v| v == 0.0))
    }

    /// Flattened view in layer order (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn init_shapes_follow_layer_dims() {
        let net = init_dense_net(&[4, 64, 64, 1], OutputActivation::Logistic, 0.5, 3).unwrap();
        let shapes: Vec<_> = net.layers().iter().map(|l| l.weights.dim()).collect();
        assert_eq!(shapes, vec![(4, 64), (64, 64), (64, 1)]);
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(net.dropout_after(), &[true, false]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_dense_net(&[4, 64, 64, 1], OutputActivation::Logistic, 0.5, 9).unwrap();
        let b = init_dense_net(&[4, 64, 64, 1], OutputActivation::Logistic, 0.5, 9).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 68.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn too_few_dims_is_rejected() {
        let err = init_dense_net(&[4], OutputActivation::Logistic, 0.5, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidArchitecture(_)));
        assert!(init_dense_net(&[], OutputActivation::Identity, 0.0, 0).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let net = DenseNet::from_parts(vec![layer], OutputActivation::Identity, 0.0, vec![]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        let (y, _) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn logistic_of_zero_is_half() {
        let layer = Layer {
            weights: Array2::zeros((2, 1)),
            bias: Array1::zeros(1),
        };
        let net = DenseNet::from_parts(vec![layer], OutputActivation::Logistic, 0.0, vec![]).unwrap();
        let (y, _) = net.forward(array![[3.0, -1.0]].view(), Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y[[0, 0]], 0.5);
    }

    #[test]
    fn seeded_train_forward_repeats() {
        let net = init_dense_net(&[5, 16, 16, 1], OutputActivation::Logistic, 0.5, 1).unwrap();
        let x = Array2::from_shape_fn((8, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (a, _) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        let (b, _) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        assert_eq!(a, b);
        let (e, _) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        assert_eq!(e, net.predict(x.view()).unwrap());
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let net = init_dense_net(&[5, 8, 1], OutputActivation::Logistic, 0.0, 1).unwrap();
        let x = Array2::zeros((2, 4));
        assert!(matches!(
            net.forward(x.view(), Mode::Eval, &mut rng()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = init_dense_net(&[5, 4, 3, 1], OutputActivation::Logistic, 0.5, 2).unwrap();
        let x = Array2::from_shape_fn((3, 5), |(i, j)| ((i * 5 + j) as f64).sin());
        let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        let (grads, dx) = net.backward(&cache, Array2::zeros(y.raw_dim()).view()).unwrap();
        assert!(grads.is_all_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_matches_closed_form() {
        // single linear layer with squared error: dL/dW = x^T (pred - target) * 2 / n
        let net = init_dense_net(&[3, 2], OutputActivation::Identity, 0.0, 4).unwrap();
        let x = array![[1.0, 2.0, -1.0], [0.5, -0.5, 2.0], [0.0, 1.0, 1.0]];
        let target = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let (pred, cache) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        let (_, upstream) = crate::nn::mse_loss(pred.view(), target.view()).unwrap();
        let (grads, _) = net.backward(&cache, upstream.view()).unwrap();
        let n = pred.len() as f64;
        let expected = x.t().dot(&(&pred - &target)) * (2.0 / n);
        for (a, b) in grads.layers[0].weights.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = init_dense_net(&[3, 4, 1], OutputActivation::Logistic, 0.0, 5).unwrap();
        let x = Array2::ones((2, 3));
        let (y, cache) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        net.layers_mut()[0].bias[0] += 1.0;
        let err = net.backward(&cache, y.view()).unwrap_err();
        assert!(matches!(err, Error::InvalidCache(_)));

        let other = init_dense_net(&[3, 5, 1], OutputActivation::Logistic, 0.0, 5).unwrap();
        assert!(matches!(
            other.backward(&cache, y.view()),
            Err(Error::InvalidCache(_))
        ));
    }

    #[test]
    fn hidden_activations_are_nonnegative() {
        let net = init_dense_net(&[6, 10, 1], OutputActivation::Logistic, 0.0, 8).unwrap();
        let x = Array2::from_shape_fn((4, 6), |(i, j)| (i as f64) - (j as f64));
        let h = net.hidden_activations(x.view(), 0).unwrap();
        assert_eq!(h.dim(), (4, 10));
        assert!(h.iter().all(|&v| v >= 0.0));
        assert!(net.hidden_activations(x.view(), 1).is_err());
    }
}
