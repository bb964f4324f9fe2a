use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::mse_loss;
use super::optim::FreezeMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Multiplies `delta` in place by the derivative, given the
    /// pre-activation `z` and activation `a` of the same layer.
    fn backprop(self, delta: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(delta).and(z).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(delta).and(a).for_each(|d, &a| *d *= 1.0 - a * a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    /// Five tapering hidden layers, widest 512.
    fn default() -> Self {
        Self {
            input_dim: 10,
            hidden_sizes: vec![512, 256, 128, 64, 32],
            output_dim: 2,
            activation: Activation::Relu,
            init_seed: 17,
        }
    }
}

impl ModelConfig {
    /// Small two-layer profile for quick runs.
    pub fn fast() -> Self {
        Self {
            hidden_sizes: vec![64, 64],
            ..Self::default()
        }
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_sizes.len() + 1
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_sizes);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("/model/input_dim", "must be positive"));
        }
        if let Some(i) = self.hidden_sizes.iter().position(|&h| h == 0) {
            return Err(Error::config(format!("/model/hidden_sizes/{i}"), "must be positive"));
        }
        if self.output_dim != 2 {
            return Err(Error::config(
                "/model/output_dim",
                format!("planar regression needs 2 outputs, got {}", self.output_dim),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Per-layer gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(config: &ModelConfig) -> Self {
        Self {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// `self = a * self + b * other`.
    pub fn blend(&mut self, a: f64, other: &Gradients, b: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut mine.weight)
                .and(&theirs.weight)
                .for_each(|x, &y| *x = a * *x + b * y);
            Zip::from(&mut mine.bias)
                .and(&theirs.bias)
                .for_each(|x, &y| *x = a * *x + b * y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: ModelConfig,
    layers: Vec<Layer>,
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
pub fn init_model(config: &ModelConfig) -> Result<Mlp> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let layers = config
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let bound = (6.0 / fan_in as f64).sqrt();
            Layer {
                weight: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound)),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(Mlp {
        config: config.clone(),
        layers,
    })
}

impl Mlp {
    /// Wraps existing parameters after checking them against `config`.
    pub fn from_layers(config: ModelConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "config has {} layers, parameters have {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(fan_in, fan_out))) in layers.iter().zip(&shapes).enumerate() {
            if layer.shape() != (fan_in, fan_out) || layer.bias.len() != fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: expected {fan_in}x{fan_out}, got {:?} with bias {}",
                    layer.shape(),
                    layer.bias.len()
                )));
            }
            if !layer.is_finite() {
                return Err(Error::ShapeMismatch(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.config.input_dim {
            return Err(Error::Dimension {
                context: "model input",
                expected: self.config.input_dim,
                got: cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<[f64; 2]> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let out = self.forward_batch(batch)?;
        Ok([out[[0, 0]], out[[0, 1]]])
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            a = if i < last { self.config.activation.apply(&z) } else { z };
        }
        Ok(a)
    }

    /// Loss and exact gradients of [`mse_loss`] over the batch.
    pub fn backward(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        self.backward_masked(x, y, None)
    }

    /// As [`Mlp::backward`], but frozen layers receive zero gradients and
    /// backpropagation stops below the lowest trainable layer.
    pub fn backward_masked(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        frozen: Option<&FreezeMask>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(x.ncols())?;
        if x.nrows() != y.nrows() || y.ncols() != self.config.output_dim {
            return Err(Error::Dimension {
                context: "backward targets",
                expected: x.nrows() * self.config.output_dim,
                got: y.nrows() * y.ncols(),
            });
        }
        let is_frozen = |l: usize| frozen.is_some_and(|m| m.is_frozen(l));
        let last = self.layers.len() - 1;

        // inputs[l] feeds layer l; pre[l] is the pre-activation of hidden layer l.
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            inputs.push(a);
            if i < last {
                a = self.config.activation.apply(&z);
                pre.push(z);
            } else {
                a = z;
            }
        }
        let loss = mse_loss(a.view(), y)?;

        let mut grads = Gradients::zeros_like(&self.config);
        let lowest_trainable = (0..self.layers.len()).find(|&l| !is_frozen(l));
        let Some(lowest) = lowest_trainable else {
            return Ok((loss, grads));
        };
        let scale = 2.0 / a.len() as f64;
        let mut delta = (a - y) * scale;
        for l in (lowest..=last).rev() {
            if !is_frozen(l) {
                grads.layers[l].weight = inputs[l].t().dot(&delta);
                grads.layers[l].bias = delta.sum_axis(Axis(0));
            }
            if l > lowest {
                let mut upstream = delta.dot(&self.layers[l].weight.t());
                // inputs[l] is the activation of hidden layer l - 1.
                self.config.activation.backprop(&mut upstream, &pre[l - 1], &inputs[l]);
                delta = upstream;
            }
        }
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_profile_shapes_and_count() {
        let cfg = ModelConfig::default();
        assert_eq!(
            cfg.layer_shapes(),
            vec![(10, 512), (512, 256), (256, 128), (128, 64), (64, 32), (32, 2)]
        );
        let by_hand = 10 * 512 + 512 + 512 * 256 + 256 + 256 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2;
        assert_eq!(by_hand, 180_258);
        assert_eq!(cfg.param_count(), 180_258);
        let mlp = init_model(&cfg).unwrap();
        assert_eq!(mlp.param_count(), 180_258);
        assert!(mlp.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::fast();
        let a = init_model(&cfg).unwrap();
        assert_eq!(a, init_model(&cfg).unwrap());
        let other = init_model(&ModelConfig {
            init_seed: 99,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a, other);
        for layer in a.layers() {
            let bound = (6.0 / layer.shape().0 as f64).sqrt();
            assert!(layer.weight.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn invalid_configs() {
        let cfg = ModelConfig {
            hidden_sizes: vec![8, 0],
            ..ModelConfig::fast()
        };
        assert!(matches!(init_model(&cfg), Err(Error::Config { .. })));
        let cfg = ModelConfig {
            output_dim: 3,
            ..ModelConfig::fast()
        };
        assert!(init_model(&cfg).is_err());
    }

    #[test]
    fn zero_model_predicts_origin() {
        let cfg = ModelConfig::fast();
        let layers = cfg
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        let mlp = Mlp::from_layers(cfg, layers).unwrap();
        assert_eq!(mlp.forward(&[1.0; 10]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn relu_gates_negative_input() {
        let cfg = ModelConfig {
            input_dim: 1,
            hidden_sizes: vec![1],
            ..ModelConfig::default()
        };
        let layers = vec![
            Layer {
                weight: array![[1.0]],
                bias: array![0.0],
            },
            Layer {
                weight: array![[2.0, 3.0]],
                bias: array![0.25, -0.5],
            },
        ];
        let mlp = Mlp::from_layers(cfg, layers).unwrap();
        assert_eq!(mlp.forward(&[-1.0]).unwrap(), [0.25, -0.5]);
        assert_eq!(mlp.forward(&[2.0]).unwrap(), [4.25, 5.5]);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mlp = init_model(&ModelConfig::fast()).unwrap();
        let x = Array2::from_shape_fn((7, 10), |(i, j)| ((i * 10 + j) as f64 * 0.37).sin());
        let batch = mlp.forward_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = mlp.forward(row.as_slice().unwrap()).unwrap();
            assert!((single[0] - batch[[i, 0]]).abs() < 1e-12);
            assert!((single[1] - batch[[i, 1]]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mlp = init_model(&ModelConfig::fast()).unwrap();
        assert!(matches!(mlp.forward(&[0.0; 9]), Err(Error::Dimension { .. })));
        let x = Array2::zeros((3, 10));
        let y = Array2::zeros((2, 2));
        assert!(mlp.backward(x.view(), y.view()).is_err());
    }

    #[test]
    fn from_layers_rejects_wrong_shapes() {
        let cfg = ModelConfig::fast();
        let mut layers = init_model(&cfg).unwrap().into_layers();
        layers.pop();
        assert!(matches!(Mlp::from_layers(cfg, layers), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn masked_backward_matches_full_on_trainable_layers() {
        let mlp = init_model(&ModelConfig::fast()).unwrap();
        let x = Array2::from_shape_fn((5, 10), |(i, j)| ((i + 3 * j) as f64).cos());
        let y = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64);
        let (loss_full, full) = mlp.backward(x.view(), y.view()).unwrap();
        let mask = FreezeMask::new(vec![true, false, false]);
        let (loss_masked, masked) = mlp.backward_masked(x.view(), y.view(), Some(&mask)).unwrap();
        assert_eq!(loss_full, loss_masked);
        assert_eq!(masked.layers[1], full.layers[1]);
        assert_eq!(masked.layers[2], full.layers[2]);
        assert!(masked.layers[0].weight.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        // Linear model (no hidden layers) fitted exactly: residuals are zero.
        let cfg = ModelConfig {
            input_dim: 2,
            hidden_sizes: vec![],
            ..ModelConfig::default()
        };
        let layers = vec![Layer {
            weight: array![[1.0, 2.0], [-1.0, 0.5]],
            bias: array![0.1, 0.2],
        }];
        let mlp = Mlp::from_layers(cfg, layers).unwrap();
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let y = mlp.forward_batch(x.view()).unwrap();
        let (loss, grads) = mlp.backward(x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.norm() < 1e-10);
    }

    #[test]
    fn gradient_is_batch_order_invariant() {
        let mlp = init_model(&ModelConfig {
            activation: Activation::Tanh,
            ..ModelConfig::fast()
        })
        .unwrap();
        let x = Array2::from_shape_fn((6, 10), |(i, j)| ((i * 7 + j) as f64 * 0.13).sin());
        let y = Array2::from_shape_fn((6, 2), |(i, j)| (i as f64 - j as f64) * 0.3);
        let order = [4usize, 1, 5, 0, 3, 2];
        let xp = x.select(Axis(0), &order);
        let yp = y.select(Axis(0), &order);
        let (_, g1) = mlp.backward(x.view(), y.view()).unwrap();
        let (_, g2) = mlp.backward(xp.view(), yp.view()).unwrap();
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (u, v) in a.weight.iter().zip(b.weight.iter()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }
}
