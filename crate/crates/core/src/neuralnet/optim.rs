use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Layer, Mlp, ModelConfig};
use crate::error::{Error, Result};

/// Per-layer trainability; `true` means frozen. The output layer is last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreezeMask(Vec<bool>);

impl FreezeMask {
    pub fn new(frozen: Vec<bool>) -> Self {
        Self(frozen)
    }

    pub fn none(num_layers: usize) -> Self {
        Self(vec![false; num_layers])
    }

    pub fn all(num_layers: usize) -> Self {
        Self(vec![true; num_layers])
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.0.get(layer).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.len() != config.num_layers() {
            return Err(Error::config(
                "/train/freeze_mask",
                format!(
                    "mask has {} entries but the model has {} layers",
                    self.len(),
                    config.num_layers()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Zero is accepted: it turns training into pure evaluation.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(
                "/train/optimizer/learning_rate",
                "must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("/train/optimizer", "betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("/train/optimizer/epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Learning rate plus Adam moments, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub first_moment: Vec<Layer>,
    pub second_moment: Vec<Layer>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, model: &ModelConfig) -> Self {
        let zeros = || -> Vec<Layer> {
            model
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect()
        };
        let (first_moment, second_moment) = match config.kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            config,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn apply(&mut self, mlp: &mut Mlp, grads: &Gradients, frozen: Option<&FreezeMask>) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Sgd => {
                sgd_step(mlp, grads, self, frozen);
                Ok(())
            }
            OptimizerKind::Adam => adam_step(mlp, grads, self, frozen),
        }
    }
}

fn trainable(frozen: Option<&FreezeMask>, layer: usize) -> bool {
    !frozen.is_some_and(|m| m.is_frozen(layer))
}

/// `w <- w - lr * g` on every trainable layer.
pub fn sgd_step(mlp: &mut Mlp, grads: &Gradients, state: &mut OptimizerState, frozen: Option<&FreezeMask>) {
    let lr = state.config.learning_rate;
    state.step += 1;
    for (l, (layer, grad)) in mlp.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
        if !trainable(frozen, l) {
            continue;
        }
        Zip::from(&mut layer.weight)
            .and(&grad.weight)
            .for_each(|w, &g| *w -= lr * g);
        Zip::from(&mut layer.bias)
            .and(&grad.bias)
            .for_each(|b, &g| *b -= lr * g);
    }
}

/// Bias-corrected Adam. Frozen layers keep both parameters and moments.
pub fn adam_step(
    mlp: &mut Mlp,
    grads: &Gradients,
    state: &mut OptimizerState,
    frozen: Option<&FreezeMask>,
) -> Result<()> {
    if state.config.kind != OptimizerKind::Adam {
        return Err(Error::config("/train/optimizer/kind", "adam_step needs an Adam state"));
    }
    state.step += 1;
    let OptimizerConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        ..
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let update = |w: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
    };
    let layers = mlp.layers_mut().iter_mut();
    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for (l, ((layer, grad), (m, v))) in layers.zip(&grads.layers).zip(moments).enumerate() {
        if !trainable(frozen, l) {
            continue;
        }
        Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&grad.weight)
            .for_each(|w, m, v, &g| update(w, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&grad.bias)
            .for_each(|w, m, v, &g| update(w, m, v, g));
    }
    Ok(())
}
