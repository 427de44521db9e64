use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayerShape, ParamLayout, ParamVector};
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Exponential linear unit with unit shape parameter.
    Elu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Elu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Elu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Architecture of a dense feedforward network.
///
/// `hidden_layers` layers of `hidden_width` units share `hidden_activation`;
/// the output layer applies `output_activation` and is then multiplied
/// elementwise by `output_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub output_dim: usize,
    pub output_scale: Vec<f64>,
}

impl NetworkSpec {
    /// Bounded policy head: tanh output scaled per control channel.
    pub fn policy(input_dim: usize, hidden_layers: usize, hidden_width: usize, control_scale: &[f64]) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            hidden_activation: Activation::Elu,
            output_activation: Activation::Tanh,
            output_dim: control_scale.len(),
            output_scale: control_scale.to_vec(),
        }
    }

    /// Scalar linear value head.
    pub fn value(input_dim: usize, hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            hidden_activation: Activation::Elu,
            output_activation: Activation::Linear,
            output_dim: 1,
            output_scale: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NetError::InvalidSpec("dimensions must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(NetError::InvalidSpec("hidden_width must be at least 1".into()));
        }
        if self.output_scale.len() != self.output_dim {
            return Err(NetError::InvalidSpec(format!(
                "output_scale has {} entries for {} outputs",
                self.output_scale.len(),
                self.output_dim
            )));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.layer_count());
        let mut cols = self.input_dim;
        for _ in 0..self.hidden_layers {
            shapes.push(LayerShape {
                rows: self.hidden_width,
                cols,
            });
            cols = self.hidden_width;
        }
        shapes.push(LayerShape {
            rows: self.output_dim,
            cols,
        });
        shapes
    }

    pub fn layout(&self) -> Arc<ParamLayout> {
        Arc::new(ParamLayout::new(self.layer_shapes()))
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::param_count).sum()
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases per layer.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let layout = self.layout();
        let mut params = ParamVector::zeros(layout.clone());
        for (l, shape) in layout.shapes().iter().enumerate() {
            let bound = 1.0 / (shape.cols as f64).sqrt();
            let (w, b) = params.layer_mut(l);
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout())
    }

    pub(crate) fn check_params(&self, params: &ParamVector) -> Result<(), NetError> {
        if params.layout().shapes() != self.layer_shapes().as_slice() {
            return Err(NetError::LayoutMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }
}
