use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer widths of the classifier: `input → hidden… → num_classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Views into one dense layer of a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerSpan {
    pub inputs: usize,
    pub outputs: usize,
    /// Start of the `[outputs × inputs]` row-major weight block.
    pub weights: usize,
    /// Start of the `outputs` bias entries, directly after the weights.
    pub bias: usize,
}

impl LayerSpan {
    pub fn end(&self) -> usize {
        self.bias + self.outputs
    }
}

impl ModelLayout {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::arg(format!("every layer width must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `[input, hidden…, classes]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::arg("a layout needs at least input and output widths"));
        }
        let layout = Self::new(dims[0], dims[1..dims.len() - 1].to_vec(), dims[dims.len() - 1]);
        layout.validate()?;
        Ok(layout)
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub(crate) fn spans(&self) -> Vec<LayerSpan> {
        let dims = self.dims();
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let span = LayerSpan {
                    inputs: w[0],
                    outputs: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset = span.end();
                span
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.spans().last().map_or(0, LayerSpan::end)
    }

    /// Index range of the final layer's weights and biases.
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        let last = *self.spans().last().expect("layout has a layer");
        last.weights..last.end()
    }
}

/// All weights and biases in one flat vector, layer by layer, each layer
/// stored as `[outputs × inputs]` row-major weights followed by biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    layout: ModelLayout,
    values: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(layout: ModelLayout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![T::zero(); n],
        }
    }

    pub fn from_values(layout: ModelLayout, values: Vec<T>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.param_count() {
            return Err(Error::arg(format!(
                "{} values for a layout with {} parameters",
                values.len(),
                layout.param_count()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &ModelParams<T>) -> bool {
        self.layout == other.layout
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Gradient of a scalar objective, laid out exactly like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    layout: ModelLayout,
    values: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(layout: ModelLayout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![T::zero(); n],
        }
    }

    pub fn from_values(layout: ModelLayout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::arg("gradient length does not match layout"));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// The final layer's weight and bias gradients.
    pub fn last_layer(&self) -> &[T] {
        &self.values[self.layout.last_layer_range()]
    }
}

/// He-uniform fan-in initialisation with zero biases.
pub fn init_params<T: Scalar>(layout: &ModelLayout, seed: u64) -> Result<ModelParams<T>> {
    layout.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut p = ModelParams::zeros(layout.clone());
    for span in layout.spans() {
        let limit = (6.0 / span.inputs as f64).sqrt();
        for v in &mut p.values[span.weights..span.bias] {
            *v = T::of(rng.random_range(-limit..limit));
        }
    }
    Ok(p)
}
