use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer `y = act(x W^T + b)` with `W` stored `D_out x D_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// He-style init: `N(0, 2 / D_in)` weights, zero bias.
    pub fn init(d_in: usize, d_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(d_in > 0 && d_out > 0, "layer widths must be positive");
        let normal = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("positive std");
        Self {
            weight: Array2::from_shape_simple_fn((d_out, d_in), || normal.sample(rng)),
            bias: Array1::zeros(d_out),
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    /// Weights plus biases.
    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Multiply-adds counted as two operations, per sample.
    pub fn flops(&self) -> usize {
        2 * self.d_in() * self.d_out()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<(), TensorError> {
        if x.ncols() != self.d_in() {
            return Err(TensorError::Contract(format!(
                "dense layer expects {} input columns, got {}",
                self.d_in(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass without a cache.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, TensorError> {
        self.check(&x)?;
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        if self.activation == Activation::Relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        Ok(y)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, DenseCache), TensorError> {
        let y = self.apply(x)?;
        Ok((
            y.clone(),
            DenseCache {
                input: x.to_owned(),
                output: y,
            },
        ))
    }

    /// Returns the input gradient (when `want_input_grad`) and parameter gradients.
    pub fn backward(
        &self,
        cache: &DenseCache,
        grad_out: ArrayView2<f64>,
        want_input_grad: bool,
    ) -> (Option<Array2<f64>>, DenseGrads) {
        let mut g = grad_out.to_owned();
        if self.activation == Activation::Relu {
            // derivative of relu at 0 taken as 0
            ndarray::Zip::from(&mut g).and(&cache.output).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let weight = g.t().dot(&cache.input);
        let bias = g.sum_axis(Axis(0));
        let input = want_input_grad.then(|| g.dot(&self.weight));
        (input, DenseGrads { weight, bias })
    }
}
