use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Mode, TensorError};

/// Where normalization statistics are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// One mean and variance over every entry of the batch (all samples and channels).
    #[default]
    #[serde(rename = "layerwide")]
    LayerWide,
    /// Conventional batch norm: statistics per channel.
    PerChannel,
}

/// Batch normalization with per-channel scale `gamma` and shift `beta`.
///
/// In [`NormMode::LayerWide`] the running statistics hold a single entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: NormMode,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    x_hat: Array2<f64>,
    /// `1 / sqrt(var + eps)` per statistics group.
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

impl LayerNormState {
    pub fn new(width: usize, mode: NormMode) -> Self {
        let groups = match mode {
            NormMode::LayerWide => 1,
            NormMode::PerChannel => width,
        };
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(groups),
            running_var: Array1::ones(groups),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            mode,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<(), TensorError> {
        if x.ncols() != self.width() {
            return Err(TensorError::Contract(format!(
                "normalization expects {} channels, got {}",
                self.width(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn scale_shift(&self, x_hat: &Array2<f64>) -> Array2<f64> {
        let mut y = x_hat * &self.gamma;
        y += &self.beta;
        y
    }

    /// Inference-mode transform using running statistics.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, TensorError> {
        self.check(&x)?;
        let x_hat = match self.mode {
            NormMode::LayerWide => {
                let s = (self.running_var[0] + self.eps).sqrt();
                x.mapv(|v| (v - self.running_mean[0]) / s)
            }
            NormMode::PerChannel => {
                let s = self.running_var.mapv(|v| (v + self.eps).sqrt());
                (&x - &self.running_mean) / &s
            }
        };
        Ok(self.scale_shift(&x_hat))
    }

    /// In [`Mode::Train`] normalizes with batch statistics and updates the running
    /// estimates; in [`Mode::Infer`] behaves like [`Self::apply`].
    pub fn forward(&mut self, x: ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, NormCache), TensorError> {
        self.check(&x)?;
        if mode == Mode::Infer {
            let y = self.apply(x)?;
            let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
            let x_hat = match self.mode {
                NormMode::LayerWide => x.mapv(|v| (v - self.running_mean[0]) * inv_std[0]),
                NormMode::PerChannel => (&x - &self.running_mean) * &inv_std,
            };
            return Ok((y, NormCache { x_hat, inv_std }));
        }
        let (mean, var) = match self.mode {
            NormMode::LayerWide => {
                let m = x.len();
                if m < 2 {
                    return Err(TensorError::DegenerateBatch(
                        "layer-wide statistics need at least 2 entries".into(),
                    ));
                }
                let mean = x.sum() / m as f64;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                (Array1::from_elem(1, mean), Array1::from_elem(1, var))
            }
            NormMode::PerChannel => {
                if x.nrows() < 2 {
                    return Err(TensorError::DegenerateBatch(
                        "per-channel statistics need at least 2 rows".into(),
                    ));
                }
                let mean = x.mean_axis(Axis(0)).expect("nonempty");
                let var = (&x - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty");
                (mean, var)
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = match self.mode {
            NormMode::LayerWide => x.mapv(|v| (v - mean[0]) * inv_std[0]),
            NormMode::PerChannel => (&x - &mean) * &inv_std,
        };
        let mom = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - mom) + &mean * mom;
        self.running_var = &self.running_var * (1.0 - mom) + &var * mom;
        let y = self.scale_shift(&x_hat);
        Ok((y, NormCache { x_hat, inv_std }))
    }

    /// Backward through a train-mode forward.
    pub fn backward(&self, cache: &NormCache, dy: ArrayView2<f64>) -> (Array2<f64>, NormGrads) {
        let x_hat = &cache.x_hat;
        let gamma_grad = (&dy * x_hat).sum_axis(Axis(0));
        let beta_grad = dy.sum_axis(Axis(0));
        let dx_hat = &dy * &self.gamma;
        let dx = match self.mode {
            NormMode::LayerWide => {
                let m = dx_hat.len() as f64;
                let mean_d = dx_hat.sum() / m;
                let mean_dx = (&dx_hat * x_hat).sum() / m;
                let s = cache.inv_std[0];
                ndarray::Zip::from(&dx_hat)
                    .and(x_hat)
                    .map_collect(|&d, &xh| s * (d - mean_d - xh * mean_dx))
            }
            NormMode::PerChannel => {
                let mean_d = dx_hat.mean_axis(Axis(0)).expect("nonempty");
                let mean_dx = (&dx_hat * x_hat).mean_axis(Axis(0)).expect("nonempty");
                let centered = &dx_hat - &mean_d - &(x_hat * &mean_dx);
                centered * &cache.inv_std
            }
        };
        (
            dx,
            NormGrads {
                gamma: gamma_grad,
                beta: beta_grad,
            },
        )
    }
}
