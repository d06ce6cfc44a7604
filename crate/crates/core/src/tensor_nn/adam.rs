use serde::{Deserialize, Serialize};

use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A named parameter tensor (flattened) and its gradient.
pub struct ParamSlot<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
}

/// Bias-corrected Adam. Moment buffers are allocated on the first step and
/// bound positionally to the slots passed in.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [ParamSlot<'_>]) -> Result<(), TensorError> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.values.len()], vec![0.0; p.values.len()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "optimizer holds {} tensors, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (p, (m, _)) in params.iter().zip(&self.moments) {
            if p.values.len() != p.grads.len() || p.values.len() != m.len() {
                return Err(TensorError::Contract(format!(
                    "shape mismatch for parameter tensor {}",
                    p.name
                )));
            }
            if p.grads.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NumericFault { tensor: p.name.clone() });
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            for i in 0..p.values.len() {
                let g = p.grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn slot<'a>(v: &'a mut [f64], g: &'a [f64]) -> ParamSlot<'a> {
        ParamSlot {
            name: "w".into(),
            values: v,
            grads: g,
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut w = vec![1.0, -2.0];
        for _ in 0..5 {
            adam.step(&mut [slot(&mut w, &[0.0, 0.0])]).unwrap();
        }
        assert_eq!(w, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut w = vec![0.5];
        adam.step(&mut [slot(&mut w, &[1.0])]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5 - 1e-3, epsilon = 1e-10);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut w = vec![0.0, 0.0];
        for _ in 0..100 {
            adam.step(&mut [slot(&mut w, &[2.0, -0.5])]).unwrap();
        }
        assert!(w[0] < -0.05);
        assert!(w[1] > 0.05);
    }

    #[test]
    fn nan_gradient_names_tensor() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let err = adam
            .step(&mut [
                slot(&mut a, &[1.0]),
                ParamSlot {
                    name: "view1.layer0.weight".into(),
                    values: &mut b,
                    grads: &[f64::NAN],
                },
            ])
            .unwrap_err();
        assert_eq!(
            err,
            TensorError::NumericFault {
                tensor: "view1.layer0.weight".into()
            }
        );
        assert_eq!(a, vec![0.0], "no partial update on fault");
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut w = vec![0.0, 0.0];
        adam.step(&mut [slot(&mut w, &[1.0, 1.0])]).unwrap();
        let mut short = vec![0.0];
        assert!(adam.step(&mut [slot(&mut short, &[1.0])]).is_err());
    }
}
