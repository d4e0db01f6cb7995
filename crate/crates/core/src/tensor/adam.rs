use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update `p ← p − lr·m̂/(√v̂ + ε)`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} moments, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "adam: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let (lr, eps) = (T::of(lr), T::of(eps));
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step([&mut p], &[Tensor::zeros(&[3])], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = Tensor::<f64>::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step([&mut p], &[Tensor::scalar(1.0)], 0.1).unwrap();
        // m̂ = v̂ = 1, update = 0.1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.item().unwrap() - expected).abs() < 1e-15);
        assert!((p.item().unwrap() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = Tensor::<f64>::scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        let lr = 0.01;
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p.item().unwrap();
            adam.step([&mut p], &[Tensor::scalar(3.0)], lr).unwrap();
            last = before - p.item().unwrap();
        }
        assert!((last - lr).abs() < 1e-9, "step {last}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam.step([&mut p], &[Tensor::zeros(&[3])], 0.1).is_err());
    }
}
