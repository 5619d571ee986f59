use serde::{Deserialize, Serialize};

use super::network::{Gradients, Parameterized};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn for_model<M: Parameterized + ?Sized>(config: AdamConfig, model: &M) -> Self {
        AdamState::new(config, &model.params())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using each tensor's stored gradient
    /// (a missing gradient counts as zero). Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], names: &[String], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("Adam parameter groups", &[self.m.len()], &[params.len()]));
        }
        let mut bad = Vec::new();
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::shape("Adam parameter group", &[self.m[i].len()], p.shape()));
            }
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    bad.push(names.get(i).cloned().unwrap_or_else(|| format!("group{i}")));
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::NonFiniteGradients(bad));
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(|g| g.to_vec()) else {
                // zero gradient: moments decay, update is m_hat / (sqrt(v_hat) + eps)
                let (m, v) = (&mut self.m[i], &mut self.v[i]);
                let data = p.data_mut();
                for j in 0..data.len() {
                    m[j] *= beta1;
                    v[j] *= beta2;
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    data[j] -= lr * mh / (vh.sqrt() + eps);
                }
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                data[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Load `grads` into `model` and apply one update at learning rate `lr`.
    pub fn update<M: Parameterized + ?Sized>(&mut self, model: &mut M, grads: &Gradients, lr: f64) -> Result<()> {
        let names = model.param_names();
        model.load_grads(grads)?;
        let mut params = model.params_mut();
        let r = self.step(&mut params, &names, lr);
        for p in params.iter_mut() {
            p.clear_grad();
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        for _ in 0..5 {
            p.set_grad(vec![0.0; 3]).unwrap();
            st.step(&mut [&mut p], &["p".into()], 0.1).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0, 3.5]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(
            AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            &[&p],
        );
        p.set_grad(vec![1.0]).unwrap();
        st.step(&mut [&mut p], &["x".into()], 0.1).unwrap();
        // m_hat = 1, v_hat = 1  =>  delta = 0.1 / (1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut a = Tensor::vector(vec![0.3, 0.3]);
        let mut st = AdamState::new(AdamConfig::default(), &[&a]);
        for k in 0..10 {
            let g = (k as f64 * 0.7).sin();
            a.set_grad(vec![g, g]).unwrap();
            st.step(&mut [&mut a], &["a".into()], 1e-2).unwrap();
        }
        assert_eq!(a.data()[0].to_bits(), a.data()[1].to_bits());
    }

    #[test]
    fn non_finite_gradient_names_the_group() {
        let mut a = scalar(1.0);
        let mut b = scalar(2.0);
        let mut st = AdamState::new(AdamConfig::default(), &[&a, &b]);
        a.set_grad(vec![0.5]).unwrap();
        b.set_grad(vec![f64::NAN]).unwrap();
        let err = st
            .step(&mut [&mut a, &mut b], &["enc".into(), "dec".into()], 1e-3)
            .unwrap_err();
        match err {
            Error::NonFiniteGradients(groups) => assert_eq!(groups, vec!["dec".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(st.step_count(), 0);
    }
}
