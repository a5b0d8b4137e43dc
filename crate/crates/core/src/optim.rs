//! Bias-corrected Adam.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Parameters;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: Parameters + ?Sized>(
        params: &P,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| alloc::vec![0.0; t.len()])
            .collect();
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Applies one update in place.
    pub fn update<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g_tensors = grads.tensors();
        let mut p_tensors = params.tensors_mut();
        if g_tensors.len() != p_tensors.len() || p_tensors.len() != self.first.len() {
            return Err(shape_err(
                "adam tensor count",
                &[self.first.len()],
                &[g_tensors.len()],
            ));
        }
        for ((p, g), m) in p_tensors.iter().zip(&g_tensors).zip(&self.first) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(shape_err("adam gradient", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (k, p) in p_tensors.iter_mut().enumerate() {
            let g = g_tensors[k].data();
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("adam update".into()));
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and optimizer state.
pub fn adam_step<P: Parameters + Clone>(
    params: &P,
    grads: &P,
    state: &AdamState,
) -> Result<(P, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.update(&mut p, grads)?;
    Ok((p, s))
}
