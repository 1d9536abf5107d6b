//! Adam and the soft-thresholding proximal step.

use std::collections::BTreeMap;

use crate::array::DenseArray;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be finite and > 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam_eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Moment estimates of a bias-corrected Adam run.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, DenseArray>,
    v: BTreeMap<String, DenseArray>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&DenseArray> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&DenseArray> {
        self.v.get(name)
    }
}

/// One Adam update of every parameter that has a gradient. Parameters are
/// updated in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut BTreeMap<String, DenseArray>,
    grads: &BTreeMap<String, DenseArray>,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid("grads", format!("no parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                node: 0,
                expected: p.shape().to_vec(),
                actual: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| DenseArray::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| DenseArray::zeros(g.shape()));
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Elementwise `sign(r)·max(|r| − τ, 0)`, the minimizer of
/// `(r − s)² + 2τ|s|`.
pub fn soft_threshold(residual: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau", "threshold must be >= 0"));
    }
    Ok(residual
        .iter()
        .map(|&r| r.signum() * (r.abs() - tau).max(0.0))
        .map(|s| if s == 0.0 { 0.0 } else { s })
        .collect())
}
