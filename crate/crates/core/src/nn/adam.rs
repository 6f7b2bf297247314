use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{Param, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam configuration {self:?}")))
        }
    }
}

fn apply(lr: f64, cfg: &AdamConfig, t: u64, param: &mut [f64], grad: &[f64], m1: &mut [f64], m2: &mut [f64]) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..param.len() {
        let g = grad[k];
        m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g;
        m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g * g;
        let mh = m1[k] / bc1;
        let vh = m2[k] / bc2;
        param[k] -= lr * mh / (vh.sqrt() + cfg.epsilon);
    }
}

/// One bias-corrected Adam step on a single tensor; increments `config.step_count`.
pub fn adam_update(
    config: &mut AdamConfig,
    name: &str,
    param: &mut [f64],
    grad: &[f64],
    moment1: &mut [f64],
    moment2: &mut [f64],
) -> Result<()> {
    config.validate()?;
    let n = param.len();
    if grad.len() != n || moment1.len() != n || moment2.len() != n {
        return Err(Error::shape(
            format!("{n} values in grad and moments"),
            format!("{}/{}/{}", grad.len(), moment1.len(), moment2.len()),
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in `{name}` at index {i}")));
    }
    config.step_count += 1;
    apply(config.learning_rate, config, config.step_count, param, grad, moment1, moment2);
    Ok(())
}

/// Adam over every parameter of a model, with per-parameter learning rates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            moments: BTreeMap::new(),
        })
    }

    /// `lr_for` returns `None` for parameters that must not move. Gradients are
    /// checked for finiteness before any parameter is touched.
    pub fn step<M: Parameterized + ?Sized>(
        &mut self,
        model: &mut M,
        lr_for: &dyn Fn(&str) -> Option<f64>,
    ) -> Result<()> {
        let mut bad = None;
        model.visit("", &mut |name, p: &Param| {
            if bad.is_none() && lr_for(name).is_some() {
                if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                    bad = Some(Error::Numeric(format!("non-finite gradient in `{name}` at index {i}")));
                }
            }
        });
        if let Some(e) = bad {
            return Err(e);
        }
        self.config.step_count += 1;
        let t = self.config.step_count;
        let cfg = self.config;
        let moments = &mut self.moments;
        model.visit_mut("", &mut |name, p: &mut Param| {
            let Some(lr) = lr_for(name) else { return };
            let n = p.grad.len();
            let (m1, m2) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            apply(lr, &cfg, t, p.value.data_mut(), &p.grad, m1, m2);
        });
        Ok(())
    }
}
