//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tensor::{zero_grads, Param, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Probe at most this many entries per parameter block (all when `None`).
    pub max_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub probed: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&BlockReport> {
        self.blocks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// `loss(model, with_grad)` evaluates the scalar loss at the model's current
/// parameters; when `with_grad` is true it must also accumulate analytic
/// gradients into the parameters' `grad` buffers.
pub fn finite_difference_check<M, F>(
    model: &mut M,
    mut loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    zero_grads(model);
    let base = loss(model, true)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base} at the unperturbed point")));
    }
    let mut analytic: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut names = Vec::new();
    model.visit("", &mut |name, p: &Param| {
        analytic.insert(name.to_string(), p.grad.clone());
        names.push(name.to_string());
    });

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut blocks = Vec::new();
    for name in names {
        let grads = &analytic[&name];
        let n = grads.len();
        let indices: Vec<usize> = match opts.max_per_block {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut worst = BlockReport {
            name: name.clone(),
            probed: indices.len(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
        };
        for idx in indices {
            let original = get(model, &name, idx);
            set(model, &name, idx, original + h);
            let plus = loss(model, false)?;
            set(model, &name, idx, original - h);
            let minus = loss(model, false)?;
            set(model, &name, idx, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss non-finite when probing `{name}`[{idx}] at {original} ± {h}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let e = relative_error(grads[idx], numeric);
            if e >= worst.rel_error {
                worst = BlockReport {
                    rel_error: e,
                    worst_index: idx,
                    analytic: grads[idx],
                    numeric,
                    ..worst
                };
            }
        }
        blocks.push(worst);
    }
    let max_rel_error = blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
    })
}

fn get<M: Parameterized>(model: &M, name: &str, idx: usize) -> f64 {
    let mut v = f64::NAN;
    model.visit("", &mut |n, p| {
        if n == name {
            v = p.value.data()[idx];
        }
    });
    v
}

fn set<M: Parameterized>(model: &mut M, name: &str, idx: usize, value: f64) {
    model.visit_mut("", &mut |n, p| {
        if n == name {
            p.value.data_mut()[idx] = value;
        }
    });
}
