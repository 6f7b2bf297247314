use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` array with shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("positive dimensions", format!("{shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                format!("{n} values for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Uniform in `[-s, s]` with `s = 1/sqrt(fan_in)`.
    pub fn uniform_fan_in<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-s..=s)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!("{what}: non-finite value at index {i}"))),
        }
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(Tensor::zeros(shape))
    }

    pub fn w(&self) -> &[f64] {
        self.value.data()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Models expose their parameters under dotted names.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn named_tensors<M: Parameterized + ?Sized>(model: &M, prefix: &str) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    model.visit(prefix, &mut |name, p| {
        out.insert(name.to_string(), p.value.clone());
    });
    out
}

pub fn zero_grads<M: Parameterized + ?Sized>(model: &mut M) {
    model.visit_mut("", &mut |_, p| p.zero_grad());
}

pub fn param_count<M: Parameterized + ?Sized>(model: &M) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, p| n += p.value.len());
    n
}

/// Copies values from `tensors` into the model. Every model parameter must be
/// present with a matching shape; extra entries in `tensors` are ignored.
pub fn load_tensors<M: Parameterized + ?Sized>(
    model: &mut M,
    prefix: &str,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut err = None;
    model.visit_mut(prefix, &mut |name, p| {
        if err.is_some() {
            return;
        }
        match tensors.get(name) {
            None => err = Some(Error::Config(format!("parameter `{name}` missing from source"))),
            Some(t) if t.shape() != p.value.shape() => {
                err = Some(Error::Config(format!(
                    "parameter `{name}`: shape {:?} incompatible with {:?}",
                    t.shape(),
                    p.value.shape()
                )))
            }
            Some(t) => p.value = t.clone(),
        }
    });
    err.map_or(Ok(()), Err)
}
