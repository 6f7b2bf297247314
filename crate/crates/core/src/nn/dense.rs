use rand::Rng;

use super::tensor::{join, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b`, with `W` stored as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            weight: Param::new(Tensor::uniform_fan_in(&[output, input], input, rng)),
            bias: Param::new(Tensor::uniform_fan_in(&[output], input, rng)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Param::zeros(&[output, input]),
            bias: Param::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                format!("input of length {}", self.input_dim()),
                x.len(),
            ));
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.input_dim();
        self.weight
            .w()
            .chunks_exact(n_in)
            .zip(self.bias.w())
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let n_in = self.input_dim();
        let mut dx = vec![0.0; n_in];
        let w = self.weight.value.data();
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.bias.grad[o] += g;
            let row = &w[o * n_in..(o + 1) * n_in];
            let grow = &mut self.weight.grad[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

impl Parameterized for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Functional form of the dense forward pass over raw weights.
pub fn fully_connected_forward(weights: &Tensor, bias: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let &[out, inp] = weights.shape() else {
        return Err(Error::shape("2-D weight matrix", format!("{:?}", weights.shape())));
    };
    if bias.len() != out {
        return Err(Error::shape(format!("bias of length {out}"), bias.len()));
    }
    let layer = Dense {
        weight: Param::new(weights.clone()),
        bias: Param::new(bias.clone()),
    };
    debug_assert_eq!(layer.input_dim(), inp);
    layer.forward(x)
}

/// Stack of dense layers with a rectifier between consecutive layers; the final layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// When true, the final layer's output is also rectified.
    pub relu_last: bool,
}

pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(input: usize, sizes: &[usize], relu_last: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut d = input;
        for &s in sizes {
            layers.push(Dense::new(d, s, rng));
            d = s;
        }
        Mlp { layers, relu_last }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    fn rectified(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if self.rectified(i) {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            cache.inputs.push(h);
            h = if self.rectified(i) {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &[f64]) -> Vec<f64> {
        let mut g = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if self.rectified(i) {
                for (gv, z) in g.iter_mut().zip(&cache.pre[i]) {
                    if *z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            g = self.layers[i].backward(&cache.inputs[i], &g);
        }
        g
    }
}

impl Parameterized for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let w = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[3]);
        assert_eq!(fully_connected_forward(&w, &b, &[1.5, -2.0, 3.0]).unwrap(), vec![1.5, -2.0, 3.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(vec![0.5]);
        // 1*2 + 1*3 + 0.5
        let oracle = 1.0 * 2.0 + 1.0 * 3.0 + 0.5;
        assert_eq!(fully_connected_forward(&w, &b, &[2.0, 3.0]).unwrap(), vec![oracle]);
        assert_eq!(oracle, 5.5);
    }

    #[test]
    fn zero_weights_give_bias() {
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::from_vec(vec![0.7, -0.2]);
        assert_eq!(fully_connected_forward(&w, &b, &[9.0; 4]).unwrap(), vec![0.7, -0.2]);
    }

    #[test]
    fn dimension_mismatch() {
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(fully_connected_forward(&w, &b, &[1.0; 3]), Err(Error::Shape { .. })));
        assert!(fully_connected_forward(&w, &Tensor::zeros(&[3]), &[1.0; 4]).is_err());
    }
}
