//! Forget-gate LSTM cells (no peepholes) and layered stacks with optional
//! residual connections.
//!
//! Gate rows in the stacked weight matrices are ordered input, forget,
//! output, candidate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::dot;
use super::dropout::Dropout;
use super::tensor::{join, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters of one LSTM cell: `w_ih` is `[4H, D]`, `w_hh` is `[4H, H]`, `bias` is `[4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
}

impl LstmCellParams {
    pub fn new<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        // fan-in counts both the input and the recurrent connections.
        let fan_in = input_size + hidden_size;
        LstmCellParams {
            w_ih: Param::new(Tensor::uniform_fan_in(&[4 * hidden_size, input_size], fan_in, rng)),
            w_hh: Param::new(Tensor::uniform_fan_in(&[4 * hidden_size, hidden_size], fan_in, rng)),
            bias: Param::new(Tensor::uniform_fan_in(&[4 * hidden_size], fan_in, rng)),
        }
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmCellParams {
            w_ih: Param::zeros(&[4 * hidden_size, input_size]),
            w_hh: Param::zeros(&[4 * hidden_size, hidden_size]),
            bias: Param::zeros(&[4 * hidden_size]),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.value.shape()[1]
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.value.shape()[1]
    }

    fn check(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
        let (d, hs) = (self.input_size(), self.hidden_size());
        if x.len() != d {
            return Err(Error::shape(format!("x of length {d}"), x.len()));
        }
        if h.len() != hs {
            return Err(Error::shape(format!("h_prev of length {hs}"), h.len()));
        }
        if c.len() != hs {
            return Err(Error::shape(format!("c_prev of length {hs}"), c.len()));
        }
        Ok(())
    }

    fn gates(&self, x: &[f64], h: &[f64]) -> StepCache {
        let hs = self.hidden_size();
        let d = self.input_size();
        let wi = self.w_ih.w();
        let wh = self.w_hh.w();
        let b = self.bias.w();
        let mut z = vec![0.0; 4 * hs];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = b[r] + dot(&wi[r * d..(r + 1) * d], x) + dot(&wh[r * hs..(r + 1) * hs], h);
        }
        let i = z[..hs].iter().map(|&v| logistic(v)).collect();
        let f = z[hs..2 * hs].iter().map(|&v| logistic(v)).collect();
        let o = z[2 * hs..3 * hs].iter().map(|&v| logistic(v)).collect();
        let g = z[3 * hs..].iter().map(|&v| v.tanh()).collect();
        StepCache {
            i,
            f,
            o,
            g,
            c: Vec::new(),
            tanh_c: Vec::new(),
        }
    }
}

impl Parameterized for LstmCellParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

struct StepCache {
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    params: &LstmCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check(x, h_prev, c_prev)?;
    let s = params.gates(x, h_prev);
    let c: Vec<f64> = (0..h_prev.len())
        .map(|k| s.f[k] * c_prev[k] + s.i[k] * s.g[k])
        .collect();
    let h = c.iter().zip(&s.o).map(|(c, o)| o * c.tanh()).collect();
    Ok((h, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmStackConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub residual: bool,
    /// Inverted dropout applied between layers during training.
    pub dropout_p: f64,
}

impl LstmStackConfig {
    pub fn validate(&self, input_size: usize) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 {
            return Err(Error::Config("LSTM stack needs at least one layer of positive width".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if self.residual && input_size != self.hidden_size {
            return Err(Error::Config(format!(
                "residual stack needs input size {input_size} == hidden size {}",
                self.hidden_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub config: LstmStackConfig,
    pub layers: Vec<LstmCellParams>,
}

struct LayerCache {
    inputs: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

pub struct StackCache {
    layers: Vec<LayerCache>,
    masks: Vec<Option<Vec<f64>>>,
}

impl LstmStack {
    pub fn new<R: Rng>(config: LstmStackConfig, input_size: usize, rng: &mut R) -> Result<Self> {
        config.validate(input_size)?;
        let layers = (0..config.num_layers)
            .map(|l| {
                let d = if l == 0 { input_size } else { config.hidden_size };
                LstmCellParams::new(d, config.hidden_size, rng)
            })
            .collect();
        Ok(LstmStack { config, layers })
    }

    pub fn zeros(config: LstmStackConfig, input_size: usize) -> Result<Self> {
        config.validate(input_size)?;
        let layers = (0..config.num_layers)
            .map(|l| {
                let d = if l == 0 { input_size } else { config.hidden_size };
                LstmCellParams::zeros(d, config.hidden_size)
            })
            .collect();
        Ok(LstmStack { config, layers })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    /// Inference forward pass; initial `h` and `c` are zero.
    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_cached::<rand_chacha::ChaCha8Rng>(seq, None)?.0)
    }

    /// Forward pass retaining everything needed for backpropagation through time.
    /// `dropout` enables between-layer dropout with the configured probability.
    pub fn forward_cached<R: Rng>(
        &self,
        seq: &[Vec<f64>],
        mut dropout: Option<&mut R>,
    ) -> Result<(Vec<Vec<f64>>, StackCache)> {
        self.config.validate(self.input_size())?;
        if seq.is_empty() {
            return Err(Error::shape("non-empty sequence", 0));
        }
        let hs = self.config.hidden_size;
        let mut cache = StackCache {
            layers: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut xs: Vec<Vec<f64>> = seq.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = vec![0.0; hs];
            let mut c = vec![0.0; hs];
            let mut steps = Vec::with_capacity(xs.len());
            let mut ys = Vec::with_capacity(xs.len());
            for x in &xs {
                layer.check(x, &h, &c)?;
                let mut s = layer.gates(x, &h);
                let c_new: Vec<f64> = (0..hs).map(|k| s.f[k] * c[k] + s.i[k] * s.g[k]).collect();
                let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
                h = tanh_c.iter().zip(&s.o).map(|(t, o)| o * t).collect();
                c = c_new;
                s.c = c.clone();
                s.tanh_c = tanh_c;
                steps.push(s);
                let mut y = h.clone();
                if self.config.residual {
                    y.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                }
                ys.push(y);
            }
            cache.layers.push(LayerCache { inputs: xs, steps });
            let last = l + 1 == self.layers.len();
            let mask = match dropout.as_deref_mut() {
                Some(rng) if !last && self.config.dropout_p > 0.0 => {
                    let d = Dropout::new(self.config.dropout_p);
                    let m = d.sample_mask(ys.len() * hs, rng);
                    for (t, y) in ys.iter_mut().enumerate() {
                        for (k, v) in y.iter_mut().enumerate() {
                            *v *= m[t * hs + k];
                        }
                    }
                    Some(m)
                }
                _ => None,
            };
            cache.masks.push(mask);
            xs = ys;
        }
        Ok((xs, cache))
    }

    /// Backpropagates `dys` (one gradient per output timestep) through the stack,
    /// accumulating parameter gradients. Returns input gradients.
    pub fn backward(&mut self, cache: &StackCache, dys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hs = self.config.hidden_size;
        let residual = self.config.residual;
        let mut dy: Vec<Vec<f64>> = dys.to_vec();
        for l in (0..self.layers.len()).rev() {
            if let Some(m) = &cache.masks[l] {
                for (t, g) in dy.iter_mut().enumerate() {
                    for (k, v) in g.iter_mut().enumerate() {
                        *v *= m[t * hs + k];
                    }
                }
            }
            let lc = &cache.layers[l];
            let layer = &mut self.layers[l];
            let d = layer.input_size();
            let t_len = lc.inputs.len();
            let mut dxs = vec![vec![0.0; d]; t_len];
            let mut dh_next = vec![0.0; hs];
            let mut dc_next = vec![0.0; hs];
            let mut dz = vec![0.0; 4 * hs];
            for t in (0..t_len).rev() {
                let s = &lc.steps[t];
                let zero = vec![0.0; hs];
                let c_prev = if t > 0 { &lc.steps[t - 1].c } else { &zero };
                let h_prev: Vec<f64> = if t > 0 {
                    let p = &lc.steps[t - 1];
                    p.o.iter().zip(&p.tanh_c).map(|(o, tc)| o * tc).collect()
                } else {
                    zero.clone()
                };
                for k in 0..hs {
                    let dh = dy[t][k] + dh_next[k];
                    let d_o = dh * s.tanh_c[k];
                    let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                    let di = dc * s.g[k];
                    let dg = dc * s.i[k];
                    let df = dc * c_prev[k];
                    dc_next[k] = dc * s.f[k];
                    dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                    dz[hs + k] = df * s.f[k] * (1.0 - s.f[k]);
                    dz[2 * hs + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                    dz[3 * hs + k] = dg * (1.0 - s.g[k] * s.g[k]);
                }
                let x = &lc.inputs[t];
                let wi = layer.w_ih.value.data();
                let wh = layer.w_hh.value.data();
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                let dx = &mut dxs[t];
                for (r, &g) in dz.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    layer.bias.grad[r] += g;
                    let gi = &mut layer.w_ih.grad[r * d..(r + 1) * d];
                    let wir = &wi[r * d..(r + 1) * d];
                    for j in 0..d {
                        gi[j] += g * x[j];
                        dx[j] += g * wir[j];
                    }
                    let gh = &mut layer.w_hh.grad[r * hs..(r + 1) * hs];
                    let whr = &wh[r * hs..(r + 1) * hs];
                    for j in 0..hs {
                        gh[j] += g * h_prev[j];
                        dh_next[j] += g * whr[j];
                    }
                }
                if residual {
                    dx.iter_mut().zip(&dy[t]).for_each(|(a, b)| *a += b);
                }
            }
            dy = dxs;
        }
        dy
    }
}

impl Parameterized for LstmStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

/// Functional form: run `params` over `sequence` as configured.
pub fn lstm_stack_forward(
    config: LstmStackConfig,
    params: &[LstmCellParams],
    sequence: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if params.len() != config.num_layers {
        return Err(Error::Config(format!(
            "{} layer parameter sets for a {}-layer stack",
            params.len(),
            config.num_layers
        )));
    }
    let d = sequence.first().map_or(0, Vec::len);
    config.validate(d)?;
    let stack = LstmStack {
        config,
        layers: params.to_vec(),
    };
    stack.forward(sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(layers: usize, hidden: usize, residual: bool) -> LstmStackConfig {
        LstmStackConfig {
            num_layers: layers,
            hidden_size: hidden,
            residual,
            dropout_p: 0.0,
        }
    }

    fn set(p: &mut Param, v: &[f64]) {
        p.value.data_mut().copy_from_slice(v);
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmCellParams::zeros(3, 4);
        let (h, c) = lstm_cell_step(&p, &[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn scalar_hand_evaluation() {
        let mut p = LstmCellParams::zeros(1, 1);
        // rows: i, f, o, g
        set(&mut p.w_ih, &[0.5, -0.3, 0.8, 1.2]);
        set(&mut p.w_hh, &[0.1, 0.2, -0.4, 0.7]);
        set(&mut p.bias, &[0.05, 1.0, -0.2, 0.0]);
        let (x, h0, c0) = (0.9, 0.3, -0.6);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.5 * x + 0.1 * h0 + 0.05);
        let f = s(-0.3 * x + 0.2 * h0 + 1.0);
        let o = s(0.8 * x - 0.4 * h0 - 0.2);
        let g = f64::tanh(1.2 * x + 0.7 * h0);
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let (hh, cc) = lstm_cell_step(&p, &[x], &[h0], &[c0]).unwrap();
        assert!((hh[0] - h).abs() < 1e-14);
        assert!((cc[0] - c).abs() < 1e-14);
    }

    #[test]
    fn memory_retention_under_saturation() {
        let mut p = LstmCellParams::zeros(1, 1);
        set(&mut p.bias, &[-50.0, 50.0, 0.0, 0.0]);
        set(&mut p.w_ih, &[0.0, 0.0, 0.0, 1.0]);
        let c_prev = 1.0e3;
        let (_, c) = lstm_cell_step(&p, &[0.7], &[0.0], &[c_prev]).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let oracle = s(50.0) * c_prev + s(-50.0) * f64::tanh(0.7);
        assert!((c[0] - oracle).abs() < 1e-9);
        assert!((c[0] - c_prev).abs() / c_prev < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = LstmCellParams::zeros(3, 2);
        let e = lstm_cell_step(&p, &[1.0; 2], &[0.0; 2], &[0.0; 2]).unwrap_err();
        assert!(e.to_string().contains("length 3"), "{e}");
        assert!(lstm_cell_step(&p, &[1.0; 3], &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn residual_zero_stack_is_identity() {
        let stack = LstmStack::zeros(cfg(3, 4, true), 4).unwrap();
        let seq: Vec<Vec<f64>> = (0..5).map(|t| (0..4).map(|k| (t * 4 + k) as f64 * 0.37 - 2.0).collect()).collect();
        assert_eq!(stack.forward(&seq).unwrap(), seq);
        let plain = LstmStack::zeros(cfg(2, 4, false), 4).unwrap();
        assert!(plain.forward(&seq).unwrap().iter().all(|h| h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn residual_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(LstmStack::new(cfg(2, 4, true), 3, &mut rng), Err(Error::Config(_))));
        let params = vec![LstmCellParams::zeros(3, 4)];
        assert!(matches!(
            lstm_stack_forward(cfg(1, 4, true), &params, &[vec![0.0; 3]]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stack_matches_manual_cell_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let stack = LstmStack::new(cfg(2, 3, false), 2, &mut rng).unwrap();
        let seq: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let mut xs = seq.clone();
        for layer in &stack.layers {
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            let mut out = Vec::new();
            for x in &xs {
                (h, c) = lstm_cell_step(layer, x, &h, &c).unwrap();
                out.push(h.clone());
            }
            xs = out;
        }
        assert_eq!(stack.forward(&seq).unwrap(), xs);
    }

    #[test]
    fn hidden_state_strictly_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut p = LstmCellParams::new(3, 5, &mut rng);
            p.w_ih.value.data_mut().iter_mut().for_each(|v| *v *= 10.0);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c0: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (h, _) = lstm_cell_step(&p, &x, &[0.1; 5], &c0).unwrap();
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }
}
