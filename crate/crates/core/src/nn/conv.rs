//! Plain 2-D convolution blocks (conv, rectifier, 2x2 max pool) over
//! channel-major `[C, H, W]` feature maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{join, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolution with "same"-style padding `kernel / 2`, then a rectifier, then 2x2 max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub spec: ConvSpec,
    pub weight: Param,
    pub bias: Param,
}

pub struct ConvCache {
    input: Vec<f64>,
    in_shape: MapShape,
    conv_shape: MapShape,
    /// Rectified convolution output.
    activ: Vec<f64>,
    argmax: Vec<usize>,
}

impl ConvBlock {
    pub fn new<R: Rng>(spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        ConvBlock {
            spec,
            weight: Param::new(Tensor::uniform_fan_in(
                &[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
                fan_in,
                rng,
            )),
            bias: Param::new(Tensor::uniform_fan_in(&[spec.out_channels], fan_in, rng)),
        }
    }

    fn conv_shape(&self, s: MapShape) -> MapShape {
        let pad = self.spec.kernel / 2;
        let k = self.spec.kernel;
        let st = self.spec.stride;
        MapShape {
            channels: self.spec.out_channels,
            height: (s.height + 2 * pad - k) / st + 1,
            width: (s.width + 2 * pad - k) / st + 1,
        }
    }

    pub fn output_shape(&self, s: MapShape) -> MapShape {
        let c = self.conv_shape(s);
        MapShape {
            channels: c.channels,
            height: c.height / 2,
            width: c.width / 2,
        }
    }

    pub fn forward(&self, x: &[f64], s: MapShape) -> Result<(Vec<f64>, ConvCache)> {
        if s.channels != self.spec.in_channels || x.len() != s.len() {
            return Err(Error::shape(
                format!("{} channels, {} values", self.spec.in_channels, s.len()),
                format!("{} channels, {} values", s.channels, x.len()),
            ));
        }
        let cs = self.conv_shape(s);
        if cs.height < 2 || cs.width < 2 {
            return Err(Error::shape("feature map of at least 2x2 before pooling", format!("{}x{}", cs.height, cs.width)));
        }
        let mut conv = vec![0.0; cs.len()];
        let (k, st, pad) = (self.spec.kernel, self.spec.stride, self.spec.kernel / 2);
        let w = self.weight.w();
        let plane_out = cs.height * cs.width;
        for oc in 0..cs.channels {
            let out = &mut conv[oc * plane_out..(oc + 1) * plane_out];
            out.iter_mut().for_each(|v| *v = self.bias.w()[oc]);
            for ic in 0..s.channels {
                let inp = &x[ic * s.height * s.width..(ic + 1) * s.height * s.width];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((oc * s.channels + ic) * k + ky) * k + kx];
                        let (ox0, ox1) = valid_range(cs.width, s.width, kx, st, pad);
                        for oy in 0..cs.height {
                            let iy = (oy * st + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= s.height {
                                continue;
                            }
                            let irow = &inp[iy as usize * s.width..(iy as usize + 1) * s.width];
                            let orow = &mut out[oy * cs.width..(oy + 1) * cs.width];
                            for ox in ox0..ox1 {
                                orow[ox] += wv * irow[ox * st + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        conv.iter_mut().for_each(|v| *v = v.max(0.0));
        let os = self.output_shape(s);
        let mut pooled = vec![0.0; os.len()];
        let mut argmax = vec![0; os.len()];
        for c in 0..os.channels {
            for py in 0..os.height {
                for px in 0..os.width {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = c * plane_out + (2 * py + dy) * cs.width + 2 * px + dx;
                            if conv[idx] > best {
                                best = conv[idx];
                                bi = idx;
                            }
                        }
                    }
                    let o = (c * os.height + py) * os.width + px;
                    pooled[o] = best;
                    argmax[o] = bi;
                }
            }
        }
        let cache = ConvCache {
            input: x.to_vec(),
            in_shape: s,
            conv_shape: cs,
            activ: conv,
            argmax,
        };
        Ok((pooled, cache))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the block input.
    pub fn backward(&mut self, cache: &ConvCache, dy: &[f64]) -> Vec<f64> {
        let s = cache.in_shape;
        let cs = cache.conv_shape;
        let mut dconv = vec![0.0; cs.len()];
        for (o, &g) in dy.iter().enumerate() {
            let idx = cache.argmax[o];
            if cache.activ[idx] > 0.0 {
                dconv[idx] += g;
            }
        }
        let (k, st, pad) = (self.spec.kernel, self.spec.stride, self.spec.kernel / 2);
        let plane_out = cs.height * cs.width;
        let plane_in = s.height * s.width;
        let mut dx = vec![0.0; s.len()];
        let w = self.weight.value.data();
        for oc in 0..cs.channels {
            let dout = &dconv[oc * plane_out..(oc + 1) * plane_out];
            self.bias.grad[oc] += dout.iter().sum::<f64>();
            for ic in 0..s.channels {
                let inp = &cache.input[ic * plane_in..(ic + 1) * plane_in];
                let din = &mut dx[ic * plane_in..(ic + 1) * plane_in];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((oc * s.channels + ic) * k + ky) * k + kx;
                        let wv = w[widx];
                        let (ox0, ox1) = valid_range(cs.width, s.width, kx, st, pad);
                        let mut gw = 0.0;
                        for oy in 0..cs.height {
                            let iy = (oy * st + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= s.height {
                                continue;
                            }
                            let base = iy as usize * s.width;
                            let drow = &dout[oy * cs.width..(oy + 1) * cs.width];
                            for ox in ox0..ox1 {
                                let ii = base + ox * st + kx - pad;
                                gw += drow[ox] * inp[ii];
                                din[ii] += wv * drow[ox];
                            }
                        }
                        self.weight.grad[widx] += gw;
                    }
                }
            }
        }
        dx
    }
}

/// Output columns `ox` whose input column `ox*stride + kx - pad` lies in `[0, in_w)`.
fn valid_range(out_w: usize, in_w: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    if in_w + pad <= kx {
        return (lo, lo);
    }
    let hi = ((in_w - 1 + pad - kx) / stride + 1).min(out_w);
    (lo, hi.max(lo))
}

impl Parameterized for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct per-output evaluation with explicit bounds checks.
    fn naive_conv(block: &ConvBlock, x: &[f64], s: MapShape) -> Vec<f64> {
        let cs = block.conv_shape(s);
        let (k, st, pad) = (block.spec.kernel, block.spec.stride, block.spec.kernel as isize / 2);
        let w = block.weight.w();
        let mut out = vec![0.0; cs.len()];
        for oc in 0..cs.channels {
            for oy in 0..cs.height {
                for ox in 0..cs.width {
                    let mut acc = block.bias.w()[oc];
                    for ic in 0..s.channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * st + ky) as isize - pad;
                                let ix = (ox * st + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.height && (ix as usize) < s.width {
                                    acc += w[((oc * s.channels + ic) * k + ky) * k + kx]
                                        * x[(ic * s.height + iy as usize) * s.width + ix as usize];
                                }
                            }
                        }
                    }
                    out[(oc * cs.height + oy) * cs.width + ox] = acc.max(0.0);
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, h, w) in [(1, 6, 7), (2, 9, 8), (2, 6, 6)] {
            let spec = ConvSpec { in_channels: 2, out_channels: 3, kernel: 3, stride };
            let block = ConvBlock::new(spec, &mut rng);
            let s = MapShape { channels: 2, height: h, width: w };
            let x: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (pooled, cache) = block.forward(&x, s).unwrap();
            let naive = naive_conv(&block, &x, s);
            for (a, b) in cache.activ.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
            let os = block.output_shape(s);
            assert_eq!(pooled.len(), os.len());
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ConvBlock::new(ConvSpec { in_channels: 3, out_channels: 2, kernel: 3, stride: 1 }, &mut rng);
        let s = MapShape { channels: 1, height: 4, width: 4 };
        assert!(matches!(block.forward(&vec![0.0; 16], s), Err(Error::Shape { .. })));
    }
}
