//! Small trainable feature extractors standing in for pretrained image and
//! audio networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::ConvCache;
use crate::nn::tensor::{join, Param, Parameterized};
use crate::nn::{ConvBlock, ConvSpec, Dense, MapShape};
use crate::preprocess::{Image, FRAME_SIZE};

pub const AUDIO_EMBEDDING_DIM: usize = 128;
pub const PATCH_FRAMES: usize = 96;
pub const PATCH_BANDS: usize = 64;

/// Per-image feature extractor. Output width is fixed for an instance.
pub trait ImageBackbone {
    fn feature_dim(&self) -> usize;
    fn features(&self, image: &Image) -> Result<Vec<f64>>;
    fn trainable(&self) -> bool;
}

/// Per-patch audio encoder producing 128-d embeddings.
pub trait AudioEncoder {
    fn embed(&self, patch: &[f64]) -> Result<Vec<f64>>;
    fn trainable(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStackConfig {
    pub input: MapShape,
    pub channels: Vec<usize>,
    pub first_stride: usize,
    pub feature_dim: usize,
    pub trainable: bool,
}

impl ConvStackConfig {
    pub fn image_default() -> Self {
        ConvStackConfig {
            input: MapShape {
                channels: 3,
                height: FRAME_SIZE,
                width: FRAME_SIZE,
            },
            channels: vec![8, 16, 32, 32],
            first_stride: 2,
            feature_dim: 256,
            trainable: false,
        }
    }

    pub fn audio_default() -> Self {
        ConvStackConfig {
            input: MapShape {
                channels: 1,
                height: PATCH_FRAMES,
                width: PATCH_BANDS,
            },
            channels: vec![8, 16, 32],
            first_stride: 1,
            feature_dim: AUDIO_EMBEDDING_DIM,
            trainable: false,
        }
    }

    fn specs(&self) -> Vec<ConvSpec> {
        let mut c_in = self.input.channels;
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = ConvSpec {
                    in_channels: c_in,
                    out_channels: c,
                    kernel: 3,
                    stride: if i == 0 { self.first_stride } else { 1 },
                };
                c_in = c;
                s
            })
            .collect()
    }
}

/// Convolution blocks, flatten, then a rectified dense projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub config: ConvStackConfig,
    pub blocks: Vec<ConvBlock>,
    pub fc: Dense,
}

pub struct ConvStackCache {
    blocks: Vec<ConvCache>,
    flat: Vec<f64>,
    pre: Vec<f64>,
}

impl ConvStack {
    pub fn new<R: Rng>(config: ConvStackConfig, rng: &mut R) -> Result<Self> {
        if config.channels.is_empty() || config.feature_dim == 0 || config.first_stride == 0 {
            return Err(Error::Config("conv stack needs blocks, a stride and a feature width".into()));
        }
        let blocks: Vec<ConvBlock> = config.specs().into_iter().map(|s| ConvBlock::new(s, rng)).collect();
        let mut shape = config.input;
        for b in &blocks {
            shape = b.output_shape(shape);
            if shape.height == 0 || shape.width == 0 {
                return Err(Error::Config(format!("conv stack too deep for input {:?}", config.input)));
            }
        }
        let fc = Dense::new(shape.len(), config.feature_dim, rng);
        Ok(ConvStack { config, blocks, fc })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ConvStackCache)> {
        let mut shape = self.config.input;
        if x.len() != shape.len() {
            return Err(Error::shape(format!("{shape:?}"), format!("{} values", x.len())));
        }
        let mut h = x.to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(&h, shape)?;
            shape = b.output_shape(shape);
            caches.push(cache);
            h = out;
        }
        let pre = self.fc.forward(&h)?;
        let y = pre.iter().map(|v| v.max(0.0)).collect();
        Ok((
            y,
            ConvStackCache {
                blocks: caches,
                flat: h,
                pre,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvStackCache, dy: &[f64]) -> Vec<f64> {
        let dpre: Vec<f64> = dy
            .iter()
            .zip(&cache.pre)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let mut g = self.fc.backward(&cache.flat, &dpre);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g);
        }
        g
    }
}

impl Parameterized for ConvStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("conv{i}")), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

impl ImageBackbone for ConvStack {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn features(&self, image: &Image) -> Result<Vec<f64>> {
        let s = self.config.input;
        if (image.height, image.width, image.channels) != (s.height, s.width, s.channels) {
            return Err(Error::shape(
                format!("{}x{}x{} frame", s.height, s.width, s.channels),
                format!("{}x{}x{}", image.height, image.width, image.channels),
            ));
        }
        self.forward(&image.to_chw())
    }

    fn trainable(&self) -> bool {
        self.config.trainable
    }
}

impl AudioEncoder for ConvStack {
    fn embed(&self, patch: &[f64]) -> Result<Vec<f64>> {
        if patch.len() != self.config.input.len() {
            return Err(Error::shape(
                format!("{}x{} patch", self.config.input.height, self.config.input.width),
                format!("{} values", patch.len()),
            ));
        }
        self.forward(patch)
    }

    fn trainable(&self) -> bool {
        self.config.trainable
    }
}
