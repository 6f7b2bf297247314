//! Three rectified dense layers over the transcript embedding, then the trait
//! head. Stage 2 drops the head and uses the third layer's output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::SubnetConfig;
use crate::error::{Error, Result};
use crate::nn::dense::MlpCache;
use crate::nn::head::sigmoid_backward;
use crate::nn::lstm::logistic;
use crate::nn::tensor::{join, Param, Parameterized};
use crate::nn::{Dense, Dropout, Mlp};
use crate::preprocess::EMBEDDING_DIM;
use crate::traits::TraitVector;

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptSubnet {
    pub config: SubnetConfig,
    pub fc: Mlp,
    pub head: Mlp,
}

pub struct TranscriptCache {
    fc: MlpCache,
    mask: Option<Vec<f64>>,
    head: MlpCache,
    pub probs: Vec<f64>,
}

impl TranscriptSubnet {
    pub(crate) fn new<R: Rng>(config: SubnetConfig, rng: &mut R) -> Result<Self> {
        let fc = Mlp::new(EMBEDDING_DIM, &config.fc_layers, true, rng);
        let head = Mlp::new(fc.output_dim(), &config.head, false, rng);
        Ok(TranscriptSubnet { config, fc, head })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != EMBEDDING_DIM {
            return Err(Error::shape(format!("{EMBEDDING_DIM}-d embedding"), x.len()));
        }
        Ok(())
    }

    pub fn stage1_cached(&self, x: &[f64], rng: Option<&mut ChaCha8Rng>) -> Result<TranscriptCache> {
        self.check(x)?;
        let (h, fc) = self.fc.forward_cached(x)?;
        let (h, mask) = match rng {
            Some(r) if self.config.dropout_p > 0.0 => {
                let (y, m) = Dropout::new(self.config.dropout_p).apply(&h, r);
                (y, Some(m))
            }
            _ => (h, None),
        };
        let (logits, head) = self.head.forward_cached(&h)?;
        Ok(TranscriptCache {
            fc,
            mask,
            head,
            probs: logits.iter().map(|&v| logistic(v)).collect(),
        })
    }

    pub fn stage1_backward(&mut self, cache: &TranscriptCache, d_probs: &[f64]) {
        let dlogits = sigmoid_backward(&cache.probs, d_probs);
        let mut dh = self.head.backward(&cache.head, &dlogits);
        if let Some(m) = &cache.mask {
            dh.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }
        self.fc.backward(&cache.fc, &dh);
    }

    pub fn predict(&self, x: &[f64]) -> Result<TraitVector> {
        TraitVector::from_slice(&self.stage1_cached(x, None)?.probs)
    }

    pub fn stage2_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if self.config.stage2_feature_dim != Some(self.fc.output_dim()) {
            return Err(Error::Config(format!(
                "transcript stage-2 width {:?} must equal the last dense width {}",
                self.config.stage2_feature_dim,
                self.fc.output_dim()
            )));
        }
        self.check(x)?;
        self.fc.forward_cached(x)
    }

    pub fn stage2_backward(&mut self, cache: &MlpCache, d_out: &[f64]) {
        self.fc.backward(cache, d_out);
    }

    pub fn fc_layer(&self, i: usize) -> Option<&Dense> {
        self.fc.layers.get(i)
    }
}

impl Parameterized for TranscriptSubnet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc.visit(&join(prefix, "fc"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
