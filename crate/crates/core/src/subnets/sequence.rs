//! Extractor, tanh input projection, LSTM stack, readout, then either the
//! five-way trait head (stage 1) or a linear stage-2 projection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{ConvStack, ConvStackCache};
use super::SubnetConfig;
use crate::error::{Error, Result};
use crate::nn::dense::MlpCache;
use crate::nn::head::sigmoid_backward;
use crate::nn::lstm::{logistic, StackCache};
use crate::nn::tensor::{join, Param, Parameterized};
use crate::nn::{Dense, Dropout, LstmStack, Mlp};
use crate::traits::TraitVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSubnet {
    pub config: SubnetConfig,
    pub extractor: ConvStack,
    pub input_proj: Dense,
    pub lstm: LstmStack,
    pub head: Mlp,
    pub stage2_proj: Option<Dense>,
}

pub struct ReprCache {
    proj: Vec<Vec<f64>>,
    feats: Vec<Vec<f64>>,
    lstm: StackCache,
    steps: usize,
}

pub struct Stage1Cache {
    repr: ReprCache,
    readout: Vec<f64>,
    mask: Option<Vec<f64>>,
    head: MlpCache,
    pub probs: Vec<f64>,
}

pub struct Stage2Cache {
    repr: ReprCache,
    readout: Vec<f64>,
}

impl SequenceSubnet {
    pub(crate) fn new<R: Rng>(config: SubnetConfig, rng: &mut R) -> Result<Self> {
        let ext_cfg = config.extractor.clone().ok_or_else(|| Error::Config("sequence subnet needs an extractor".into()))?;
        let lstm_cfg = config.lstm.ok_or_else(|| Error::Config("sequence subnet needs an LSTM stack".into()))?;
        let extractor = ConvStack::new(ext_cfg, rng)?;
        let h = lstm_cfg.hidden_size;
        let input_proj = Dense::new(extractor.feature_dim(), h, rng);
        let lstm = LstmStack::new(lstm_cfg, h, rng)?;
        let head = Mlp::new(h, &config.head, false, rng);
        let stage2_proj = config.stage2_feature_dim.map(|d| Dense::new(h, d, rng));
        Ok(SequenceSubnet {
            config,
            extractor,
            input_proj,
            lstm,
            head,
            stage2_proj,
        })
    }

    pub fn extractor_prefix(&self) -> &'static str {
        self.config.modality.extractor_prefix()
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.config.hidden_size
    }

    /// Extractor output for each raw timestep input (CHW image or log-mel patch).
    pub fn extract(&self, steps: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        steps.iter().map(|x| self.extractor.forward(x)).collect()
    }

    pub fn extract_cached(&self, steps: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<ConvStackCache>)> {
        let mut feats = Vec::with_capacity(steps.len());
        let mut caches = Vec::with_capacity(steps.len());
        for x in steps {
            let (f, c) = self.extractor.forward_cached(x)?;
            feats.push(f);
            caches.push(c);
        }
        Ok((feats, caches))
    }

    pub fn extract_backward(&mut self, caches: &[ConvStackCache], dfeats: &[Vec<f64>]) {
        for (c, d) in caches.iter().zip(dfeats) {
            self.extractor.backward(c, d);
        }
    }

    fn represent(&self, feats: &[Vec<f64>], rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, ReprCache)> {
        if feats.is_empty() {
            return Err(Error::shape("at least one timestep", 0));
        }
        let proj: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| Ok(self.input_proj.forward(f)?.into_iter().map(f64::tanh).collect()))
            .collect::<Result<_>>()?;
        let (outs, lstm) = self.lstm.forward_cached(&proj, rng)?;
        let readout = match self.config.readout {
            Readout::Last => outs.last().expect("non-empty").clone(),
            Readout::Mean => {
                let mut m = vec![0.0; self.hidden_size()];
                for o in &outs {
                    m.iter_mut().zip(o).for_each(|(a, b)| *a += b);
                }
                m.iter_mut().for_each(|v| *v /= outs.len() as f64);
                m
            }
        };
        Ok((
            readout,
            ReprCache {
                proj,
                feats: feats.to_vec(),
                lstm,
                steps: feats.len(),
            },
        ))
    }

    fn represent_backward(&mut self, cache: &ReprCache, d_readout: &[f64]) -> Vec<Vec<f64>> {
        let hs = self.hidden_size();
        let t = cache.steps;
        let mut dys = vec![vec![0.0; hs]; t];
        match self.config.readout {
            Readout::Last => dys[t - 1].copy_from_slice(d_readout),
            Readout::Mean => {
                for d in dys.iter_mut() {
                    d.iter_mut().zip(d_readout).for_each(|(a, b)| *a = b / t as f64);
                }
            }
        }
        let dproj = self.lstm.backward(&cache.lstm, &dys);
        dproj
            .iter()
            .zip(&cache.proj)
            .zip(&cache.feats)
            .map(|((dp, p), f)| {
                let dz: Vec<f64> = dp.iter().zip(p).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.input_proj.backward(f, &dz)
            })
            .collect()
    }

    /// Stage-1 forward from extractor features. With `rng`, dropout is active.
    pub fn stage1_cached(&self, feats: &[Vec<f64>], mut rng: Option<&mut ChaCha8Rng>) -> Result<Stage1Cache> {
        let (readout, repr) = self.represent(feats, rng.as_deref_mut())?;
        let (x, mask) = match rng {
            Some(r) if self.config.dropout_p > 0.0 => {
                let (y, m) = Dropout::new(self.config.dropout_p).apply(&readout, r);
                (y, Some(m))
            }
            _ => (readout.clone(), None),
        };
        let (logits, head) = self.head.forward_cached(&x)?;
        let probs = logits.iter().map(|&v| logistic(v)).collect();
        Ok(Stage1Cache {
            repr,
            readout,
            mask,
            head,
            probs,
        })
    }

    /// Backpropagates `d_probs`; returns gradients w.r.t. the extractor features.
    pub fn stage1_backward(&mut self, cache: &Stage1Cache, d_probs: &[f64]) -> Vec<Vec<f64>> {
        let dlogits = sigmoid_backward(&cache.probs, d_probs);
        let mut dx = self.head.backward(&cache.head, &dlogits);
        if let Some(m) = &cache.mask {
            dx.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }
        debug_assert_eq!(dx.len(), cache.readout.len());
        self.represent_backward(&cache.repr, &dx)
    }

    pub fn predict_features(&self, feats: &[Vec<f64>]) -> Result<TraitVector> {
        let c = self.stage1_cached(feats, None)?;
        TraitVector::from_slice(&c.probs)
    }

    fn stage2_layer(&self) -> Result<&Dense> {
        self.stage2_proj
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} subnet has no stage-2 feature width", self.config.modality)))
    }

    pub fn stage2_cached(&self, feats: &[Vec<f64>], rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, Stage2Cache)> {
        let layer = self.stage2_layer()?;
        let (readout, repr) = self.represent(feats, rng)?;
        let out = layer.forward(&readout)?;
        Ok((out, Stage2Cache { repr, readout }))
    }

    pub fn stage2_backward(&mut self, cache: &Stage2Cache, d_out: &[f64]) -> Vec<Vec<f64>> {
        let layer = self.stage2_proj.as_mut().expect("stage-2 forward succeeded");
        let d = layer.backward(&cache.readout, d_out);
        self.represent_backward(&cache.repr, &d)
    }

    /// Visits everything except the extractor.
    pub fn visit_sequence(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.input_proj.visit(&join(prefix, "input_proj"), f);
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.head.visit(&join(prefix, "head"), f);
        if let Some(p) = &self.stage2_proj {
            p.visit(&join(prefix, "stage2_proj"), f);
        }
    }
}

impl Parameterized for SequenceSubnet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.extractor.visit(&join(prefix, self.extractor_prefix()), f);
        self.visit_sequence(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        let ext = self.extractor_prefix();
        self.extractor.visit_mut(&join(prefix, ext), f);
        self.input_proj.visit_mut(&join(prefix, "input_proj"), f);
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
        if let Some(p) = &mut self.stage2_proj {
            p.visit_mut(&join(prefix, "stage2_proj"), f);
        }
    }
}
