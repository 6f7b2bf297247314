//! Stage-2 model: the four stage-1 networks as feature extractors, their
//! 80/80/20/20 features concatenated and fed to a shared trait head.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::checkpoint::sha256_hex;
use crate::nn::dense::MlpCache;
use crate::nn::head::sigmoid_backward;
use crate::nn::lstm::logistic;
use crate::nn::tensor::{join, load_tensors, named_tensors, Param, Parameterized};
use crate::nn::{Container, Dropout, LstmCellParams, Mlp, Tensor};
use crate::preprocess::VideoInputs;
use crate::subnets::sequence::Stage2Cache;
use crate::subnets::{frame_steps, patch_steps, Modality, SequenceSubnet, Subnet, SubnetCheckpoint, SubnetConfig, TrainingMeta, TranscriptSubnet};
use crate::traits::TraitVector;

pub const FUSED_FEATURE_DIM: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedModelConfig {
    /// Stage-1 architectures, in [ambient, facial, audio, transcript] order.
    pub subnets: Vec<SubnetConfig>,
    pub stage2_lstm_layers: usize,
    pub frozen_patterns: Vec<String>,
    /// Head widths after the 200-d concatenation, ending in 5.
    pub fusion_head: Vec<usize>,
    pub fusion_dropout_p: f64,
    pub concat_order: Vec<Modality>,
}

impl FusedModelConfig {
    pub fn new(subnets: Vec<SubnetConfig>) -> Self {
        FusedModelConfig {
            subnets,
            stage2_lstm_layers: 6,
            frozen_patterns: vec!["ambient.backbone.*".into(), "facial.backbone.*".into(), "audio.encoder.*".into()],
            fusion_head: vec![64, 5],
            fusion_dropout_p: 0.5,
            concat_order: Modality::ALL.to_vec(),
        }
    }

    pub fn from_checkpoints(ckpts: &[SubnetCheckpoint]) -> Result<Self> {
        let subnets = Modality::ALL
            .iter()
            .map(|&m| {
                ckpts
                    .iter()
                    .find(|c| c.config.modality == m)
                    .map(|c| c.config.clone())
                    .ok_or_else(|| Error::ModalityMissing(format!("no {m} checkpoint supplied")))
            })
            .collect::<Result<_>>()?;
        Ok(FusedModelConfig::new(subnets))
    }

    pub fn subnet(&self, m: Modality) -> Result<&SubnetConfig> {
        self.subnets
            .iter()
            .find(|c| c.modality == m)
            .ok_or_else(|| Error::ModalityMissing(format!("fused config lacks {m}")))
    }

    /// `[start, end)` of each modality's block in the concatenated feature.
    pub fn feature_slices(&self) -> Result<Vec<(Modality, Range<usize>)>> {
        let mut at = 0;
        self.concat_order
            .iter()
            .map(|&m| {
                let d = self
                    .subnet(m)?
                    .stage2_feature_dim
                    .ok_or_else(|| Error::Config(format!("{m} subnet has no stage-2 feature width")))?;
                let r = at..at + d;
                at += d;
                Ok((m, r))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let order: BTreeSet<Modality> = self.concat_order.iter().copied().collect();
        if self.concat_order.len() != 4 || order.len() != 4 {
            return Err(Error::Config(format!("concat order {:?} must list each modality once", self.concat_order)));
        }
        for &m in &Modality::ALL {
            let c = self.subnet(m)?;
            c.validate()?;
            if c.stage2_feature_dim != Some(m.stage2_feature_dim()) {
                return Err(Error::Config(format!(
                    "{m} stage-2 width {:?}, expected {}",
                    c.stage2_feature_dim,
                    m.stage2_feature_dim()
                )));
            }
            if let Some(l) = &c.lstm {
                if self.stage2_lstm_layers < l.num_layers {
                    return Err(Error::Config(format!(
                        "{m}: stage-2 depth {} below stage-1 depth {}",
                        self.stage2_lstm_layers, l.num_layers
                    )));
                }
                if self.stage2_lstm_layers > l.num_layers && !l.residual {
                    return Err(Error::Config(format!("{m}: added layers need a residual stack")));
                }
            }
        }
        let total: usize = self.feature_slices()?.iter().map(|(_, r)| r.len()).sum();
        if total != FUSED_FEATURE_DIM {
            return Err(Error::Config(format!("concatenated width {total}, expected {FUSED_FEATURE_DIM}")));
        }
        if self.fusion_head.last() != Some(&5) || self.fusion_head.contains(&0) {
            return Err(Error::Config(format!("fusion head {:?} must end in 5", self.fusion_head)));
        }
        if !(0.0..1.0).contains(&self.fusion_dropout_p) {
            return Err(Error::Config(format!("fusion dropout {} not in [0, 1)", self.fusion_dropout_p)));
        }
        Ok(())
    }
}

/// `prefix.*` matches by prefix; anything else matches exactly.
pub fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(p) => name.starts_with(p),
        None => pattern == name,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub modality: Modality,
    pub source: String,
    pub sha256: String,
}

/// A stage-1 checkpoint together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCheckpoint {
    pub checkpoint: SubnetCheckpoint,
    pub source: String,
    pub sha256: String,
}

impl SourceCheckpoint {
    pub fn in_memory(checkpoint: SubnetCheckpoint) -> Self {
        let sha256 = sha256_hex(&checkpoint.to_container().to_bytes());
        SourceCheckpoint {
            source: format!("memory:{}", checkpoint.config.modality),
            checkpoint,
            sha256,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (checkpoint, sha256) = SubnetCheckpoint::load(path)?;
        Ok(SourceCheckpoint {
            checkpoint,
            source: path.display().to_string(),
            sha256,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel {
    pub config: FusedModelConfig,
    pub ambient: SequenceSubnet,
    pub facial: SequenceSubnet,
    pub audio: SequenceSubnet,
    pub transcript: TranscriptSubnet,
    pub fusion: Mlp,
    pub provenance: Vec<Provenance>,
}

/// Extractor outputs for one video (or one training window).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub ambient: Vec<Vec<f64>>,
    pub facial: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
    pub transcript: Vec<f64>,
}

pub struct FusedCache {
    ambient: Stage2Cache,
    facial: Stage2Cache,
    audio: Stage2Cache,
    transcript: MlpCache,
    mask: Option<Vec<f64>>,
    head: MlpCache,
    pub concat: Vec<f64>,
    pub probs: Vec<f64>,
}

fn strip_head(mut net: Subnet) -> Subnet {
    match &mut net {
        Subnet::Sequence(s) => s.head.layers.clear(),
        Subnet::Transcript(t) => t.head.layers.clear(),
    }
    net
}

fn deepen(s: &mut SequenceSubnet, layers: usize) {
    let h = s.hidden_size();
    while s.lstm.layers.len() < layers {
        s.lstm.layers.push(LstmCellParams::zeros(h, h));
    }
    s.lstm.config.num_layers = layers;
    if let Some(l) = &mut s.config.lstm {
        l.num_layers = layers;
    }
}

fn into_sequence(net: Subnet) -> SequenceSubnet {
    match net {
        Subnet::Sequence(s) => s,
        Subnet::Transcript(_) => unreachable!("validated modality"),
    }
}

fn into_transcript(net: Subnet) -> TranscriptSubnet {
    match net {
        Subnet::Transcript(t) => t,
        Subnet::Sequence(_) => unreachable!("validated modality"),
    }
}

impl FusedModel {
    /// Architecture from config with stage-1 parameters drawn from `seed`;
    /// recurrent stacks are deepened with zero layers.
    fn skeleton(config: FusedModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut nets: BTreeMap<Modality, Subnet> = BTreeMap::new();
        for &m in &Modality::ALL {
            nets.insert(m, strip_head(Subnet::new(config.subnet(m)?.clone(), seed)?));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f0_5e);
        let fusion = Mlp::new(FUSED_FEATURE_DIM, &config.fusion_head, false, &mut rng);
        let mut take = |m| nets.remove(&m).expect("all modalities built");
        let mut model = FusedModel {
            ambient: into_sequence(take(Modality::Ambient)),
            facial: into_sequence(take(Modality::Facial)),
            audio: into_sequence(take(Modality::Audio)),
            transcript: into_transcript(take(Modality::Transcript)),
            fusion,
            provenance: vec![],
            config,
        };
        let layers = model.config.stage2_lstm_layers;
        for s in [&mut model.ambient, &mut model.facial, &mut model.audio] {
            deepen(s, layers);
        }
        Ok(model)
    }

    pub fn sequence(&self, m: Modality) -> Option<&SequenceSubnet> {
        match m {
            Modality::Ambient => Some(&self.ambient),
            Modality::Facial => Some(&self.facial),
            Modality::Audio => Some(&self.audio),
            Modality::Transcript => None,
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.config.frozen_patterns.iter().any(|p| pattern_matches(p, name))
    }

    fn check_frozen_patterns(&self) -> Result<()> {
        let names: Vec<String> = named_tensors(self, "").into_keys().collect();
        for p in &self.config.frozen_patterns {
            if !names.iter().any(|n| pattern_matches(p, n)) {
                return Err(Error::Config(format!("frozen pattern `{p}` matches no parameter")));
            }
        }
        for n in &names {
            let extractor = Modality::ALL
                .iter()
                .any(|m| n.starts_with(&format!("{}.{}.", m, m.extractor_prefix())));
            if extractor != self.is_frozen(n) {
                return Err(Error::Config(format!(
                    "frozen patterns must cover exactly the extractor groups; `{n}` is {}",
                    if extractor { "an unfrozen extractor" } else { "frozen outside an extractor" }
                )));
            }
        }
        Ok(())
    }

    pub fn frozen_names(&self) -> Vec<String> {
        named_tensors(self, "").into_keys().filter(|n| self.is_frozen(n)).collect()
    }

    /// Extractor outputs for a prepared video. Empty frame or patch lists are
    /// reported as a missing modality.
    pub fn extract(&self, inputs: &VideoInputs) -> Result<FusedFeatures> {
        let missing = |m: Modality| Error::ModalityMissing(format!("{m} input absent for sample {}", inputs.id));
        if inputs.ambient.is_empty() {
            return Err(missing(Modality::Ambient));
        }
        if inputs.face.is_empty() {
            return Err(missing(Modality::Facial));
        }
        if inputs.logmel.is_empty() {
            return Err(missing(Modality::Audio));
        }
        Ok(FusedFeatures {
            ambient: self.ambient.extract(&frame_steps(&inputs.ambient)?)?,
            facial: self.facial.extract(&frame_steps(&inputs.face)?)?,
            audio: self.audio.extract(&patch_steps(&inputs.logmel)?)?,
            transcript: inputs.transcript.vector.clone(),
        })
    }

    /// Full forward pass with caches. With `rng`, dropout is active.
    pub fn forward_cached(&self, f: &FusedFeatures, mut rng: Option<&mut ChaCha8Rng>, zeroed: &[Modality]) -> Result<FusedCache> {
        let (fa, ca) = self.ambient.stage2_cached(&f.ambient, rng.as_deref_mut())?;
        let (ff, cf) = self.facial.stage2_cached(&f.facial, rng.as_deref_mut())?;
        let (fu, cu) = self.audio.stage2_cached(&f.audio, rng.as_deref_mut())?;
        let (ft, ct) = self.transcript.stage2_cached(&f.transcript)?;
        let mut concat = Vec::with_capacity(FUSED_FEATURE_DIM);
        for m in &self.config.concat_order {
            let block = match m {
                Modality::Ambient => &fa,
                Modality::Facial => &ff,
                Modality::Audio => &fu,
                Modality::Transcript => &ft,
            };
            if zeroed.contains(m) {
                concat.extend(std::iter::repeat_n(0.0, block.len()));
            } else {
                concat.extend_from_slice(block);
            }
        }
        if concat.len() != FUSED_FEATURE_DIM {
            return Err(Error::shape(FUSED_FEATURE_DIM, concat.len()));
        }
        let (x, mask) = match rng {
            Some(r) if self.config.fusion_dropout_p > 0.0 => {
                let (y, m) = Dropout::new(self.config.fusion_dropout_p).apply(&concat, r);
                (y, Some(m))
            }
            _ => (concat.clone(), None),
        };
        let (logits, head) = self.fusion.forward_cached(&x)?;
        Ok(FusedCache {
            ambient: ca,
            facial: cf,
            audio: cu,
            transcript: ct,
            mask,
            head,
            concat,
            probs: logits.iter().map(|&v| logistic(v)).collect(),
        })
    }

    /// Accumulates gradients for every non-extractor parameter.
    pub fn backward(&mut self, cache: &FusedCache, d_probs: &[f64]) {
        let dlogits = sigmoid_backward(&cache.probs, d_probs);
        let mut dx = self.fusion.backward(&cache.head, &dlogits);
        if let Some(m) = &cache.mask {
            dx.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }
        let slices = self.config.feature_slices().expect("validated at assembly");
        for (m, r) in slices {
            let d = &dx[r];
            match m {
                Modality::Ambient => {
                    self.ambient.stage2_backward(&cache.ambient, d);
                }
                Modality::Facial => {
                    self.facial.stage2_backward(&cache.facial, d);
                }
                Modality::Audio => {
                    self.audio.stage2_backward(&cache.audio, d);
                }
                Modality::Transcript => self.transcript.stage2_backward(&cache.transcript, d),
            }
        }
    }

    pub fn forward_features(&self, f: &FusedFeatures) -> Result<TraitVector> {
        TraitVector::from_slice(&self.forward_cached(f, None, &[])?.probs)
    }

    /// Prediction with the listed modality blocks replaced by zeros.
    pub fn forward_ablated(&self, f: &FusedFeatures, zeroed: &[Modality]) -> Result<TraitVector> {
        TraitVector::from_slice(&self.forward_cached(f, None, zeroed)?.probs)
    }

    pub fn concatenated_features(&self, f: &FusedFeatures) -> Result<Vec<f64>> {
        Ok(self.forward_cached(f, None, &[])?.concat)
    }
}

impl Parameterized for FusedModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.ambient.visit(&join(prefix, "ambient"), f);
        self.facial.visit(&join(prefix, "facial"), f);
        self.audio.visit(&join(prefix, "audio"), f);
        self.transcript.visit(&join(prefix, "transcript"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ambient.visit_mut(&join(prefix, "ambient"), f);
        self.facial.visit_mut(&join(prefix, "facial"), f);
        self.audio.visit_mut(&join(prefix, "audio"), f);
        self.transcript.visit_mut(&join(prefix, "transcript"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
    }
}

fn find_source(sources: &[SourceCheckpoint], m: Modality) -> Result<&SourceCheckpoint> {
    let mut hits = sources.iter().filter(|s| s.checkpoint.config.modality == m);
    let first = hits.next().ok_or_else(|| Error::ModalityMissing(format!("no {m} checkpoint supplied")))?;
    if hits.next().is_some() {
        return Err(Error::Config(format!("more than one {m} checkpoint supplied")));
    }
    Ok(first)
}

/// Transferred parameter names of a stage-1 checkpoint: everything but its trait head.
fn transferred(ck: &SubnetCheckpoint) -> impl Iterator<Item = (&String, &Tensor)> {
    ck.params.iter().filter(|(n, _)| !n.starts_with("head."))
}

/// Builds the fused model: stage-1 parameters copied bit-exactly, added LSTM
/// layers zeroed, fusion head drawn from `seed`.
pub fn assemble_fused_model(sources: &[SourceCheckpoint], config: &FusedModelConfig, seed: u64) -> Result<FusedModel> {
    let chosen: Vec<&SourceCheckpoint> = Modality::ALL.iter().map(|&m| find_source(sources, m)).collect::<Result<_>>()?;
    for s in &chosen {
        let m = s.checkpoint.config.modality;
        if config.subnet(m)? != &s.checkpoint.config {
            return Err(Error::Config(format!("{m} checkpoint architecture differs from the fused config")));
        }
    }
    let mut model = FusedModel::skeleton(config.clone(), seed)?;
    let mut map = BTreeMap::new();
    for s in &chosen {
        let m = s.checkpoint.config.modality;
        for (name, t) in transferred(&s.checkpoint) {
            map.insert(format!("{m}.{name}"), t.clone());
        }
    }
    let mut err = None;
    model.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        if let Some(t) = map.get(name) {
            if t.shape() != p.value.shape() {
                err = Some(Error::Config(format!(
                    "parameter `{name}`: checkpoint shape {:?} vs model {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            } else {
                p.value = t.clone();
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let names: BTreeSet<String> = named_tensors(&model, "").into_keys().collect();
    if let Some(n) = map.keys().find(|n| !names.contains(*n)) {
        return Err(Error::Config(format!("checkpoint parameter `{n}` has no place in the fused model")));
    }
    model.check_frozen_patterns()?;
    model.provenance = chosen
        .iter()
        .map(|s| Provenance {
            modality: s.checkpoint.config.modality,
            source: s.source.clone(),
            sha256: s.sha256.clone(),
        })
        .collect();
    Ok(model)
}

/// Zero-input forward for a prepared video; all modalities are required.
pub fn forward_fused(model: &FusedModel, inputs: &VideoInputs) -> Result<TraitVector> {
    model.forward_features(&model.extract(inputs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TransferReport {
    pub checked: usize,
    pub discrepancies: Vec<Discrepancy>,
}

impl TransferReport {
    pub fn passed(&self) -> bool {
        self.discrepancies.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.discrepancies.iter().map(|d| d.name.as_str()).collect()
    }

    /// One JSON object per line: a summary, then one line per discrepancy.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&json!({"checked": self.checked, "discrepancies": self.discrepancies.len()}))
            .expect("serializable");
        out.push('\n');
        for d in &self.discrepancies {
            out.push_str(&serde_json::to_string(d).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

fn bits(t: &Tensor) -> impl Iterator<Item = u64> + '_ {
    t.data().iter().map(|v| v.to_bits())
}

/// Lists every transferred parameter whose fused value differs from its
/// stage-1 source.
pub fn verify_transfer(model: &FusedModel, ckpts: &[SubnetCheckpoint]) -> TransferReport {
    let fused = named_tensors(model, "");
    let mut report = TransferReport::default();
    for ck in ckpts {
        let m = ck.config.modality;
        for (name, t) in transferred(ck) {
            let full = format!("{m}.{name}");
            report.checked += 1;
            match fused.get(&full) {
                None => report.discrepancies.push(Discrepancy {
                    name: full,
                    reason: "absent from fused model".into(),
                }),
                Some(f) if f.shape() != t.shape() => report.discrepancies.push(Discrepancy {
                    name: full,
                    reason: format!("shape {:?} vs source {:?}", f.shape(), t.shape()),
                }),
                Some(f) => {
                    if let Some(i) = bits(f).zip(bits(t)).position(|(a, b)| a != b) {
                        report.discrepancies.push(Discrepancy {
                            name: full,
                            reason: format!("first difference at index {i}"),
                        });
                    }
                }
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedCheckpoint {
    pub config: FusedModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub provenance: Vec<Provenance>,
    pub meta: TrainingMeta,
}

impl FusedCheckpoint {
    pub fn from_model(model: &FusedModel, meta: TrainingMeta) -> Self {
        FusedCheckpoint {
            config: model.config.clone(),
            params: named_tensors(model, ""),
            provenance: model.provenance.clone(),
            meta,
        }
    }

    pub fn to_model(&self) -> Result<FusedModel> {
        let mut model = FusedModel::skeleton(self.config.clone(), 0)?;
        load_tensors(&mut model, "", &self.params)?;
        let expected: BTreeSet<String> = named_tensors(&model, "").into_keys().collect();
        if let Some(extra) = self.params.keys().find(|k| !expected.contains(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        model.provenance = self.provenance.clone();
        Ok(model)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "fused",
            "config": self.config,
            "provenance": self.provenance,
            "meta": self.meta,
        }));
        c.tensors = self.params.clone();
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.config.get("kind").and_then(|k| k.as_str()) != Some("fused") {
            return Err(Error::Checkpoint("not a fused checkpoint".into()));
        }
        let field = |k: &str| c.config.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")));
        let de = |v| serde_json::from_value(v).map_err(|e: serde_json::Error| Error::Checkpoint(e.to_string()));
        let ck = FusedCheckpoint {
            config: de(field("config")?)?,
            params: c.tensors.clone(),
            provenance: serde_json::from_value(field("provenance")?).map_err(|e| Error::Checkpoint(e.to_string()))?,
            meta: serde_json::from_value(field("meta")?).map_err(|e| Error::Checkpoint(e.to_string()))?,
        };
        ck.to_model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (c, sha) = Container::load(path)?;
        Ok((FusedCheckpoint::from_container(&c)?, sha))
    }
}
