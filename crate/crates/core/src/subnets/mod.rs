//! The four modality networks trained alone in stage 1.

pub mod backbone;
pub mod sequence;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use backbone::{AudioEncoder, ConvStack, ConvStackConfig, ImageBackbone, AUDIO_EMBEDDING_DIM};
pub use sequence::{Readout, SequenceSubnet};
pub use transcript::TranscriptSubnet;

use crate::error::{Error, Result};
use crate::nn::tensor::{load_tensors, named_tensors, Param, Parameterized};
use crate::nn::{Container, LstmStackConfig, Tensor};
use crate::preprocess::{FrameSequence, LogMelPatches, TranscriptEmbedding, VideoInputs, FRAME_SIZE};
use crate::traits::TraitVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ambient,
    Facial,
    Audio,
    #[serde(alias = "transcription")]
    Transcript,
}

impl Modality {
    /// Concatenation order of stage-2 features.
    pub const ALL: [Modality; 4] = [Modality::Ambient, Modality::Facial, Modality::Audio, Modality::Transcript];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Ambient => "ambient",
            Modality::Facial => "facial",
            Modality::Audio => "audio",
            Modality::Transcript => "transcript",
        }
    }

    /// Parameter group holding the frozen feature extractor.
    pub fn extractor_prefix(self) -> &'static str {
        match self {
            Modality::Ambient | Modality::Facial => "backbone",
            Modality::Audio => "encoder",
            Modality::Transcript => "embedder",
        }
    }

    pub fn stage2_feature_dim(self) -> usize {
        match self {
            Modality::Ambient | Modality::Facial => 80,
            Modality::Audio | Modality::Transcript => 20,
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("{}.ckpt", self.name())
    }

    pub fn is_sequence(self) -> bool {
        self != Modality::Transcript
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ambient" => Ok(Modality::Ambient),
            "facial" | "face" => Ok(Modality::Facial),
            "audio" => Ok(Modality::Audio),
            "transcript" | "transcription" => Ok(Modality::Transcript),
            _ => Err(Error::Validation(format!("unknown modality `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetConfig {
    pub modality: Modality,
    /// Backbone or encoder; absent for transcripts.
    pub extractor: Option<ConvStackConfig>,
    pub lstm: Option<LstmStackConfig>,
    /// Dense widths after the recurrent or fully connected body, ending in 5.
    pub head: Vec<usize>,
    /// Transcript body widths.
    #[serde(default)]
    pub fc_layers: Vec<usize>,
    pub stage2_feature_dim: Option<usize>,
    #[serde(default)]
    pub readout: Readout,
    pub dropout_p: f64,
}

impl SubnetConfig {
    /// Stage-1 defaults: two residual layers of width 128, a single-layer head.
    pub fn for_modality(modality: Modality) -> Self {
        let lstm = LstmStackConfig {
            num_layers: 2,
            hidden_size: 128,
            residual: true,
            dropout_p: 0.0,
        };
        let (extractor, lstm, fc_layers) = match modality {
            Modality::Ambient | Modality::Facial => (Some(ConvStackConfig::image_default()), Some(lstm), vec![]),
            Modality::Audio => (Some(ConvStackConfig::audio_default()), Some(lstm), vec![]),
            Modality::Transcript => (None, None, vec![256, 64, 20]),
        };
        SubnetConfig {
            modality,
            extractor,
            lstm,
            head: vec![5],
            fc_layers,
            stage2_feature_dim: Some(modality.stage2_feature_dim()),
            readout: Readout::Last,
            dropout_p: 0.5,
        }
    }

    pub fn with_hidden_size(mut self, hidden: usize) -> Self {
        if let Some(l) = &mut self.lstm {
            l.hidden_size = hidden;
        }
        self
    }

    /// Same architecture with another modality tag.
    pub fn retagged(&self, modality: Modality) -> Self {
        SubnetConfig {
            modality,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{} subnet: {m}", self.modality)));
        if self.head.last() != Some(&5) || self.head.contains(&0) {
            return bad(format!("head widths {:?} must be positive and end in 5", self.head));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout_p));
        }
        if self.stage2_feature_dim == Some(0) {
            return bad("stage-2 width must be positive".into());
        }
        match self.modality {
            Modality::Transcript => {
                if self.extractor.is_some() || self.lstm.is_some() {
                    return bad("transcripts take no extractor or LSTM stack".into());
                }
                if self.fc_layers.len() != 3 || self.fc_layers.contains(&0) {
                    return bad(format!("needs exactly three dense layers, got {:?}", self.fc_layers));
                }
                if let Some(d) = self.stage2_feature_dim {
                    if d != self.fc_layers[2] {
                        return bad(format!("stage-2 width {d} must equal the last dense width {}", self.fc_layers[2]));
                    }
                }
            }
            m => {
                let (Some(ext), Some(lstm)) = (&self.extractor, &self.lstm) else {
                    return bad("needs an extractor and an LSTM stack".into());
                };
                if !self.fc_layers.is_empty() {
                    return bad("dense body layers apply only to transcripts".into());
                }
                lstm.validate(lstm.hidden_size)?;
                let (c, h, w) = (ext.input.channels, ext.input.height, ext.input.width);
                if m == Modality::Audio {
                    if (c, h, w) != (1, backbone::PATCH_FRAMES, backbone::PATCH_BANDS) || ext.feature_dim != AUDIO_EMBEDDING_DIM {
                        return bad("audio encoder maps 96x64 patches to 128-d embeddings".into());
                    }
                } else if (c, h, w) != (3, FRAME_SIZE, FRAME_SIZE) {
                    return bad("image backbone takes 224x224x3 frames".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Subnet {
    Sequence(SequenceSubnet),
    Transcript(TranscriptSubnet),
}

impl Subnet {
    pub fn new(config: SubnetConfig, seed: u64) -> Result<Subnet> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match config.modality {
            Modality::Transcript => Subnet::Transcript(TranscriptSubnet::new(config, &mut rng)?),
            _ => Subnet::Sequence(SequenceSubnet::new(config, &mut rng)?),
        })
    }

    pub fn config(&self) -> &SubnetConfig {
        match self {
            Subnet::Sequence(s) => &s.config,
            Subnet::Transcript(t) => &t.config,
        }
    }

    pub fn modality(&self) -> Modality {
        self.config().modality
    }

    pub fn as_sequence(&self) -> Result<&SequenceSubnet> {
        match self {
            Subnet::Sequence(s) => Ok(s),
            Subnet::Transcript(_) => Err(Error::Config("transcript subnet has no sequence body".into())),
        }
    }

    pub fn as_transcript(&self) -> Result<&TranscriptSubnet> {
        match self {
            Subnet::Transcript(t) => Ok(t),
            Subnet::Sequence(_) => Err(Error::Config(format!("{} subnet is not a transcript subnet", self.modality()))),
        }
    }

    /// Stage-1 prediction from a prepared video.
    pub fn predict(&self, inputs: &VideoInputs) -> Result<TraitVector> {
        match self.modality() {
            Modality::Ambient => forward_ambient_stage1(&inputs.ambient, self),
            Modality::Facial => forward_facial_stage1(&inputs.face, self),
            Modality::Audio => forward_audio_stage1(&inputs.logmel, self),
            Modality::Transcript => forward_transcript_stage1(&inputs.transcript, self),
        }
    }
}

impl Parameterized for Subnet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Subnet::Sequence(s) => s.visit(prefix, f),
            Subnet::Transcript(t) => t.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Subnet::Sequence(s) => s.visit_mut(prefix, f),
            Subnet::Transcript(t) => t.visit_mut(prefix, f),
        }
    }
}

/// Raw per-timestep inputs for a sequence modality.
pub enum ModalityInput<'a> {
    Frames(&'a FrameSequence),
    Patches(&'a LogMelPatches),
    Embedding(&'a TranscriptEmbedding),
}

impl<'a> ModalityInput<'a> {
    pub fn of(modality: Modality, inputs: &'a VideoInputs) -> Self {
        match modality {
            Modality::Ambient => ModalityInput::Frames(&inputs.ambient),
            Modality::Facial => ModalityInput::Frames(&inputs.face),
            Modality::Audio => ModalityInput::Patches(&inputs.logmel),
            Modality::Transcript => ModalityInput::Embedding(&inputs.transcript),
        }
    }

    /// Timestep vectors in extractor layout, after shape checks.
    pub fn steps(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            ModalityInput::Frames(seq) => frame_steps(seq),
            ModalityInput::Patches(p) => patch_steps(p),
            ModalityInput::Embedding(_) => Err(Error::Config("embeddings have no timesteps".into())),
        }
    }
}

pub fn frame_steps(frames: &FrameSequence) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::shape("at least one frame", 0));
    }
    frames
        .frames
        .iter()
        .map(|f| {
            if !f.is_prepared() {
                return Err(Error::shape(
                    format!("{FRAME_SIZE}x{FRAME_SIZE}x3 frame"),
                    format!("{}x{}x{}", f.height, f.width, f.channels),
                ));
            }
            Ok(f.to_chw())
        })
        .collect()
}

pub fn patch_steps(patches: &LogMelPatches) -> Result<Vec<Vec<f64>>> {
    if patches.is_empty() {
        return Err(Error::shape("at least one patch", 0));
    }
    let want = backbone::PATCH_FRAMES * backbone::PATCH_BANDS;
    for p in &patches.patches {
        if p.len() != want || patches.config.patch_frames != backbone::PATCH_FRAMES {
            return Err(Error::shape("96x64 patch", format!("{}x{}", patches.config.patch_frames, p.len() / patches.config.patch_frames.max(1))));
        }
    }
    Ok(patches.patches.clone())
}

fn image_subnet(net: &Subnet) -> Result<&SequenceSubnet> {
    let s = net.as_sequence()?;
    if s.config.modality == Modality::Audio {
        return Err(Error::Config("audio subnet cannot take frames".into()));
    }
    Ok(s)
}

pub fn forward_ambient_stage1(frames: &FrameSequence, net: &Subnet) -> Result<TraitVector> {
    let s = image_subnet(net)?;
    s.predict_features(&s.extract(&frame_steps(frames)?)?)
}

pub fn forward_facial_stage1(face_frames: &FrameSequence, net: &Subnet) -> Result<TraitVector> {
    forward_ambient_stage1(face_frames, net)
}

pub fn forward_audio_stage1(patches: &LogMelPatches, net: &Subnet) -> Result<TraitVector> {
    let s = net.as_sequence()?;
    if s.config.modality != Modality::Audio {
        return Err(Error::Config(format!("{} subnet cannot take audio", s.config.modality)));
    }
    s.predict_features(&s.extract(&patch_steps(patches)?)?)
}

pub fn forward_transcript_stage1(embedding: &TranscriptEmbedding, net: &Subnet) -> Result<TraitVector> {
    net.as_transcript()?.predict(&embedding.vector)
}

/// Stage-2 feature with the trait head bypassed: 80 values for frames, 20 for
/// audio and transcripts.
pub fn extract_stage2_features(net: &Subnet, input: ModalityInput) -> Result<Vec<f64>> {
    match (net, input) {
        (Subnet::Transcript(t), ModalityInput::Embedding(e)) => Ok(t.stage2_cached(&e.vector)?.0),
        (Subnet::Sequence(s), input @ (ModalityInput::Frames(_) | ModalityInput::Patches(_))) => {
            if matches!(input, ModalityInput::Frames(_)) == (s.config.modality == Modality::Audio) {
                return Err(Error::Config(format!("input kind does not match the {} subnet", s.config.modality)));
            }
            let feats = s.extract(&input.steps()?)?;
            Ok(s.stage2_cached(&feats, None)?.0)
        }
        (net, _) => Err(Error::Config(format!("input kind does not match the {} subnet", net.modality()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub steps: usize,
    pub seed: u64,
    /// Learning rate per parameter group that was trained.
    pub learning_rates: BTreeMap<String, f64>,
    pub final_train_accuracy: Option<f64>,
    pub final_validation_accuracy: Option<f64>,
    pub best_step: Option<usize>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetCheckpoint {
    pub config: SubnetConfig,
    pub params: BTreeMap<String, Tensor>,
    pub meta: TrainingMeta,
}

impl SubnetCheckpoint {
    pub fn from_subnet(net: &Subnet, meta: TrainingMeta) -> Self {
        SubnetCheckpoint {
            config: net.config().clone(),
            params: named_tensors(net, ""),
            meta,
        }
    }

    /// Rebuilds the network; the stored names must match the config exactly.
    pub fn to_subnet(&self) -> Result<Subnet> {
        let mut net = Subnet::new(self.config.clone(), 0)?;
        load_tensors(&mut net, "", &self.params)?;
        let expected: BTreeSet<String> = named_tensors(&net, "").into_keys().collect();
        if let Some(extra) = self.params.keys().find(|k| !expected.contains(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(net)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "subnet",
            "config": self.config,
            "meta": self.meta,
        }));
        c.tensors = self.params.clone();
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.config.get("kind").and_then(|k| k.as_str()) != Some("subnet") {
            return Err(Error::Checkpoint("not a subnet checkpoint".into()));
        }
        let de = |k: &str| c.config.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")));
        let config: SubnetConfig = serde_json::from_value(de("config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta: TrainingMeta = serde_json::from_value(de("meta")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ck = SubnetCheckpoint {
            config,
            params: c.tensors.clone(),
            meta,
        };
        ck.to_subnet()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_container().save(path)
    }

    /// Loads a checkpoint and returns it with the SHA-256 of the file.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (c, sha) = Container::load(path)?;
        Ok((SubnetCheckpoint::from_container(&c)?, sha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{Image, LogMelConfig, EMBEDDING_DIM};

    fn small(modality: Modality) -> SubnetConfig {
        let mut c = SubnetConfig::for_modality(modality).with_hidden_size(8);
        if let Some(e) = &mut c.extractor {
            e.channels = vec![4; e.channels.len()];
            if modality != Modality::Audio {
                e.feature_dim = 12;
            }
        }
        c
    }

    fn frames(n: usize) -> FrameSequence {
        FrameSequence {
            frames: (0..n)
                .map(|i| {
                    let data = (0..224 * 224 * 3)
                        .map(|k| (((k / 3) % 224 + k / (3 * 224) * (i + 1)) % 97) as f64 / 97.0)
                        .collect();
                    Image::new(224, 224, 3, data).unwrap()
                })
                .collect(),
            timestamps_s: (0..n).map(|i| i as f64 + 0.5).collect(),
        }
    }

    fn zero_downstream(net: &mut Subnet) {
        let prefix = net.modality().extractor_prefix();
        net.visit_mut("", &mut |name, p| {
            if !name.starts_with(prefix) {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        });
    }

    #[test]
    fn ambient_ranges_and_zero_params() {
        let mut net = Subnet::new(small(Modality::Ambient), 1).unwrap();
        let out = forward_ambient_stage1(&frames(1), &net).unwrap();
        assert!(out.as_array().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(forward_ambient_stage1(&frames(2), &net).unwrap(), forward_ambient_stage1(&frames(2), &net).unwrap());
        zero_downstream(&mut net);
        assert_eq!(forward_ambient_stage1(&frames(3), &net).unwrap().as_array(), &[0.5; 5]);
    }

    #[test]
    fn unprepared_frame_is_shape_error() {
        let net = Subnet::new(small(Modality::Ambient), 1).unwrap();
        let seq = FrameSequence {
            frames: vec![Image::filled(64, 64, [0.2; 3])],
            timestamps_s: vec![0.5],
        };
        assert!(matches!(forward_ambient_stage1(&seq, &net), Err(Error::Shape { .. })));
    }

    #[test]
    fn facial_mirrors_ambient() {
        let amb = Subnet::new(small(Modality::Ambient), 4).unwrap();
        let fac = Subnet::new(small(Modality::Facial), 4).unwrap();
        assert_eq!(amb.config().retagged(Modality::Facial), *fac.config());
        let f = frames(3);
        assert_eq!(forward_ambient_stage1(&f, &amb).unwrap(), forward_facial_stage1(&f, &fac).unwrap());
        let mut swapped = f.clone();
        swapped.frames.swap(0, 2);
        assert_ne!(forward_facial_stage1(&f, &fac).unwrap(), forward_facial_stage1(&swapped, &fac).unwrap());
    }

    #[test]
    fn audio_subnet() {
        let mut net = Subnet::new(small(Modality::Audio), 2).unwrap();
        assert_eq!(net.config().extractor.as_ref().unwrap().feature_dim, 128);
        let one = LogMelPatches {
            patches: vec![(0..96 * 64).map(|i| ((i % 17) as f64 / 17.0).ln_1p() - 2.0).collect()],
            config: LogMelConfig::default(),
        };
        let mut two = one.clone();
        two.patches.push(one.patches[0].clone());
        assert_ne!(forward_audio_stage1(&one, &net).unwrap(), forward_audio_stage1(&two, &net).unwrap());
        let bad = LogMelPatches {
            patches: vec![vec![0.0; 95 * 64]],
            config: LogMelConfig::default(),
        };
        assert!(matches!(forward_audio_stage1(&bad, &net), Err(Error::Shape { .. })));
        zero_downstream(&mut net);
        let silence = LogMelPatches {
            patches: vec![vec![0.01f64.ln(); 96 * 64]],
            config: LogMelConfig::default(),
        };
        assert_eq!(forward_audio_stage1(&silence, &net).unwrap().as_array(), &[0.5; 5]);
    }

    #[test]
    fn transcript_subnet() {
        let mut net = Subnet::new(SubnetConfig::for_modality(Modality::Transcript), 3).unwrap();
        let e = TranscriptEmbedding::new((0..EMBEDDING_DIM).map(|i| (i as f64 * 0.37).sin()).collect(), 4).unwrap();
        let e2 = TranscriptEmbedding::new(e.vector.iter().map(|v| 2.0 * v).collect(), 4).unwrap();
        assert_ne!(forward_transcript_stage1(&e, &net).unwrap(), forward_transcript_stage1(&e2, &net).unwrap());
        let short = TranscriptEmbedding {
            vector: vec![0.0; 512],
            token_count: 0,
        };
        assert!(matches!(forward_transcript_stage1(&short, &net), Err(Error::Shape { .. })));
        net.visit_mut("", &mut |name, p| {
            if name.ends_with("bias") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        });
        assert_eq!(forward_transcript_stage1(&TranscriptEmbedding::zero(), &net).unwrap().as_array(), &[0.5; 5]);
        assert_eq!(extract_stage2_features(&net, ModalityInput::Embedding(&e)).unwrap().len(), 20);
    }

    #[test]
    fn stage2_widths() {
        let amb = Subnet::new(small(Modality::Ambient), 1).unwrap();
        assert_eq!(extract_stage2_features(&amb, ModalityInput::Frames(&frames(2))).unwrap().len(), 80);
        let aud = Subnet::new(small(Modality::Audio), 1).unwrap();
        let p = LogMelPatches {
            patches: vec![vec![-1.0; 96 * 64]],
            config: LogMelConfig::default(),
        };
        assert_eq!(extract_stage2_features(&aud, ModalityInput::Patches(&p)).unwrap().len(), 20);
        let mut cfg = small(Modality::Ambient);
        cfg.stage2_feature_dim = None;
        let bare = Subnet::new(cfg, 1).unwrap();
        assert!(matches!(
            extract_stage2_features(&bare, ModalityInput::Frames(&frames(1))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn transcript_needs_three_layers() {
        let mut cfg = SubnetConfig::for_modality(Modality::Transcript);
        cfg.fc_layers = vec![64, 20];
        assert!(matches!(Subnet::new(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Subnet::new(small(Modality::Audio), 9).unwrap();
        let ck = SubnetCheckpoint::from_subnet(&net, TrainingMeta::default());
        let back = SubnetCheckpoint::from_container(&Container::from_bytes(&ck.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_subnet().unwrap(), net);
        let mut extra = ck.clone();
        extra.params.insert("stray".into(), Tensor::zeros(&[1]));
        assert!(extra.to_subnet().is_err());
    }
}
