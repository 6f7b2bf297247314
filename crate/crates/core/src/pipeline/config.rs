//! Training configuration as a flat key-value document (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedModelConfig;
use crate::preprocess::{AugmentationConfig, LogMelConfig};
use crate::subnets::{Modality, Readout, SubnetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Center,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub modality: Option<Modality>,
    /// Stage-1 checkpoints for stage 2, one per modality.
    pub checkpoints: Vec<PathBuf>,

    pub lr_ambient: f64,
    pub lr_facial: f64,
    pub lr_audio: f64,
    pub lr_transcript: f64,
    pub lr_fusion: f64,

    pub batch_videos: usize,
    pub frames_per_video: usize,
    pub dropout_p: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub validate_every: usize,
    pub select_best: bool,

    pub aug_brightness: f64,
    pub aug_saturation: f64,
    pub aug_hue: f64,
    pub aug_contrast: f64,
    /// Augmented copies cached per video in addition to the clean one.
    pub augment_copies: usize,

    pub hidden_size: usize,
    pub stage1_lstm_layers: usize,
    pub stage2_lstm_layers: usize,
    pub residual: bool,
    pub readout: Readout,
    pub image_channels: Vec<usize>,
    pub image_feature_dim: usize,
    pub audio_channels: Vec<usize>,
    pub transcript_layers: Vec<usize>,
    pub fusion_hidden: usize,
    pub backbone_trainable: bool,

    pub detector: DetectorKind,
    pub face_fraction: f64,
    pub embedder_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugmentationConfig::default();
        TrainConfig {
            stage: 1,
            modality: None,
            checkpoints: vec![],
            lr_ambient: 1e-5,
            lr_facial: 1e-5,
            lr_audio: 1e-4,
            lr_transcript: 1e-5,
            lr_fusion: 1e-5,
            batch_videos: 8,
            frames_per_video: 6,
            dropout_p: 0.5,
            max_steps: 2000,
            seed: 0,
            validate_every: 100,
            select_best: true,
            aug_brightness: aug.brightness,
            aug_saturation: aug.saturation,
            aug_hue: aug.hue,
            aug_contrast: aug.contrast,
            augment_copies: 1,
            hidden_size: 128,
            stage1_lstm_layers: 2,
            stage2_lstm_layers: 6,
            residual: true,
            readout: Readout::Last,
            image_channels: vec![8, 16, 32, 32],
            image_feature_dim: 256,
            audio_channels: vec![8, 16, 32],
            transcript_layers: vec![256, 64, 20],
            fusion_hidden: 64,
            backbone_trainable: false,
            detector: DetectorKind::Center,
            face_fraction: 0.5,
            embedder_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check_values()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn learning_rate(&self, m: Modality) -> f64 {
        match m {
            Modality::Ambient => self.lr_ambient,
            Modality::Facial => self.lr_facial,
            Modality::Audio => self.lr_audio,
            Modality::Transcript => self.lr_transcript,
        }
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        AugmentationConfig {
            brightness: self.aug_brightness,
            saturation: self.aug_saturation,
            hue: self.aug_hue,
            contrast: self.aug_contrast,
            seed: self.seed,
        }
    }

    pub fn log_mel(&self) -> LogMelConfig {
        LogMelConfig::default()
    }

    /// Value checks independent of the stage.
    pub fn check_values(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage != 1 && self.stage != 2 {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        for (name, lr) in [
            ("lr_ambient", self.lr_ambient),
            ("lr_facial", self.lr_facial),
            ("lr_audio", self.lr_audio),
            ("lr_transcript", self.lr_transcript),
            ("lr_fusion", self.lr_fusion),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_videos == 0 || self.frames_per_video == 0 || self.validate_every == 0 {
            return bad("batch_videos, frames_per_video and validate_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} not in [0, 1)", self.dropout_p));
        }
        let aug = [self.aug_brightness, self.aug_saturation, self.aug_hue, self.aug_contrast];
        if aug.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("augmentation magnitudes must be non-negative, got {aug:?}"));
        }
        if self.hidden_size == 0 || self.stage1_lstm_layers == 0 {
            return bad("hidden_size and stage1_lstm_layers must be positive".into());
        }
        if self.stage2_lstm_layers < self.stage1_lstm_layers {
            return bad("stage2_lstm_layers must not be below stage1_lstm_layers".into());
        }
        if self.image_channels.is_empty() || self.audio_channels.is_empty() || self.fusion_hidden == 0 {
            return bad("channel lists and fusion_hidden must be non-empty".into());
        }
        if self.transcript_layers.len() != 3 || self.transcript_layers[2] != Modality::Transcript.stage2_feature_dim() {
            return bad(format!(
                "transcript_layers {:?} must have three widths ending in {}",
                self.transcript_layers,
                Modality::Transcript.stage2_feature_dim()
            ));
        }
        if !(self.face_fraction > 0.0 && self.face_fraction <= 1.0) {
            return bad(format!("face_fraction {} outside (0, 1]", self.face_fraction));
        }
        Ok(())
    }

    /// Stage-1 runs name one modality and no checkpoints; stage-2 runs name
    /// all four checkpoints.
    pub fn validate(&self) -> Result<()> {
        self.check_values()?;
        match self.stage {
            1 if self.modality.is_none() => Err(Error::Config("stage-1 config must name a modality".into())),
            1 if !self.checkpoints.is_empty() => Err(Error::Config("stage-1 config takes no checkpoints".into())),
            2 if self.modality.is_some() => Err(Error::Config("stage-2 config names no single modality".into())),
            2 if self.checkpoints.len() != 4 => Err(Error::Config(format!(
                "stage-2 config needs four checkpoints, got {}",
                self.checkpoints.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn subnet_config(&self, m: Modality) -> SubnetConfig {
        let mut c = SubnetConfig::for_modality(m).with_hidden_size(self.hidden_size);
        if let Some(l) = &mut c.lstm {
            l.num_layers = self.stage1_lstm_layers;
            l.residual = self.residual;
        }
        if let Some(e) = &mut c.extractor {
            e.trainable = self.backbone_trainable;
            if m == Modality::Audio {
                e.channels = self.audio_channels.clone();
            } else {
                e.channels = self.image_channels.clone();
                e.feature_dim = self.image_feature_dim;
            }
        }
        if m == Modality::Transcript {
            c.fc_layers = self.transcript_layers.clone();
        }
        c.readout = self.readout;
        c.dropout_p = self.dropout_p;
        c
    }

    pub fn fused_config(&self, subnets: Vec<SubnetConfig>) -> FusedModelConfig {
        let mut f = FusedModelConfig::new(subnets);
        f.stage2_lstm_layers = self.stage2_lstm_layers;
        f.fusion_head = vec![self.fusion_hidden, 5];
        f.fusion_dropout_p = self.dropout_p;
        f
    }
}
