//! Deterministic media frontends: frame sampling and resizing, photometric
//! augmentation, face crops, log-mel patches and transcript embeddings.

pub mod audio;
pub mod augment;
pub mod face;
pub mod frames;
pub mod image;
pub mod text;

use std::path::Path;

use serde_json::json;

pub use audio::{compute_log_mel, LogMelConfig, LogMelPatches};
pub use augment::{augment, AugmentationConfig};
pub use face::{extract_face_frames, CenterRegionDetector, FaceDetector, PassthroughDetector};
pub use frames::{sample_frames, FrameSequence};
pub use image::{resize_and_scale, Image, FRAME_SIZE};
pub use text::{embed_transcript, HashEmbedder, TextEmbedder, TranscriptEmbedding, EMBEDDING_DIM};

use crate::error::{Error, Result};
use crate::manifest::VideoRecord;
use crate::nn::{Container, Tensor};

/// All four modality inputs for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInputs {
    pub id: String,
    pub ambient: FrameSequence,
    pub face: FrameSequence,
    pub logmel: LogMelPatches,
    pub transcript: TranscriptEmbedding,
}

pub struct Frontends<'a> {
    pub detector: &'a dyn FaceDetector,
    pub embedder: &'a dyn TextEmbedder,
    pub log_mel: LogMelConfig,
}

/// Loads and prepares every modality input for a manifest record; relative
/// media paths are resolved against `base`.
pub fn prepare_video(record: &VideoRecord, base: &Path, fe: &Frontends) -> Result<VideoInputs> {
    let run = || -> Result<VideoInputs> {
        let ambient = frames::load_sampled_frames(&base.join(&record.frames_path), record.fps, record.duration_s)?;
        let face = extract_face_frames(&ambient, fe.detector)?;
        let logmel = audio::load_log_mel(&base.join(&record.audio_path), &fe.log_mel)?;
        if logmel.is_empty() {
            return Err(Error::EmptyMedia("audio shorter than one patch".into()));
        }
        let transcript = embed_transcript(&record.id, &record.transcript, fe.embedder)?;
        Ok(VideoInputs {
            id: record.id.clone(),
            ambient,
            face,
            logmel,
            transcript,
        })
    };
    run().map_err(|e| match e {
        Error::Sample { .. } => e,
        Error::FaceAbsent(_) => Error::FaceAbsent(record.id.clone()),
        other => other.for_sample(&record.id),
    })
}

fn frames_tensor(seq: &FrameSequence) -> Result<Tensor> {
    let f = &seq.frames[0];
    let data = seq.frames.iter().flat_map(|f| f.data.iter().copied()).collect();
    Tensor::new(vec![seq.len(), f.height, f.width, f.channels], data)
}

fn frames_from(t: &Tensor, timestamps: Vec<f64>) -> Result<FrameSequence> {
    let s = t.shape();
    if s.len() != 4 || s[0] != timestamps.len() {
        return Err(Error::Format(format!("frame tensor shape {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    let frames = t
        .data()
        .chunks_exact(per)
        .map(|c| Image::new(s[1], s[2], s[3], c.to_vec()))
        .collect::<Result<_>>()?;
    Ok(FrameSequence {
        frames,
        timestamps_s: timestamps,
    })
}

fn de<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Format(e.to_string()))
}

impl VideoInputs {
    /// First `n` frames, face crops and patches.
    pub fn head(&self, n: usize) -> VideoInputs {
        VideoInputs {
            id: self.id.clone(),
            ambient: self.ambient.head(n),
            face: self.face.head(n),
            logmel: self.logmel.head(n),
            transcript: self.transcript.clone(),
        }
    }

    /// Cache container with keys `ambient_frames`, `face_frames`,
    /// `logmel_patches` and `transcript_embedding`.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(json!({
            "kind": "video_inputs",
            "id": self.id,
            "ambient_timestamps_s": self.ambient.timestamps_s,
            "face_timestamps_s": self.face.timestamps_s,
            "log_mel": self.logmel.config,
            "token_count": self.transcript.token_count,
        }));
        c.tensors.insert("ambient_frames".into(), frames_tensor(&self.ambient)?);
        c.tensors.insert("face_frames".into(), frames_tensor(&self.face)?);
        let cfg = &self.logmel.config;
        c.tensors.insert(
            "logmel_patches".into(),
            Tensor::new(
                vec![self.logmel.len(), cfg.patch_frames, cfg.bands],
                self.logmel.patches.concat(),
            )?,
        );
        c.tensors.insert(
            "transcript_embedding".into(),
            Tensor::from_vec(self.transcript.vector.clone()),
        );
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<VideoInputs> {
        let get = |k: &str| {
            c.tensors
                .get(k)
                .ok_or_else(|| Error::Format(format!("cache missing `{k}`")))
        };
        let field = |k: &str| {
            c.config
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("cache config missing `{k}`")))
        };
        let log_mel: LogMelConfig = de(field("log_mel")?)?;
        let mel = get("logmel_patches")?;
        let patches = mel
            .data()
            .chunks_exact(log_mel.patch_frames * log_mel.bands)
            .map(<[f64]>::to_vec)
            .collect();
        Ok(VideoInputs {
            id: de(field("id")?)?,
            ambient: frames_from(get("ambient_frames")?, de(field("ambient_timestamps_s")?)?)?,
            face: frames_from(get("face_frames")?, de(field("face_timestamps_s")?)?)?,
            logmel: LogMelPatches {
                patches,
                config: log_mel,
            },
            transcript: TranscriptEmbedding::new(get("transcript_embedding")?.data().to_vec(), de(field("token_count")?)?)?,
        })
    }
}
