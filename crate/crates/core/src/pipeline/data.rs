//! Manifest-backed datasets whose per-video inputs come from memory, from a
//! preprocess cache directory, or straight from media.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DetectorKind, TrainConfig};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split, VideoRecord};
use crate::nn::Container;
use crate::preprocess::{
    prepare_video, CenterRegionDetector, FaceDetector, Frontends, HashEmbedder, LogMelConfig, PassthroughDetector,
    VideoInputs,
};
use crate::traits::TraitVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub detector: DetectorKind,
    pub face_fraction: f64,
    pub embedder_seed: u64,
    pub log_mel: LogMelConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for FrontendConfig {
    fn from(c: &TrainConfig) -> Self {
        FrontendConfig {
            detector: c.detector,
            face_fraction: c.face_fraction,
            embedder_seed: c.embedder_seed,
            log_mel: c.log_mel(),
        }
    }
}

impl FrontendConfig {
    pub fn prepare(&self, record: &VideoRecord, base: &Path) -> Result<VideoInputs> {
        let center = CenterRegionDetector {
            fraction: self.face_fraction,
        };
        let detector: &dyn FaceDetector = match self.detector {
            DetectorKind::Center => &center,
            DetectorKind::Passthrough => &PassthroughDetector,
        };
        let embedder = HashEmbedder {
            seed: self.embedder_seed,
        };
        let fe = Frontends {
            detector,
            embedder: &embedder,
            log_mel: self.log_mel.clone(),
        };
        prepare_video(record, base, &fe)
    }
}

enum Source {
    Memory(Vec<VideoInputs>),
    Media {
        base: PathBuf,
        frontend: FrontendConfig,
        cache: Option<PathBuf>,
    },
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    source: Source,
}

pub fn cache_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.inputs"))
}

impl Dataset {
    /// `videos[i]` must belong to `manifest.records[i]`.
    pub fn in_memory(manifest: DatasetManifest, videos: Vec<VideoInputs>) -> Result<Self> {
        if videos.len() != manifest.records.len() {
            return Err(Error::Dataset(format!(
                "{} prepared videos for {} records",
                videos.len(),
                manifest.records.len()
            )));
        }
        if let Some((r, v)) = manifest.records.iter().zip(&videos).find(|(r, v)| r.id != v.id) {
            return Err(Error::Dataset(format!("record `{}` paired with inputs of `{}`", r.id, v.id)));
        }
        Ok(Dataset {
            manifest,
            source: Source::Memory(videos),
        })
    }

    /// Media paths resolve against `base`.
    pub fn from_media(manifest: DatasetManifest, base: &Path, frontend: FrontendConfig) -> Self {
        Dataset {
            manifest,
            source: Source::Media {
                base: base.to_path_buf(),
                frontend,
                cache: None,
            },
        }
    }

    /// Media paths resolve against the manifest's directory.
    pub fn open(manifest_path: &Path, frontend: FrontendConfig) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Ok(Self::from_media(manifest, base, frontend))
    }

    /// Reads `<id>.inputs` files from `dir` when present.
    pub fn with_cache_dir(mut self, dir: &Path) -> Self {
        if let Source::Media { cache, .. } = &mut self.source {
            *cache = Some(dir.to_path_buf());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn record(&self, i: usize) -> &VideoRecord {
        &self.manifest.records[i]
    }

    pub fn inputs(&self, i: usize) -> Result<Cow<'_, VideoInputs>> {
        match &self.source {
            Source::Memory(v) => Ok(Cow::Borrowed(&v[i])),
            Source::Media { base, frontend, cache } => {
                let record = self.record(i);
                if let Some(dir) = cache {
                    let path = cache_file(dir, &record.id);
                    if path.exists() {
                        let (c, _) = Container::load(&path)?;
                        let v = VideoInputs::from_container(&c).map_err(|e| e.for_sample(&record.id))?;
                        return Ok(Cow::Owned(v));
                    }
                }
                Ok(Cow::Owned(frontend.prepare(record, base)?))
            }
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.record(i).split == split).collect()
    }

    /// Indices of `split`, failing on the first record without labels.
    pub fn labeled(&self, split: Split) -> Result<Vec<usize>> {
        let idx = self.indices(split);
        if let Some(&i) = idx.iter().find(|&&i| self.record(i).labels.is_none()) {
            return Err(Error::Dataset(format!("record `{}` in the {split} split has no labels", self.record(i).id)));
        }
        Ok(idx)
    }

    pub fn label(&self, i: usize) -> Result<TraitVector> {
        self.record(i)
            .labels
            .ok_or_else(|| Error::Dataset(format!("record `{}` has no labels", self.record(i).id)))
    }

    /// Writes every video's prepared inputs to `dir`; returns the file paths.
    pub fn write_cache(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        (0..self.len())
            .map(|i| {
                let path = cache_file(dir, &self.record(i).id);
                self.inputs(i)?.to_container()?.save(&path)?;
                Ok(path)
            })
            .collect()
    }
}
