//! Multimodal apparent-personality recognition: four modality networks
//! (scene frames, face crops, audio log-mel patches, transcript embeddings)
//! trained one at a time, then fused at the feature level and fine-tuned.

pub mod btl;
pub mod error;
pub mod fusion;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod subnets;
pub mod traits;

pub use error::{Error, Result};
pub use manifest::{parse_manifest, serialize_manifest, split_dataset, DatasetManifest, Split, VideoRecord};
pub use metrics::EvaluationReport;
pub use traits::{absolute_trait_error, Trait, TraitVector};
