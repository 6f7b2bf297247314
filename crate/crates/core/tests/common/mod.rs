#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use ocean_fusion::pipeline::{Dataset, Predictor};
use ocean_fusion::preprocess::{FrameSequence, LogMelConfig, LogMelPatches, TranscriptEmbedding, VideoInputs};
use ocean_fusion::{DatasetManifest, Result, Split, TraitVector, VideoRecord};

pub fn record(id: &str, labels: [f64; 5], split: Split) -> VideoRecord {
    VideoRecord {
        id: id.to_string(),
        frames_path: PathBuf::from(format!("frames/{id}")),
        audio_path: PathBuf::from(format!("audio/{id}.wav")),
        transcript: String::new(),
        labels: Some(TraitVector::new(labels).unwrap()),
        split,
        duration_s: 1.0,
        fps: 1.0,
    }
}

/// Inputs with no media at all; only the id matters to a lookup predictor.
pub fn empty_inputs(id: &str) -> VideoInputs {
    let empty = FrameSequence {
        frames: vec![],
        timestamps_s: vec![],
    };
    VideoInputs {
        id: id.to_string(),
        ambient: empty.clone(),
        face: empty,
        logmel: LogMelPatches {
            patches: vec![],
            config: LogMelConfig::default(),
        },
        transcript: TranscriptEmbedding {
            vector: vec![],
            token_count: 0,
        },
    }
}

/// Predicts a fixed vector per video id.
pub struct Lookup(pub HashMap<String, TraitVector>);

impl Predictor for Lookup {
    fn predict(&self, inputs: &VideoInputs) -> Result<TraitVector> {
        Ok(self.0[&inputs.id])
    }

    fn describe(&self) -> String {
        "lookup".into()
    }
}

/// A labeled in-memory dataset and a predictor returning `preds[i]` for video `i`.
pub fn lookup_case(truths: &[[f64; 5]], preds: &[[f64; 5]], split: Split) -> (Dataset, Lookup) {
    let ids: Vec<String> = (0..truths.len()).map(|i| format!("v{i:05}")).collect();
    let manifest = DatasetManifest {
        records: ids.iter().zip(truths).map(|(id, t)| record(id, *t, split)).collect(),
        split_ratio: [3, 1, 1],
    };
    let videos = ids.iter().map(|id| empty_inputs(id)).collect();
    let lookup = ids
        .iter()
        .zip(preds)
        .map(|(id, p)| (id.clone(), TraitVector::new(*p).unwrap()))
        .collect();
    (Dataset::in_memory(manifest, videos).unwrap(), Lookup(lookup))
}
