//! The challenge "mean accuracy" metric: one minus mean absolute error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traits::{absolute_trait_error, TraitVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_trait_accuracy: [f64; 5],
    pub mean_accuracy: f64,
    pub n_videos: usize,
    /// Split the labels came from; recorded because validation and test may differ.
    #[serde(default)]
    pub split: String,
    #[serde(default)]
    pub model: String,
}

impl EvaluationReport {
    /// Builds a report from `(truth, prediction)` pairs.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a TraitVector, &'a TraitVector)>,
    {
        let mut sums = [0.0f64; 5];
        let mut n = 0usize;
        for (truth, pred) in pairs {
            let err = absolute_trait_error(truth, pred);
            for (s, e) in sums.iter_mut().zip(err) {
                *s += e;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Dataset("cannot evaluate an empty split".into()));
        }
        let per_trait_accuracy = sums.map(|s| 1.0 - s / n as f64);
        let mean_accuracy = per_trait_accuracy.iter().sum::<f64>() / 5.0;
        Ok(EvaluationReport {
            per_trait_accuracy,
            mean_accuracy,
            n_videos: n,
            split: String::new(),
            model: String::new(),
        })
    }

    pub fn with_context(mut self, split: &str, model: &str) -> Self {
        self.split = split.to_string();
        self.model = model.to_string();
        self
    }
}
