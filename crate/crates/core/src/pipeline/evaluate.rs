//! Mean-accuracy evaluation of a trained model over a labeled split.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{forward_fused, FusedCheckpoint, FusedModel};
use crate::manifest::Split;
use crate::metrics::EvaluationReport;
use crate::nn::Container;
use crate::preprocess::VideoInputs;
use crate::subnets::{Subnet, SubnetCheckpoint};
use crate::traits::TraitVector;

use super::data::Dataset;

pub trait Predictor {
    fn predict(&self, inputs: &VideoInputs) -> Result<TraitVector>;
    fn describe(&self) -> String;
}

impl Predictor for Subnet {
    fn predict(&self, inputs: &VideoInputs) -> Result<TraitVector> {
        Subnet::predict(self, inputs)
    }

    fn describe(&self) -> String {
        format!("{} subnet", self.modality())
    }
}

impl Predictor for FusedModel {
    fn predict(&self, inputs: &VideoInputs) -> Result<TraitVector> {
        forward_fused(self, inputs)
    }

    fn describe(&self) -> String {
        "fused".into()
    }
}

/// Either checkpoint kind, told apart by the container's `kind` field.
pub enum LoadedModel {
    Subnet(Subnet),
    Fused(FusedModel),
}

impl LoadedModel {
    pub fn from_container(c: &Container) -> Result<Self> {
        match c.config.get("kind").and_then(|k| k.as_str()) {
            Some("subnet") => Ok(LoadedModel::Subnet(SubnetCheckpoint::from_container(c)?.to_subnet()?)),
            Some("fused") => Ok(LoadedModel::Fused(FusedCheckpoint::from_container(c)?.to_model()?)),
            other => Err(Error::Checkpoint(format!("unknown checkpoint kind {other:?}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?.0)
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            LoadedModel::Subnet(s) => s,
            LoadedModel::Fused(f) => f,
        }
    }
}

/// Scores `split` using the first `window` timesteps of every video.
pub fn evaluate(model: &dyn Predictor, dataset: &Dataset, split: Split, window: usize) -> Result<EvaluationReport> {
    let idx = dataset.labeled(split)?;
    let mut pairs = Vec::with_capacity(idx.len());
    for i in idx {
        let inputs = dataset.inputs(i)?;
        let pred = model.predict(&inputs.head(window)).map_err(|e| e.for_sample(&inputs.id))?;
        pairs.push((dataset.label(i)?, pred));
    }
    Ok(EvaluationReport::from_pairs(pairs.iter().map(|(t, p)| (t, p)))?.with_context(split.name(), &model.describe()))
}
