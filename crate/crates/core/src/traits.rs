//! Big Five trait scores in canonical OCEAN order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five trait dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl Trait {
    pub const ALL: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
        }
    }

    /// Accepts the full lowercase name or the single OCEAN letter.
    pub fn parse(s: &str) -> Option<Trait> {
        let s = s.trim().to_ascii_lowercase();
        Trait::ALL
            .into_iter()
            .find(|t| t.name() == s || t.name()[..1] == s)
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Five trait scores, each finite and in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct TraitVector([f64; 5]);

impl TraitVector {
    pub fn new(values: [f64; 5]) -> Result<Self> {
        for t in Trait::ALL {
            let v = values[t.index()];
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "trait component {t} = {v} is outside [0, 1]"
                )));
            }
        }
        Ok(TraitVector(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; 5] = values
            .try_into()
            .map_err(|_| Error::shape("5 trait components", values.len()))?;
        Self::new(arr)
    }

    pub fn splat(v: f64) -> Result<Self> {
        Self::new([v; 5])
    }

    pub fn get(&self, t: Trait) -> f64 {
        self.0[t.index()]
    }

    pub fn as_array(&self) -> &[f64; 5] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

impl TryFrom<[f64; 5]> for TraitVector {
    type Error = Error;

    fn try_from(v: [f64; 5]) -> Result<Self> {
        TraitVector::new(v)
    }
}

impl From<TraitVector> for [f64; 5] {
    fn from(v: TraitVector) -> Self {
        v.0
    }
}

/// Component-wise `|truth - pred|` in OCEAN order.
pub fn absolute_trait_error(truth: &TraitVector, pred: &TraitVector) -> [f64; 5] {
    std::array::from_fn(|i| (truth.0[i] - pred.0[i]).abs())
}

/// Validating variant for raw inputs of unknown provenance.
pub fn absolute_trait_error_raw(truth: [f64; 5], pred: [f64; 5]) -> Result<[f64; 5]> {
    let truth = TraitVector::new(truth)?;
    let pred = TraitVector::new(pred)?;
    Ok(absolute_trait_error(&truth, &pred))
}
