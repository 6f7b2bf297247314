use super::lstm::logistic;
use crate::error::{Error, Result};
use crate::traits::TraitVector;

/// Componentwise logistic of five logits into a trait vector.
pub fn sigmoid_head(x: &[f64]) -> Result<TraitVector> {
    if x.len() != 5 {
        return Err(Error::shape("5 logits", x.len()));
    }
    if let Some(v) = x.iter().find(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("head input {v}")));
    }
    TraitVector::from_slice(&x.iter().map(|&v| logistic(v)).collect::<Vec<_>>())
}

/// Gradient of the logistic given its output.
pub fn sigmoid_backward(outputs: &[f64], dy: &[f64]) -> Vec<f64> {
    outputs.iter().zip(dy).map(|(s, g)| g * s * (1.0 - s)).collect()
}
