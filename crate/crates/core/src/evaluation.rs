//! Dataset-level prediction for every model family, plus the comparisons
//! built on them.

use serde::{Deserialize, Serialize};

use crate::baselines::{ensemble_predict, mc_dropout_predict, snn_predict, DropoutSpec};
use crate::classifier::ModelCheckpoint;
use crate::data::Dataset;
use crate::decision::{randomization_test, sweep_delegation_rates, Channel, Prediction};
use crate::error::{Error, Result};
use crate::special::RngSeed;

pub fn evidential_predictions(model: &ModelCheckpoint, ds: &Dataset, theta: f64) -> Result<Vec<Prediction>> {
    ds.examples()
        .iter()
        .map(|ex| Ok(Prediction::from_opinion(&ex.id, &model.forward(&ex.features)?.opinion, theta)))
        .collect()
}

pub fn snn_predictions(model: &ModelCheckpoint, ds: &Dataset, theta: f64) -> Result<Vec<Prediction>> {
    ds.examples()
        .iter()
        .map(|ex| Ok(Prediction::from_probability(&ex.id, snn_predict(model, &ex.features)?.probability(), theta)))
        .collect()
}

/// Item `i` draws its masks from `seed.derive(i)`.
pub fn mc_dropout_predictions(
    model: &ModelCheckpoint,
    ds: &Dataset,
    d: &DropoutSpec,
    seed: RngSeed,
    theta: f64,
) -> Result<Vec<Prediction>> {
    ds.examples()
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let out = mc_dropout_predict(model, &ex.features, d, seed.derive(i as u64))?;
            Ok(Prediction::from_probability(&ex.id, out.mean.probability(), theta))
        })
        .collect()
}

pub fn ensemble_predictions(models: &[ModelCheckpoint], ds: &Dataset, theta: f64) -> Result<Vec<Prediction>> {
    ds.examples()
        .iter()
        .map(|ex| Ok(Prediction::from_probability(&ex.id, ensemble_predict(models, &ex.features)?.probability(), theta)))
        .collect()
}

/// Accuracy on the `coverage` fraction of items with the lowest channel value.
pub fn accuracy_at_coverage(predictions: &[Prediction], ds: &Dataset, coverage: f64, channel: Channel) -> Result<f64> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::domain(format!("coverage must lie in (0, 1], got {coverage}")));
    }
    let point = sweep_delegation_rates(predictions, &ds.labels(), &[1.0 - coverage], channel)?.remove(0);
    point
        .metrics
        .map(|m| m.accuracy)
        .ok_or_else(|| Error::domain("no items retained"))
}

pub fn error_indicators(predictions: &[Prediction], ds: &Dataset) -> Vec<bool> {
    predictions
        .iter()
        .zip(ds.examples())
        .map(|(p, ex)| !p.is_correct(ex.label()))
        .collect()
}

/// Side-by-side summary of two models on the same items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub accuracy: f64,
    pub accuracy_at_half_coverage: f64,
    /// Paired randomization p-value against the reference model.
    pub p_value: f64,
}

pub fn compare_against(
    name: &str,
    reference: &[Prediction],
    other: &[Prediction],
    ds: &Dataset,
    iterations: usize,
    seed: RngSeed,
) -> Result<Comparison> {
    let errors = error_indicators(other, ds);
    let acc = 1.0 - errors.iter().filter(|&&e| e).count() as f64 / errors.len().max(1) as f64;
    Ok(Comparison {
        name: name.to_string(),
        accuracy: acc,
        accuracy_at_half_coverage: accuracy_at_coverage(other, ds, 0.5, Channel::Entropy)?,
        p_value: randomization_test(&error_indicators(reference, ds), &errors, iterations, seed)?,
    })
}
