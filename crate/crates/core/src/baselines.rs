//! Probability-only comparison models: a plain softmax network, MC dropout,
//! and a deep ensemble. Each reports `(p, normalized entropy)`.

use serde::{Deserialize, Serialize};

use crate::classifier::{softmax_private, train_head, Head, History, ModelCheckpoint, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evidential::{normalized_entropy, Probability};
use crate::losses::{LossConfig, RiskMatrix};
use crate::network::{check_dropout_rate, NetworkSpec};
use crate::special::RngSeed;

/// A probability for the private class and its normalized entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityOutput {
    pub p: f64,
    pub entropy: f64,
}

impl ProbabilityOutput {
    pub fn new(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        Self {
            p,
            entropy: normalized_entropy(Probability::new(p).expect("clamped")),
        }
    }

    pub fn probability(&self) -> Probability<f64> {
        Probability::new(self.p).expect("clamped on construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub passes: usize,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self { rate: 0.05, passes: 5 }
    }
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        check_dropout_rate(self.rate)?;
        if self.passes == 0 {
            return Err(Error::domain("MC dropout needs at least one pass"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    /// Added to the training seed for each member.
    pub member_seed_offsets: Vec<u64>,
}

impl EnsembleSpec {
    pub fn with_members(members: usize) -> Self {
        Self {
            members,
            member_seed_offsets: (0..members as u64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::domain("an ensemble needs at least one member"));
        }
        if self.member_seed_offsets.len() != self.members {
            return Err(Error::domain(format!(
                "{} members but {} seed offsets",
                self.members,
                self.member_seed_offsets.len()
            )));
        }
        let mut sorted = self.member_seed_offsets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.members {
            return Err(Error::domain("ensemble seed offsets must be distinct"));
        }
        Ok(())
    }
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self::with_members(5)
    }
}

fn require_softmax(model: &ModelCheckpoint) -> Result<()> {
    match model.head {
        Head::SoftmaxCrossEntropy | Head::SoftmaxBrier => Ok(()),
        Head::Evidential => Err(Error::domain("expected a softmax-head model")),
    }
}

/// Softmax network trained with binary cross-entropy.
pub fn snn_train(dataset: &Dataset, spec: NetworkSpec, tc: &TrainConfig) -> Result<(ModelCheckpoint, History)> {
    train_head(
        dataset,
        spec,
        tc,
        Head::SoftmaxCrossEntropy,
        LossConfig::default(),
        RiskMatrix::default(),
        0.0,
    )
}

pub fn snn_predict(model: &ModelCheckpoint, features: &[f64]) -> Result<ProbabilityOutput> {
    require_softmax(model)?;
    Ok(ProbabilityOutput::new(softmax_private(model.logits(features)?)))
}

/// Softmax network trained with dropout active on every hidden layer.
pub fn mc_dropout_train(
    dataset: &Dataset,
    spec: NetworkSpec,
    tc: &TrainConfig,
    d: &DropoutSpec,
) -> Result<(ModelCheckpoint, History)> {
    d.validate()?;
    train_head(
        dataset,
        spec,
        tc,
        Head::SoftmaxCrossEntropy,
        LossConfig::default(),
        RiskMatrix::default(),
        d.rate,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDropoutOutput {
    /// Mean probability over the passes, and the entropy of that mean.
    pub mean: ProbabilityOutput,
    pub per_pass: Vec<f64>,
}

/// Averages `d.passes` stochastic forward passes, each with its own
/// Bernoulli keep-mask per hidden unit.
pub fn mc_dropout_predict(
    model: &ModelCheckpoint,
    features: &[f64],
    d: &DropoutSpec,
    seed: RngSeed,
) -> Result<McDropoutOutput> {
    require_softmax(model)?;
    d.validate()?;
    let mut rng = seed.rng();
    let per_pass = (0..d.passes)
        .map(|_| {
            model
                .network()
                .logits_with_dropout(features, d.rate, &mut rng)
                .map(softmax_private)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_pass.iter().sum::<f64>() / per_pass.len() as f64;
    Ok(McDropoutOutput {
        mean: ProbabilityOutput::new(mean),
        per_pass,
    })
}

/// Trains `e.members` softmax networks on the Brier score, member `k` with
/// seed `tc.seed + e.member_seed_offsets[k]`.
pub fn ensemble_train(
    dataset: &Dataset,
    spec: NetworkSpec,
    tc: &TrainConfig,
    e: &EnsembleSpec,
) -> Result<Vec<(ModelCheckpoint, History)>> {
    e.validate()?;
    e.member_seed_offsets
        .iter()
        .map(|&offset| {
            let member_tc = TrainConfig {
                seed: RngSeed(tc.seed.0.wrapping_add(offset)),
                ..*tc
            };
            train_head(
                dataset,
                spec.clone(),
                &member_tc,
                Head::SoftmaxBrier,
                LossConfig::default(),
                RiskMatrix::default(),
                0.0,
            )
        })
        .collect()
}

/// Mean member probability and the entropy of that mean.
pub fn ensemble_predict(models: &[ModelCheckpoint], features: &[f64]) -> Result<ProbabilityOutput> {
    if models.is_empty() {
        return Err(Error::domain("ensemble has no members"));
    }
    let mut sum = 0.0;
    for m in models {
        require_softmax(m)?;
        sum += softmax_private(m.logits(features)?);
    }
    Ok(ProbabilityOutput::new(sum / models.len() as f64))
}
