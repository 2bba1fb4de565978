//! The trainable model: an [`Mlp`] whose two logits become exponential
//! evidence, trained with the evidential objective and fine-tunable on a
//! user's own labels.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evidential::{BetaOpinion, EvidencePair, Probability};
use crate::losses::{evidence_from_logits, loss_and_gradient, Label, LossConfig, RiskMatrix};
use crate::network::{check_dropout_rate, AdamState, Mlp, NetworkSpec};
use crate::special::RngSeed;

/// Version written into new checkpoint files.
pub const FORMAT_VERSION: u32 = 1;

/// How the two logits are read and which objective trains them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Exponential evidence, evidential loss.
    #[default]
    Evidential,
    /// Softmax probabilities, binary cross-entropy.
    SoftmaxCrossEntropy,
    /// Softmax probabilities, Brier score.
    SoftmaxBrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay_per_epoch: f64,
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay_per_epoch: 0.95,
            seed: RngSeed(42),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::domain(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::domain(format!(
                "lr_decay_per_epoch must lie in (0, 1], got {}",
                self.lr_decay_per_epoch
            )));
        }
        Ok(())
    }
}

/// Training statistics for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Global epoch index `t` the epoch ran under (0-based).
    pub epoch: u64,
    pub mean_loss: f64,
    /// Training accuracy measured on the forward passes of the epoch.
    pub accuracy: f64,
}

pub type History = Vec<EpochStats>;

/// A per-sample objective over the two logits.
pub trait Objective {
    /// Loss and `∂loss/∂(o_0, o_1)` at global epoch `t`.
    fn loss_and_grad(&self, logits: [f64; 2], y: Label, t: u64) -> Result<(f64, [f64; 2])>;
    fn predict(&self, logits: [f64; 2]) -> Label;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidentialObjective {
    pub loss_config: LossConfig,
    pub risk_matrix: RiskMatrix,
}

impl Objective for EvidentialObjective {
    fn loss_and_grad(&self, logits: [f64; 2], y: Label, t: u64) -> Result<(f64, [f64; 2])> {
        loss_and_gradient(logits, y, &self.risk_matrix, t, &self.loss_config)
    }

    fn predict(&self, logits: [f64; 2]) -> Label {
        label_from_probability(evidence_from_logits(logits).opinion().expected_probability().value())
    }
}

/// Private-class softmax probability `σ(o_1 − o_0)`.
pub fn softmax_private(logits: [f64; 2]) -> f64 {
    let z = logits[1] - logits[0];
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Private iff `p > 0.5`; a tie goes to public.
pub fn label_from_probability(p: f64) -> Label {
    if p > 0.5 {
        Label::Private
    } else {
        Label::Public
    }
}

fn check_finite(logits: &[f64; 2]) -> Result<()> {
    if logits.iter().all(|o| o.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain("logits must be finite"))
    }
}

/// Binary cross-entropy on the softmax output.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SoftmaxCrossEntropy;

impl Objective for SoftmaxCrossEntropy {
    fn loss_and_grad(&self, logits: [f64; 2], y: Label, _t: u64) -> Result<(f64, [f64; 2])> {
        check_finite(&logits)?;
        let z = logits[1] - logits[0];
        // -ln σ(±z) = softplus(∓z)
        let signed = if y == Label::Private { -z } else { z };
        let loss = signed.max(0.0) + (-signed.abs()).exp().ln_1p();
        let d = softmax_private(logits) - y.indicator::<f64>();
        Ok((loss, [-d, d]))
    }

    fn predict(&self, logits: [f64; 2]) -> Label {
        label_from_probability(softmax_private(logits))
    }
}

/// Two-class Brier score `(p − y)² + ((1 − p) − (1 − y))²` on the softmax output.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SoftmaxBrier;

impl Objective for SoftmaxBrier {
    fn loss_and_grad(&self, logits: [f64; 2], y: Label, _t: u64) -> Result<(f64, [f64; 2])> {
        check_finite(&logits)?;
        let p = softmax_private(logits);
        let r = p - y.indicator::<f64>();
        let d = 4.0 * r * p * (1.0 - p);
        Ok((2.0 * r * r, [-d, d]))
    }

    fn predict(&self, logits: [f64; 2]) -> Label {
        label_from_probability(softmax_private(logits))
    }
}

/// Runs `tc.epochs` epochs of mini-batch Adam on `net`.
///
/// Examples are put in id order before the seeded shuffle, so the result
/// depends on the data and the seed only. `start_epoch` is the global epoch
/// index of the first epoch run here.
pub fn fit<O: Objective>(
    net: &mut Mlp,
    adam: &mut AdamState,
    data: &Dataset,
    tc: &TrainConfig,
    objective: &O,
    start_epoch: u64,
    dropout_rate: f64,
) -> Result<History> {
    tc.validate()?;
    check_dropout_rate(dropout_rate)?;
    if data.feature_dim() != net.spec().input_dim {
        return Err(Error::domain(format!(
            "dataset has {} features, network expects {}",
            data.feature_dim(),
            net.spec().input_dim
        )));
    }
    if tc.epochs > 0 && data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    if !adam.matches(net) {
        return Err(Error::domain("optimizer state does not match the network"));
    }

    let examples = data.examples();
    let mut order = data.canonical_order();
    let mut shuffle_rng = tc.seed.derive(1).rng();
    let mut dropout_rng = tc.seed.derive(2).rng();
    let dropout = dropout_rate > 0.0;
    let mut history = Vec::with_capacity(tc.epochs as usize);
    let mut lr = tc.learning_rate;

    for k in 0..u64::from(tc.epochs) {
        let t = start_epoch + k;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(tc.batch_size) {
            let mut grads = net.zero_grads();
            for &i in batch {
                let ex = &examples[i];
                let trace = if dropout {
                    net.trace(&ex.features, Some((dropout_rate, &mut dropout_rng)))?
                } else {
                    net.trace(&ex.features, None::<(f64, &mut rand_chacha::ChaCha8Rng)>)?
                };
                let (loss, g) = objective.loss_and_grad(trace.logits, ex.label(), t)?;
                loss_sum += loss;
                if objective.predict(trace.logits) == ex.label() {
                    correct += 1;
                }
                net.backward(&trace, g, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for layer in &mut grads {
                layer.weights.iter_mut().for_each(|w| *w *= scale);
                layer.bias.iter_mut().for_each(|b| *b *= scale);
            }
            adam.update(net, &grads, lr);
        }
        let n = examples.len() as f64;
        let stats = EpochStats {
            epoch: t,
            mean_loss: loss_sum / n,
            accuracy: correct as f64 / n,
        };
        log::debug!("epoch {t}: loss {:.6} acc {:.4} lr {lr:.3e}", stats.mean_loss, stats.accuracy);
        history.push(stats);
        lr *= tc.lr_decay_per_epoch;
    }
    Ok(history)
}

/// Network weights plus everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub head: Head,
    network: Mlp,
    pub optimizer: Option<AdamState>,
    /// Completed training epochs; the next epoch runs under this `t`.
    pub epoch_t: u64,
    pub loss_config: LossConfig,
    pub risk_matrix: RiskMatrix,
    pub feature_schema_id: String,
    /// Dropout rate applied to hidden layers during training.
    pub train_dropout: f64,
}

/// Evidential read-out of one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forward {
    pub logits: [f64; 2],
    pub evidence: EvidencePair<f64>,
    pub opinion: BetaOpinion<f64>,
    pub p_bar: Probability<f64>,
    pub uncertainty: f64,
}

impl Forward {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let evidence = evidence_from_logits(logits);
        let opinion = evidence.opinion();
        Self {
            logits,
            evidence,
            opinion,
            p_bar: opinion.expected_probability(),
            uncertainty: opinion.uncertainty(),
        }
    }
}

impl ModelCheckpoint {
    /// Untrained evidential model wrapping `network`.
    pub fn new(network: Mlp, feature_schema_id: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            head: Head::Evidential,
            network,
            optimizer: None,
            epoch_t: 0,
            loss_config: LossConfig::default(),
            risk_matrix: RiskMatrix::default(),
            feature_schema_id: feature_schema_id.into(),
            train_dropout: 0.0,
        }
    }

    /// All-zero weights and biases.
    pub fn zeros(spec: NetworkSpec, feature_schema_id: impl Into<String>) -> Result<Self> {
        Ok(Self::new(Mlp::zeros(spec)?, feature_schema_id))
    }

    /// Randomly initialized hidden layers under an all-zero output layer.
    /// Predicts exactly like [`ModelCheckpoint::zeros`] (zero logits for
    /// every input) but, unlike it, can be trained.
    pub fn zero_head(spec: NetworkSpec, seed: RngSeed, feature_schema_id: impl Into<String>) -> Result<Self> {
        let mut net = Mlp::init(spec, seed)?;
        if let Some(out) = net.layers_mut().last_mut() {
            out.weights.iter_mut().for_each(|w| *w = 0.0);
            out.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        Ok(Self::new(net, feature_schema_id))
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_risk_matrix(mut self, r: RiskMatrix) -> Self {
        self.risk_matrix = r;
        self
    }

    pub fn with_loss_config(mut self, cfg: LossConfig) -> Self {
        self.loss_config = cfg;
        self
    }

    pub fn network(&self) -> &Mlp {
        &self.network
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.network.spec()
    }

    pub fn logits(&self, features: &[f64]) -> Result<[f64; 2]> {
        self.network.logits(features)
    }

    pub fn forward(&self, features: &[f64]) -> Result<Forward> {
        Ok(Forward::from_logits(self.network.logits(features)?))
    }

    pub fn forward_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Forward>> {
        inputs.iter().map(|x| self.forward(x)).collect()
    }

    /// Runs `tc.epochs` more epochs on `data` with this checkpoint's objective,
    /// continuing the optimizer state and the epoch counter.
    pub fn continue_training(&mut self, data: &Dataset, tc: &TrainConfig) -> Result<History> {
        if data.schema_id() != self.feature_schema_id {
            return Err(Error::domain(format!(
                "dataset schema {:?} does not match model schema {:?}",
                data.schema_id(),
                self.feature_schema_id
            )));
        }
        let mut adam = match self.optimizer.take() {
            Some(state) if state.matches(&self.network) => state,
            _ => AdamState::new(&self.network),
        };
        let result = match self.head {
            Head::Evidential => {
                let objective = EvidentialObjective {
                    loss_config: self.loss_config,
                    risk_matrix: self.risk_matrix,
                };
                self.loss_config.validate()?;
                fit(&mut self.network, &mut adam, data, tc, &objective, self.epoch_t, self.train_dropout)
            }
            Head::SoftmaxCrossEntropy => fit(
                &mut self.network,
                &mut adam,
                data,
                tc,
                &SoftmaxCrossEntropy,
                self.epoch_t,
                self.train_dropout,
            ),
            Head::SoftmaxBrier => fit(
                &mut self.network,
                &mut adam,
                data,
                tc,
                &SoftmaxBrier,
                self.epoch_t,
                self.train_dropout,
            ),
        };
        self.optimizer = Some(adam);
        let history = result?;
        self.epoch_t += u64::from(tc.epochs);
        Ok(history)
    }
}

fn check_input_dim(dataset: &Dataset, spec: &NetworkSpec) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    if dataset.feature_dim() != spec.input_dim {
        return Err(Error::domain(format!(
            "dataset has {} features, network expects {}",
            dataset.feature_dim(),
            spec.input_dim
        )));
    }
    Ok(())
}

/// Trains a fresh model with the given head from a seeded initialization.
pub fn train_head(
    dataset: &Dataset,
    spec: NetworkSpec,
    tc: &TrainConfig,
    head: Head,
    lc: LossConfig,
    risk: RiskMatrix,
    dropout_rate: f64,
) -> Result<(ModelCheckpoint, History)> {
    spec.validate()?;
    tc.validate()?;
    lc.validate()?;
    check_dropout_rate(dropout_rate)?;
    check_input_dim(dataset, &spec)?;
    let network = Mlp::init(spec, tc.seed.derive(0))?;
    let mut model = ModelCheckpoint::new(network, dataset.schema_id())
        .with_head(head)
        .with_loss_config(lc)
        .with_risk_matrix(risk);
    model.train_dropout = dropout_rate;
    let history = model.continue_training(dataset, tc)?;
    Ok((model, history))
}

/// Round I: trains an evidential model from scratch.
pub fn train(
    dataset: &Dataset,
    spec: NetworkSpec,
    tc: &TrainConfig,
    lc: LossConfig,
    risk: RiskMatrix,
) -> Result<(ModelCheckpoint, History)> {
    train_head(dataset, spec, tc, Head::Evidential, lc, risk, 0.0)
}

/// Round II: continues training `base` on personal data. The architecture,
/// loss configuration and risk matrix of `base` are kept; the annealing
/// epoch continues from `base.epoch_t`.
pub fn fine_tune(base: &ModelCheckpoint, personal: &Dataset, tc: &TrainConfig) -> Result<(ModelCheckpoint, History)> {
    if personal.schema_id() != base.feature_schema_id {
        return Err(Error::domain(format!(
            "personal dataset schema {:?} does not match model schema {:?}",
            personal.schema_id(),
            base.feature_schema_id
        )));
    }
    if tc.epochs > 0 {
        check_input_dim(personal, base.spec())?;
    }
    let mut model = base.clone();
    let history = model.continue_training(personal, tc)?;
    Ok((model, history))
}
