//! Acting on predictions: threshold delegation, confusion-matrix metrics,
//! coverage sweeps, uncertainty histograms and paired significance tests.

use std::cmp::Ordering;

use num_traits::{FromPrimitive, Num};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{normalized_entropy, BetaOpinion, Probability};
use crate::losses::{Label, RiskMatrix};
use crate::special::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub risk_matrix: RiskMatrix,
    /// Delegate when the uncertainty is strictly above this value.
    pub theta: f64,
    pub persona_name: String,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            risk_matrix: RiskMatrix::non_sensitive(),
            theta: 0.7,
            persona_name: "non-sensitive".into(),
        }
    }
}

impl PersonaConfig {
    pub fn sensitive() -> Self {
        Self {
            risk_matrix: RiskMatrix::sensitive(),
            persona_name: "sensitive".into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::domain(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Share,
    NotShare,
    Delegate,
}

/// Delegate iff `u > θ`; otherwise act on the label that `p̄` dictates.
pub fn decide(p_bar: Probability<f64>, u: f64, theta: f64) -> Action {
    if u > theta {
        Action::Delegate
    } else {
        match predicted_label(p_bar) {
            Label::Private => Action::NotShare,
            Label::Public => Action::Share,
        }
    }
}

/// Private iff `p̄ > 0.5`.
pub fn predicted_label(p_bar: Probability<f64>) -> Label {
    if p_bar.value() > 0.5 {
        Label::Private
    } else {
        Label::Public
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub p_bar: Probability<f64>,
    /// Uncertainty used for delegation. Models without an evidential head
    /// report their normalized entropy here.
    pub uncertainty_u: f64,
    pub entropy: f64,
    pub predicted_label: Label,
    pub action: Action,
}

impl Prediction {
    pub fn new(item_id: impl Into<String>, p_bar: Probability<f64>, uncertainty_u: f64, theta: f64) -> Self {
        Self {
            item_id: item_id.into(),
            p_bar,
            uncertainty_u,
            entropy: normalized_entropy(p_bar),
            predicted_label: predicted_label(p_bar),
            action: decide(p_bar, uncertainty_u, theta),
        }
    }

    pub fn from_opinion(item_id: impl Into<String>, op: &BetaOpinion<f64>, theta: f64) -> Self {
        Self::new(item_id, op.expected_probability(), op.uncertainty(), theta)
    }

    /// For probability-only models: entropy stands in for `u`.
    pub fn from_probability(item_id: impl Into<String>, p: Probability<f64>, theta: f64) -> Self {
        Self::new(item_id, p, normalized_entropy(p), theta)
    }

    pub fn is_correct(&self, gold: Label) -> bool {
        self.predicted_label == gold
    }

    /// The value a sweep filters on.
    pub fn channel_value(&self, channel: Channel) -> f64 {
        match channel {
            Channel::U => self.uncertainty_u,
            Channel::Entropy => self.entropy,
        }
    }
}

/// Which uncertainty a sweep filters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    U,
    Entropy,
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(Channel::U),
            "entropy" => Ok(Channel::Entropy),
            other => Err(Error::domain(format!("unknown channel {other:?} (expected u or entropy)"))),
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::U => "u",
            Channel::Entropy => "entropy",
        })
    }
}

/// Counts with "private" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[Label], gold: &[Label]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::domain(format!(
                "{} predictions but {} gold labels",
                predicted.len(),
                gold.len()
            )));
        }
        let mut c = Confusion::default();
        for (p, g) in predicted.iter().zip(gold) {
            match (g, p) {
                (Label::Private, Label::Private) => c.tp += 1,
                (Label::Public, Label::Private) => c.fp += 1,
                (Label::Private, Label::Public) => c.fn_ += 1,
                (Label::Public, Label::Public) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with "public" as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    /// Gold items of this class.
    pub support: usize,
}

/// Confusion-matrix metrics. Overall precision, recall and F1 are macro
/// averages of the two per-class values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T = f64> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub private: ClassMetrics<T>,
    pub public: ClassMetrics<T>,
    pub support: usize,
    /// Fraction of items not delegated.
    pub coverage: T,
    pub delegated: usize,
}

/// Numeric types metrics can be computed in; `f64` or an exact rational.
pub trait MetricValue: Num + FromPrimitive + Copy + PartialOrd {}
impl<T: Num + FromPrimitive + Copy + PartialOrd> MetricValue for T {}

fn count<T: MetricValue>(n: usize) -> T {
    T::from_usize(n).expect("count representable")
}

/// `num/den`, with `0/0` resolved to `empty`.
fn ratio<T: MetricValue>(num: usize, den: usize, empty: T) -> T {
    if den == 0 {
        empty
    } else {
        count::<T>(num) / count::<T>(den)
    }
}

fn class_metrics<T: MetricValue>(c: &Confusion) -> ClassMetrics<T> {
    // A class that is neither present nor predicted has nothing to get wrong.
    let absent = c.tp + c.fp + c.fn_ == 0;
    let vacuous = if absent { T::one() } else { T::zero() };
    let precision = ratio(c.tp, c.tp + c.fp, vacuous);
    let recall = ratio(c.tp, c.tp + c.fn_, vacuous);
    let f1 = if absent {
        T::one()
    } else {
        // 2·tp / (2·tp + fp + fn), equal to the harmonic mean of precision and recall
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, T::zero())
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: c.tp + c.fn_,
    }
}

impl<T: MetricValue> MetricsReport<T> {
    /// Metrics of a confusion matrix with full coverage.
    pub fn from_confusion(c: &Confusion) -> Self {
        let private = class_metrics::<T>(c);
        let public = class_metrics::<T>(&c.swapped());
        let two = T::one() + T::one();
        Self {
            accuracy: ratio(c.tp + c.tn, c.total(), T::zero()),
            precision: (private.precision + public.precision) / two,
            recall: (private.recall + public.recall) / two,
            f1: (private.f1 + public.f1) / two,
            private,
            public,
            support: c.total(),
            coverage: T::one(),
            delegated: 0,
        }
    }
}

/// Metrics of predicted labels against gold labels.
pub fn label_metrics<T: MetricValue>(predicted: &[Label], gold: &[Label]) -> Result<MetricsReport<T>> {
    if predicted.is_empty() {
        return Err(Error::domain("metrics need at least one item"));
    }
    Ok(MetricsReport::from_confusion(&Confusion::from_labels(predicted, gold)?))
}

/// Metrics of the predicted labels of every item; `coverage` is the
/// fraction whose action is not [`Action::Delegate`].
pub fn compute_metrics(predictions: &[Prediction], gold: &[Label]) -> Result<MetricsReport> {
    let labels: Vec<Label> = predictions.iter().map(|p| p.predicted_label).collect();
    let mut report = label_metrics::<f64>(&labels, gold)?;
    report.delegated = predictions.iter().filter(|p| p.action == Action::Delegate).count();
    report.coverage = 1.0 - report.delegated as f64 / predictions.len() as f64;
    Ok(report)
}

/// One point of a threshold or delegation-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// θ or delegation rate.
    pub value: f64,
    pub coverage: f64,
    pub retained: usize,
    /// `None` when nothing is retained.
    pub metrics: Option<MetricsReport>,
}

fn subset_metrics(predictions: &[Prediction], gold: &[Label], keep: &[usize]) -> Option<MetricsReport> {
    if keep.is_empty() {
        return None;
    }
    let labels: Vec<Label> = keep.iter().map(|&i| predictions[i].predicted_label).collect();
    let g: Vec<Label> = keep.iter().map(|&i| gold[i]).collect();
    label_metrics(&labels, &g).ok()
}

fn check_aligned(predictions: &[Prediction], gold: &[Label]) -> Result<()> {
    if predictions.len() != gold.len() {
        return Err(Error::domain(format!(
            "{} predictions but {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::domain("sweeps need at least one item"));
    }
    Ok(())
}

/// Metrics over the items whose channel value is strictly below θ. A
/// threshold of one or more keeps every item.
pub fn sweep_thresholds(
    predictions: &[Prediction],
    gold: &[Label],
    thetas: &[f64],
    channel: Channel,
) -> Result<Vec<SweepPoint>> {
    check_aligned(predictions, gold)?;
    thetas
        .iter()
        .map(|&theta| {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::domain(format!("theta must lie in [0, 1], got {theta}")));
            }
            let keep: Vec<usize> = (0..predictions.len())
                .filter(|&i| theta >= 1.0 || predictions[i].channel_value(channel) < theta)
                .collect();
            Ok(SweepPoint {
                value: theta,
                coverage: keep.len() as f64 / predictions.len() as f64,
                retained: keep.len(),
                metrics: subset_metrics(predictions, gold, &keep),
            })
        })
        .collect()
}

/// Number of items delegated at rate `r` out of `n`: `⌈r·n⌉`.
pub fn delegated_count(rate: f64, n: usize) -> usize {
    // guard against 0.25·100 landing a hair above 25
    let raw = (rate * n as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(n)
}

/// Metrics after delegating the `⌈r·N⌉` most uncertain items (ties broken by
/// ascending item id).
pub fn sweep_delegation_rates(
    predictions: &[Prediction],
    gold: &[Label],
    rates: &[f64],
    channel: Channel,
) -> Result<Vec<SweepPoint>> {
    check_aligned(predictions, gold)?;
    let mut ranked: Vec<usize> = (0..predictions.len()).collect();
    ranked.sort_by(|&a, &b| {
        let (pa, pb) = (&predictions[a], &predictions[b]);
        pb.channel_value(channel)
            .partial_cmp(&pa.channel_value(channel))
            .unwrap_or(Ordering::Equal)
            .then_with(|| pa.item_id.cmp(&pb.item_id))
    });
    let n = predictions.len();
    rates
        .iter()
        .map(|&rate| {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::domain(format!("delegation rate must lie in [0, 1), got {rate}")));
            }
            let mut keep = ranked[delegated_count(rate, n)..].to_vec();
            keep.sort_unstable();
            Ok(SweepPoint {
                value: rate,
                coverage: keep.len() as f64 / n as f64,
                retained: keep.len(),
                metrics: subset_metrics(predictions, gold, &keep),
            })
        })
        .collect()
}

/// Percentages of `u` per bin for one group of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramGroup {
    pub count: usize,
    /// `None` for an empty group.
    pub percentages: Option<Vec<f64>>,
    pub mean_u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub failed: HistogramGroup,
    pub successful: HistogramGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyHistogram {
    /// `bins + 1` equally spaced edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub private: ClassHistogram,
    pub public: ClassHistogram,
}

fn histogram_group(values: &[f64], bins: usize) -> HistogramGroup {
    if values.is_empty() {
        return HistogramGroup {
            count: 0,
            percentages: None,
            mean_u: None,
        };
    }
    let mut counts = vec![0usize; bins];
    for &u in values {
        let b = ((u.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    HistogramGroup {
        count: values.len(),
        percentages: Some(counts.iter().map(|&c| 100.0 * c as f64 / n).collect()),
        mean_u: Some(values.iter().sum::<f64>() / n),
    }
}

/// Per gold class, histograms of `u` for failed and for successful predictions.
pub fn uncertainty_histogram(predictions: &[Prediction], gold: &[Label], bins: usize) -> Result<UncertaintyHistogram> {
    if bins < 2 {
        return Err(Error::domain(format!("histogram needs at least 2 bins, got {bins}")));
    }
    if predictions.len() != gold.len() {
        return Err(Error::domain("predictions and gold labels differ in length"));
    }
    let class = |label: Label| {
        let mut failed = Vec::new();
        let mut ok = Vec::new();
        for (p, g) in predictions.iter().zip(gold) {
            if *g == label {
                if p.is_correct(*g) { &mut ok } else { &mut failed }.push(p.uncertainty_u);
            }
        }
        ClassHistogram {
            failed: histogram_group(&failed, bins),
            successful: histogram_group(&ok, bins),
        }
    };
    Ok(UncertaintyHistogram {
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        private: class(Label::Private),
        public: class(Label::Public),
    })
}

pub const MIN_RANDOMIZATION_ITERATIONS: usize = 1000;

/// Two-sided paired randomization test on the mean difference of two error
/// indicator vectors. Each iteration flips the sign of every paired
/// difference with probability one half.
pub fn randomization_test(errors_a: &[bool], errors_b: &[bool], iterations: usize, seed: RngSeed) -> Result<f64> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::domain(format!(
            "paired error vectors differ in length ({} vs {})",
            errors_a.len(),
            errors_b.len()
        )));
    }
    if errors_a.is_empty() {
        return Err(Error::domain("randomization test needs at least one pair"));
    }
    if iterations < MIN_RANDOMIZATION_ITERATIONS {
        return Err(Error::domain(format!(
            "randomization test needs >= {MIN_RANDOMIZATION_ITERATIONS} iterations, got {iterations}"
        )));
    }
    let diffs: Vec<i64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(&a, &b)| i64::from(a) - i64::from(b))
        .collect();
    // integer sums keep the comparison exact
    let observed = diffs.iter().sum::<i64>().abs();
    let nonzero: Vec<i64> = diffs.into_iter().filter(|&d| d != 0).collect();
    let mut rng = seed.rng();
    let mut hits = 0usize;
    for _ in 0..iterations {
        let s: i64 = nonzero.iter().map(|&d| if rng.random::<bool>() { d } else { -d }).sum();
        if s.abs() >= observed {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}
