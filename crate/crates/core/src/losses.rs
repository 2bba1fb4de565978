//! Training objectives for the evidential classifier.
//!
//! Both data terms are expectations of a classic loss under the predicted
//! Beta distribution, in closed form. The regularizers shrink evidence for the
//! wrong category, optionally weighted by the user's misclassification costs.
//! Gradients are derived by hand and chained through `e = exp(min(o, 15))`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{BetaOpinion, EvidencePair};
use crate::scalar::Scalar;
use crate::special::{digamma_pos, trigamma_pos};

/// Logits are clamped to this value before exponentiation.
pub const LOGIT_CLAMP: f64 = 15.0;

/// Binary privacy label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Public = 0,
    Private = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Label {
        match self {
            Label::Public => Label::Private,
            Label::Private => Label::Public,
        }
    }

    /// The label as the scalar indicator `y ∈ {0, 1}`.
    pub fn indicator<T: Scalar>(self) -> T {
        match self {
            Label::Public => T::zero(),
            Label::Private => T::one(),
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Public),
            1 => Ok(Label::Private),
            other => Err(Error::domain(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Public => "public",
            Label::Private => "private",
        })
    }
}

/// User-specific misclassification costs; `cost(i, j)` is the cost of
/// assigning an item of true category `i` to category `j`.
///
/// Serialized as the full 2×2 matrix; the diagonal must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct RiskMatrix<T: Scalar = f64> {
    r01: T,
    r10: T,
}

impl<T: Scalar> RiskMatrix<T> {
    /// `r01`: cost of calling public content private; `r10`: private content public.
    pub fn new(r01: T, r10: T) -> Result<Self> {
        for (name, v) in [("R_01", r01), ("R_10", r10)] {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(Error::domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { r01, r10 })
    }

    pub fn from_matrix(m: [[T; 2]; 2]) -> Result<Self> {
        if m[0][0] != T::zero() || m[1][1] != T::zero() {
            return Err(Error::domain("risk matrix diagonal must be zero"));
        }
        Self::new(m[0][1], m[1][0])
    }

    pub fn to_matrix(&self) -> [[T; 2]; 2] {
        [[T::zero(), self.r01], [self.r10, T::zero()]]
    }

    /// Equal costs for both mistakes.
    pub fn non_sensitive() -> Self {
        Self {
            r01: T::one(),
            r10: T::one(),
        }
    }

    /// Leaking private content is ten times worse than over-protecting public content.
    pub fn sensitive() -> Self {
        Self {
            r01: T::one(),
            r10: T::lit(10.0),
        }
    }

    #[inline]
    pub fn r01(&self) -> T {
        self.r01
    }

    #[inline]
    pub fn r10(&self) -> T {
        self.r10
    }

    pub fn cost(&self, truth: Label, assigned: Label) -> T {
        match (truth, assigned) {
            (Label::Public, Label::Private) => self.r01,
            (Label::Private, Label::Public) => self.r10,
            _ => T::zero(),
        }
    }
}

impl<T: Scalar> Default for RiskMatrix<T> {
    fn default() -> Self {
        Self::non_sensitive()
    }
}

impl<T: Scalar> TryFrom<[[f64; 2]; 2]> for RiskMatrix<T> {
    type Error = Error;

    fn try_from(m: [[f64; 2]; 2]) -> Result<Self> {
        Self::from_matrix([[T::lit(m[0][0]), T::lit(m[0][1])], [T::lit(m[1][0]), T::lit(m[1][1])]])
    }
}

impl<T: Scalar> From<RiskMatrix<T>> for [[f64; 2]; 2] {
    fn from(r: RiskMatrix<T>) -> Self {
        [[0.0, r.r01.as_f64()], [r.r10.as_f64(), 0.0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    ExpectedBrier,
    ExpectedCrossEntropy,
}

/// How the risk matrix enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    /// Scale misleading evidence inside the annealed KL term.
    #[default]
    KlScaling,
    /// Add the cost-weighted misleading evidence as a separate penalty.
    DirectRegularizer,
    Both,
}

impl RiskMode {
    fn uses_kl(self) -> bool {
        matches!(self, RiskMode::KlScaling | RiskMode::Both)
    }

    fn uses_direct(self) -> bool {
        matches!(self, RiskMode::DirectRegularizer | RiskMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    pub loss_kind: LossKind,
    pub risk_mode: RiskMode,
    /// Epochs until the KL weight reaches one.
    pub anneal_horizon: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::ExpectedBrier,
            risk_mode: RiskMode::KlScaling,
            anneal_horizon: 10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anneal_horizon == 0 {
            return Err(Error::domain("anneal_horizon must be >= 1"));
        }
        Ok(())
    }
}

/// Expected Brier score of a Beta opinion:
/// `(p̄ − y)² + (1 − p̄ − (1 − y))² + 2 p̄ (1 − p̄)/(α + β + 1)`.
pub fn expected_brier<T: Scalar>(op: &BetaOpinion<T>, y: Label) -> T {
    let p = op.expected_probability().value();
    let y = y.indicator::<T>();
    let miss = p - y;
    let miss_other = T::one() - p - (T::one() - y);
    miss * miss + miss_other * miss_other + T::two() * p * (T::one() - p) / (op.strength() + T::one())
}

/// Expected negative log-likelihood: `ψ(α + β) − ψ(α)` for private, `ψ(α + β) − ψ(β)` for public.
pub fn expected_cross_entropy<T: Scalar>(op: &BetaOpinion<T>, y: Label) -> T {
    let psi_s = digamma_pos(op.strength());
    match y {
        Label::Private => psi_s - digamma_pos(op.alpha()),
        Label::Public => psi_s - digamma_pos(op.beta()),
    }
}

/// Opinion built only from misleading evidence, scaled by the matching cost.
///
/// For a private item the private side collapses to one and the public
/// evidence is multiplied by `R_10`; symmetrically for a public item.
pub fn risk_scaled_misleading<T: Scalar>(e: &EvidencePair<T>, y: Label, r: &RiskMatrix<T>) -> BetaOpinion<T> {
    let (alpha, beta) = match y {
        Label::Public => (r.r01() * e.private() + T::one(), T::one()),
        Label::Private => (T::one(), r.r10() * e.public() + T::one()),
    };
    BetaOpinion::new(alpha, beta).expect("scaled misleading evidence is non-negative")
}

/// Annealing weight `min(1, t / horizon)`.
pub fn annealing_coefficient<T: Scalar>(t: u64, horizon: u32) -> T {
    let horizon = u64::from(horizon.max(1));
    if t >= horizon {
        T::one()
    } else {
        T::lit(t as f64) / T::lit(horizon as f64)
    }
}

pub fn kl_regularizer<T: Scalar>(
    e: &EvidencePair<T>,
    y: Label,
    r: &RiskMatrix<T>,
    t: u64,
    cfg: &LossConfig,
) -> T {
    let lambda = annealing_coefficient::<T>(t, cfg.anneal_horizon);
    if lambda == T::zero() {
        return T::zero();
    }
    lambda * risk_scaled_misleading(e, y, r).kl_to_uniform()
}

/// `(1 − y) p̄ R_01 e_pri + y (1 − p̄) R_10 e_pub` on the unscaled opinion.
pub fn direct_risk_regularizer<T: Scalar>(e: &EvidencePair<T>, y: Label, r: &RiskMatrix<T>) -> T {
    let p = e.opinion().expected_probability().value();
    match y {
        Label::Public => p * r.r01() * e.private(),
        Label::Private => (T::one() - p) * r.r10() * e.public(),
    }
}

/// Data term plus the regularizers selected by `cfg.risk_mode`, for one sample.
pub fn sample_loss<T: Scalar>(e: &EvidencePair<T>, y: Label, r: &RiskMatrix<T>, t: u64, cfg: &LossConfig) -> T {
    let op = e.opinion();
    let mut loss = match cfg.loss_kind {
        LossKind::ExpectedBrier => expected_brier(&op, y),
        LossKind::ExpectedCrossEntropy => expected_cross_entropy(&op, y),
    };
    if cfg.risk_mode.uses_kl() {
        loss += kl_regularizer(e, y, r, t, cfg);
    }
    if cfg.risk_mode.uses_direct() {
        loss += direct_risk_regularizer(e, y, r);
    }
    loss
}

/// Arithmetic mean of [`sample_loss`] over a non-empty batch.
pub fn total_loss<T: Scalar>(batch: &[(EvidencePair<T>, Label)], r: &RiskMatrix<T>, t: u64, cfg: &LossConfig) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::domain("total_loss requires a non-empty batch"));
    }
    let sum = batch
        .iter()
        .fold(T::zero(), |acc, (e, y)| acc + sample_loss(e, *y, r, t, cfg));
    Ok(sum / T::lit(batch.len() as f64))
}

/// Exponential evidence from logits `(o_0, o_1)`; logits are clamped at 15 first.
pub fn evidence_from_logits<T: Scalar>(logits: [T; 2]) -> EvidencePair<T> {
    let clamp = T::lit(LOGIT_CLAMP);
    EvidencePair::new(logits[0].min(clamp).exp(), logits[1].min(clamp).exp())
        .expect("exp of a finite logit is finite and non-negative")
}

fn check_logits<T: Scalar>(logits: &[T; 2]) -> Result<()> {
    if logits.iter().all(|o| o.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("logits must be finite, got ({}, {})", logits[0], logits[1])))
    }
}

/// Partial derivatives of a scalar function of (α, β).
#[derive(Clone, Copy)]
struct Partials<T> {
    d_alpha: T,
    d_beta: T,
}

fn brier_partials<T: Scalar>(alpha: T, beta: T, y: T) -> Partials<T> {
    // L = 2(p − y)² + 2p(1 − p)/(S + 1), p = α/S
    let s = alpha + beta;
    let p = alpha / s;
    let s1 = s + T::one();
    let d_p = T::lit(4.0) * (p - y) + T::two() * (T::one() - T::two() * p) / s1;
    let d_s = -T::two() * p * (T::one() - p) / (s1 * s1);
    let s2 = s * s;
    Partials {
        d_alpha: d_p * beta / s2 + d_s,
        d_beta: -d_p * alpha / s2 + d_s,
    }
}

fn cross_entropy_partials<T: Scalar>(alpha: T, beta: T, y: Label) -> Partials<T> {
    let tri_s = trigamma_pos(alpha + beta);
    match y {
        Label::Private => Partials {
            d_alpha: tri_s - trigamma_pos(alpha),
            d_beta: tri_s,
        },
        Label::Public => Partials {
            d_alpha: tri_s,
            d_beta: tri_s - trigamma_pos(beta),
        },
    }
}

fn kl_uniform_partials<T: Scalar>(a: T, b: T) -> Partials<T> {
    // ∂/∂a = (a − 1)ψ'(a) − (a + b − 2)ψ'(a + b), symmetric in b
    let tri_s = trigamma_pos(a + b);
    let pooled = (a + b - T::two()) * tri_s;
    Partials {
        d_alpha: (a - T::one()) * trigamma_pos(a) - pooled,
        d_beta: (b - T::one()) * trigamma_pos(b) - pooled,
    }
}

fn direct_partials<T: Scalar>(alpha: T, beta: T, y: Label, r: &RiskMatrix<T>) -> Partials<T> {
    let s = alpha + beta;
    let s2 = s * s;
    match y {
        // R_01 · (α/S) · (α − 1)
        Label::Public => Partials {
            d_alpha: r.r01() * (beta / s2 * (alpha - T::one()) + alpha / s),
            d_beta: -r.r01() * alpha / s2 * (alpha - T::one()),
        },
        // R_10 · (β/S) · (β − 1)
        Label::Private => Partials {
            d_alpha: -r.r10() * beta / s2 * (beta - T::one()),
            d_beta: r.r10() * (alpha / s2 * (beta - T::one()) + beta / s),
        },
    }
}

/// Per-sample loss and its gradient with respect to the logits `(o_0, o_1)`.
pub fn loss_and_gradient<T: Scalar>(
    logits: [T; 2],
    y: Label,
    r: &RiskMatrix<T>,
    t: u64,
    cfg: &LossConfig,
) -> Result<(T, [T; 2])> {
    check_logits(&logits)?;
    let e = evidence_from_logits(logits);
    let loss = sample_loss(&e, y, r, t, cfg);

    let op = e.opinion();
    let (alpha, beta) = (op.alpha(), op.beta());
    let mut grad = match cfg.loss_kind {
        LossKind::ExpectedBrier => brier_partials(alpha, beta, y.indicator()),
        LossKind::ExpectedCrossEntropy => cross_entropy_partials(alpha, beta, y),
    };
    if cfg.risk_mode.uses_direct() {
        let d = direct_partials(alpha, beta, y, r);
        grad.d_alpha += d.d_alpha;
        grad.d_beta += d.d_beta;
    }
    // dα/do_1 = e_pri, dβ/do_0 = e_pub; zero past the clamp
    let clamp = T::lit(LOGIT_CLAMP);
    let de_pub = if logits[0] < clamp { e.public() } else { T::zero() };
    let de_pri = if logits[1] < clamp { e.private() } else { T::zero() };
    let mut g = [grad.d_beta * de_pub, grad.d_alpha * de_pri];

    if cfg.risk_mode.uses_kl() {
        let lambda = annealing_coefficient::<T>(t, cfg.anneal_horizon);
        if lambda > T::zero() {
            let scaled = risk_scaled_misleading(&e, y, r);
            let kp = kl_uniform_partials(scaled.alpha(), scaled.beta());
            match y {
                // ᾱ = R_01 e_pri + 1
                Label::Public => g[1] += lambda * kp.d_alpha * r.r01() * de_pri,
                // β̄ = R_10 e_pub + 1
                Label::Private => g[0] += lambda * kp.d_beta * r.r10() * de_pub,
            }
        }
    }
    Ok((loss, g))
}

pub fn loss_gradient_wrt_logits<T: Scalar>(
    logits: [T; 2],
    y: Label,
    r: &RiskMatrix<T>,
    t: u64,
    cfg: &LossConfig,
) -> Result<[T; 2]> {
    loss_and_gradient(logits, y, r, t, cfg).map(|(_, g)| g)
}
