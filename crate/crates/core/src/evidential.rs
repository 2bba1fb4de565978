//! Subjective-logic view of a binary evidential prediction.
//!
//! A network emits non-negative evidence for the public and private
//! categories. Adding one to each gives the parameters of a Beta
//! distribution over the probability that the item is private, and from it
//! the belief / disbelief / uncertainty masses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special::{digamma_pos, ln_gamma_pos};

/// Non-negative evidence for each category (0 = public, 1 = private).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidencePair<T> {
    public: T,
    private: T,
}

impl<T: Scalar> EvidencePair<T> {
    pub fn new(public: T, private: T) -> Result<Self> {
        for (name, v) in [("public", public), ("private", private)] {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(Error::domain(format!("{name} evidence must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { public, private })
    }

    pub fn zero() -> Self {
        Self {
            public: T::zero(),
            private: T::zero(),
        }
    }

    #[inline]
    pub fn public(&self) -> T {
        self.public
    }

    #[inline]
    pub fn private(&self) -> T {
        self.private
    }

    pub fn total(&self) -> T {
        self.public + self.private
    }

    pub fn opinion(&self) -> BetaOpinion<T> {
        BetaOpinion {
            alpha: self.private + T::one(),
            beta: self.public + T::one(),
        }
    }
}

/// Beta(α, β) opinion about "the item is private", with α, β ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaOpinion<T> {
    alpha: T,
    beta: T,
}

impl<T: Scalar> BetaOpinion<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha >= T::one() && beta >= T::one()) {
            return Err(Error::domain(format!(
                "Beta opinion parameters must be finite and >= 1, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Maximal-uncertainty opinion Beta(1, 1).
    pub fn vacuous() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
        }
    }

    #[inline]
    pub fn alpha(&self) -> T {
        self.alpha
    }

    #[inline]
    pub fn beta(&self) -> T {
        self.beta
    }

    #[inline]
    pub fn strength(&self) -> T {
        self.alpha + self.beta
    }

    /// Belief mass `(α − 1)/(α + β)`.
    pub fn belief(&self) -> T {
        (self.alpha - T::one()) / self.strength()
    }

    /// Disbelief mass `(β − 1)/(α + β)`.
    pub fn disbelief(&self) -> T {
        (self.beta - T::one()) / self.strength()
    }

    /// Uncertainty mass `2/(α + β)`; equals one only for Beta(1, 1).
    pub fn uncertainty(&self) -> T {
        T::two() / self.strength()
    }

    pub fn evidence(&self) -> EvidencePair<T> {
        EvidencePair {
            public: self.beta - T::one(),
            private: self.alpha - T::one(),
        }
    }

    pub fn expected_probability(&self) -> Probability<T> {
        Probability(self.alpha / self.strength())
    }

    pub fn kl_to_uniform(&self) -> T {
        kl_to_uniform(self)
    }
}

/// Probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability<T>(T);

impl<T: Scalar> Probability<T> {
    pub fn new(p: T) -> Result<Self> {
        if p >= T::zero() && p <= T::one() {
            Ok(Self(p))
        } else {
            Err(Error::domain(format!("probability must lie in [0,1], got {p}")))
        }
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }

    pub fn complement(self) -> Self {
        Self(T::one() - self.0)
    }
}

pub fn opinion_from_evidence<T: Scalar>(e: EvidencePair<T>) -> BetaOpinion<T> {
    e.opinion()
}

/// Mean of the Beta opinion, `α/(α + β)`.
pub fn expected_probability<T: Scalar>(op: &BetaOpinion<T>) -> Probability<T> {
    op.expected_probability()
}

/// `KL[Beta(α, β) ‖ Beta(1, 1)]` in closed form.
pub fn kl_to_uniform<T: Scalar>(op: &BetaOpinion<T>) -> T {
    let (a, b) = (op.alpha, op.beta);
    if a == T::one() && b == T::one() {
        return T::zero();
    }
    let s = a + b;
    let psi_s = digamma_pos(s);
    let kl = ln_gamma_pos(s) - ln_gamma_pos(a) - ln_gamma_pos(b)
        + (a - T::one()) * (digamma_pos(a) - psi_s)
        + (b - T::one()) * (digamma_pos(b) - psi_s);
    // rounding can leave tiny negatives next to Beta(1,1)
    kl.max(T::zero())
}

/// Binary Shannon entropy of `p` divided by `ln 2`, with `0·ln 0 = 0`.
pub fn normalized_entropy<T: Scalar>(p: Probability<T>) -> T {
    fn plogp<T: Scalar>(x: T) -> T {
        if x > T::zero() {
            x * x.ln()
        } else {
            T::zero()
        }
    }
    let p = p.value();
    let h = -(plogp(p) + plogp(T::one() - p)) / T::LN_2();
    h.max(T::zero()).min(T::one())
}
