//! Evidential binary privacy classifier.
//!
//! A small network maps a content feature vector to evidence for the public
//! and private categories. The evidence defines a Beta opinion whose
//! uncertainty mass decides whether the assistant acts or asks its user.

pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod decision;
pub mod error;
pub mod evaluation;
pub mod evidential;
pub mod losses;
pub mod network;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use losses::Label;
pub use scalar::Scalar;
pub use special::RngSeed;

/// Opinion in double precision.
pub type Opinion = evidential::BetaOpinion<f64>;
pub type Evidence = evidential::EvidencePair<f64>;
pub type Prob = evidential::Probability<f64>;
pub type Risk = losses::RiskMatrix<f64>;
pub type Metrics = decision::MetricsReport<f64>;
