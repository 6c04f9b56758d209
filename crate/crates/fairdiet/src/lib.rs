//! Gender-bias mitigation for binary text classifiers via counterfactual
//! data diets.
//!
//! The pipeline: load a labeled corpus, attach gender-counterfactual
//! examples, score each pair's importance for fairness with the gender
//! equity (GE) score, assemble pruned training diets from the ranked
//! factual/counterfactual pools, retrain the built-in classifier, and
//! report demographic parity, equality of opportunity/odds, and AUC
//! against CDA/CDS baselines.

pub mod classifier;
pub mod corpus;
pub mod diet;
pub mod error;
pub mod faireval;
pub mod lexicon;
pub mod orchestrator;
pub mod rng;
pub mod scoring;
pub mod synth;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
