//! Step generators (provers) and step scorers (verifiers).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::LinearProof;

pub mod conformance;
mod exact;
mod external;
mod noisy;
mod oracle;

pub use exact::{ExactProver, ExactVerifier};
pub use external::{Bridge, ExternalScorer, ExternalSource, Transport};
pub use noisy::NoisyProver;
pub use oracle::{OracleProver, OracleVerifier};

/// A proposed step in DSL form with its prover score.
///
/// The text may be ill-formed; the search engine filters such steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub step: String,
    pub score: f64,
}

impl Candidate {
    pub fn new(step: impl Into<String>, score: f64) -> Self {
        Self { step: step.into(), score }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("bridge timed out after {0:?}")]
    Timeout(Duration),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("bridge unavailable: {0}")]
    Unavailable(String),
}

pub trait StepSource: Send + Sync {
    /// At most `n` candidate steps continuing `partial`. Identifiers refer
    /// to `context` (`sent<k>`, 1-based) and to the steps of `partial`.
    fn generate(
        &self,
        hypothesis: &str,
        context: &[String],
        partial: &LinearProof,
        n: usize,
    ) -> Result<Vec<Candidate>, SourceError>;
}

pub trait StepScorer: Send + Sync {
    /// Validity of deriving `conclusion` from `premises`, in `[0, 1]`.
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, SourceError>;

    fn score_batch(&self, steps: &[(Vec<String>, String)]) -> Result<Vec<f64>, SourceError> {
        steps.iter().map(|(p, c)| self.score(p, c)).collect()
    }
}

impl<T: StepSource + ?Sized> StepSource for Box<T> {
    fn generate(
        &self,
        hypothesis: &str,
        context: &[String],
        partial: &LinearProof,
        n: usize,
    ) -> Result<Vec<Candidate>, SourceError> {
        (**self).generate(hypothesis, context, partial, n)
    }
}

impl<T: StepScorer + ?Sized> StepScorer for Box<T> {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, SourceError> {
        (**self).score(premises, conclusion)
    }

    fn score_batch(&self, steps: &[(Vec<String>, String)]) -> Result<Vec<f64>, SourceError> {
        (**self).score_batch(steps)
    }
}

/// Checks that a score is a probability.
pub fn check_score(score: f64) -> Result<f64, SourceError> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(SourceError::Protocol(format!("score {score} outside [0, 1]")))
    }
}
