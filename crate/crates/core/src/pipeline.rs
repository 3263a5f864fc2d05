//! Running a prover and verifier over dataset instances.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::eval::Prediction;
use crate::lang::negate;
use crate::search::{run_greedy, run_search_traced, IterationTrace, SearchAborted, SearchConfig, SearchResult};
use crate::sources::{
    Bridge, ExactProver, ExactVerifier, ExternalScorer, ExternalSource, NoisyProver, OracleProver, OracleVerifier,
    StepScorer, StepSource, Transport,
};
use crate::synth::TaskInstance;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProverSpec {
    Exact,
    Noisy { drop: f64, inject: f64, seed: u64 },
    /// Gold steps first, then the exact prover.
    Oracle,
    External { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerifierSpec {
    Exact,
    /// Gold steps score 1.0, everything else goes to the exact verifier.
    Oracle,
    External { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub prover: ProverSpec,
    pub verifier: VerifierSpec,
    pub search: SearchConfig,
    /// Keep the greedy proof instead of searching.
    pub no_search: bool,
    pub timeout_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prover: ProverSpec::Exact,
            verifier: VerifierSpec::Exact,
            search: SearchConfig::default(),
            no_search: false,
            timeout_ms: 30_000,
        }
    }
}

/// Open connections to external models, shared across instances.
#[derive(Default, Clone)]
pub struct Bridges {
    prover: Option<Arc<Bridge>>,
    verifier: Option<Arc<Bridge>>,
}

impl Bridges {
    /// One bridge per distinct endpoint.
    pub fn connect(config: &PipelineConfig) -> Result<Self, crate::sources::SourceError> {
        let timeout = Duration::from_millis(config.timeout_ms);
        let prover = match &config.prover {
            ProverSpec::External { endpoint } => Some(Bridge::new(Transport::parse(endpoint)?, timeout)),
            _ => None,
        };
        let verifier = match (&config.verifier, &config.prover, &prover) {
            (VerifierSpec::External { endpoint: v }, ProverSpec::External { endpoint: p }, Some(b)) if v == p => {
                Some(b.clone())
            }
            (VerifierSpec::External { endpoint }, _, _) => Some(Bridge::new(Transport::parse(endpoint)?, timeout)),
            _ => None,
        };
        Ok(Self { prover, verifier })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    /// `hypothesis` or `negation`.
    pub target: String,
    #[serde(flatten)]
    pub iteration: IterationTrace,
}

fn prover_for(inst: &TaskInstance, spec: &ProverSpec, bridges: &Bridges) -> Box<dyn StepSource> {
    match spec {
        ProverSpec::Exact => Box::new(ExactProver),
        ProverSpec::Noisy { drop, inject, seed } => Box::new(NoisyProver::new(*drop, *inject, *seed)),
        ProverSpec::Oracle => match inst.gold_tree() {
            Some(gold) => Box::new(OracleProver::new(ExactProver, &gold, &inst.context)),
            None => Box::new(ExactProver),
        },
        ProverSpec::External { .. } => {
            Box::new(ExternalSource::new(bridges.prover.clone().expect("prover bridge connected")))
        }
    }
}

fn verifier_for(inst: &TaskInstance, spec: &VerifierSpec, bridges: &Bridges, seed: u64) -> Box<dyn StepScorer> {
    match spec {
        VerifierSpec::Exact => Box::new(ExactVerifier),
        VerifierSpec::Oracle => match inst.gold_tree() {
            Some(gold) => Box::new(OracleVerifier::new(ExactVerifier, &gold, &inst.context)),
            None => Box::new(ExactVerifier),
        },
        VerifierSpec::External { .. } => Box::new(ExternalScorer::new(
            bridges.verifier.clone().expect("verifier bridge connected"),
            seed,
        )),
    }
}

/// Searches for a proof of the hypothesis and, when the instance has an
/// answer label, of its negation.
pub fn solve_instance(
    inst: &TaskInstance,
    config: &PipelineConfig,
    bridges: &Bridges,
) -> Result<(Prediction, Vec<TraceRecord>), SearchAborted> {
    let seed = derive_seed(config.search.seed, &inst.id);
    let search = SearchConfig { seed, ..config.search.clone() };
    let prover = prover_for(inst, &config.prover, bridges);
    let verifier = verifier_for(inst, &config.verifier, bridges, seed);
    let mut traces = Vec::new();
    let mut run = |hypothesis: &str, target: &str| -> Result<SearchResult, SearchAborted> {
        if config.no_search {
            return run_greedy(&prover, &verifier, hypothesis, &inst.context, &search);
        }
        run_search_traced(&prover, &verifier, hypothesis, &inst.context, &search, &mut |t| {
            traces.push(TraceRecord { id: inst.id.clone(), target: target.into(), iteration: t })
        })
    };
    let main = run(&inst.hypothesis, "hypothesis")?;
    let negated = match inst.answer {
        Some(_) => Some(run(&negate(&inst.hypothesis), "negation")?),
        None => None,
    };
    let prediction = Prediction {
        id: inst.id.clone(),
        proof: main.proof.as_ref().map(|t| t.to_dsl()),
        proof_score: main.proof_score,
        iterations: main.iterations + negated.as_ref().map_or(0, |n| n.iterations),
        negated_proof: negated.as_ref().and_then(|n| n.proof.as_ref().map(|t| t.to_dsl())),
        negated_score: negated.as_ref().map(|n| n.proof_score),
    };
    Ok((prediction, traces))
}
