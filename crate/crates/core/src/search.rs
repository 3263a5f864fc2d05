//! Greedy proof generation followed by verifier-guided search over a
//! proof graph.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{normalize_sentence, parse_step, validate_step, LinearProof, NodeId, StepText};
use crate::graph::{GraphError, NodeKind, NodeRef, PartialView, ProofGraph, Target};
use crate::sources::{SourceError, StepScorer, StepSource};
use crate::tree::ProofTree;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMix {
    #[default]
    Average,
    ProverOnly,
    VerifierOnly,
}

impl FromStr for ScoreMix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "average" | "avg" => Ok(ScoreMix::Average),
            "prover_only" | "prover" => Ok(ScoreMix::ProverOnly),
            "verifier_only" | "verifier" => Ok(ScoreMix::VerifierOnly),
            other => Err(format!("unknown score mix `{other}`")),
        }
    }
}

impl fmt::Display for ScoreMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMix::Average => "average",
            ScoreMix::ProverOnly => "prover_only",
            ScoreMix::VerifierOnly => "verifier_only",
        })
    }
}

pub fn mix_scores(p_score: f64, v_score: f64, mode: ScoreMix) -> Result<f64, GraphError> {
    for x in [p_score, v_score] {
        if !(0.0..=1.0).contains(&x) {
            return Err(GraphError::Domain(x));
        }
    }
    Ok(match mode {
        ScoreMix::Average => (p_score + v_score) / 2.0,
        ScoreMix::ProverOnly => p_score,
        ScoreMix::VerifierOnly => v_score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub num_candidates: usize,
    pub max_iterations: usize,
    /// Smallest score gain that counts as progress.
    pub min_improvement: f64,
    pub score_mix: ScoreMix,
    /// Consecutive iterations without progress before stopping.
    pub stall_limit: usize,
    /// Draws per iteration when looking for an unexplored partial proof.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_candidates: 10,
            max_iterations: 50,
            min_improvement: 1e-6,
            score_mix: ScoreMix::Average,
            stall_limit: 5,
            max_retries: 32,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.num_candidates == 0 {
            return Err(SearchError::Config("num_candidates must be at least 1".into()));
        }
        if !(self.min_improvement >= 0.0 && self.min_improvement.is_finite()) {
            return Err(SearchError::Config("min_improvement must be finite and non-negative".into()));
        }
        if self.stall_limit == 0 {
            return Err(SearchError::Config("stall_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("empty context")]
    EmptyContext,
    #[error("prover failed: {0}")]
    Prover(SourceError),
    #[error("verifier failed: {0}")]
    Verifier(SourceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Only the greedy proof was built.
    Greedy,
    Stalled,
    Exhausted,
    MaxIterations,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub proof: Option<ProofTree>,
    /// Score of the hypothesis node.
    pub proof_score: f64,
    /// Hypothesis score right after greedy initialization.
    pub greedy_score: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub graph: ProofGraph,
}

impl SearchResult {
    fn from_graph(graph: ProofGraph, greedy_score: f64, iterations: usize, stop: StopReason) -> Self {
        Self {
            proof: graph.extract_proof().ok(),
            proof_score: graph.hypothesis_score(),
            greedy_score,
            iterations,
            stop,
            graph,
        }
    }
}

#[derive(Debug, Error)]
#[error("search aborted after {} iterations: {error}", partial.iterations)]
pub struct SearchAborted {
    pub error: SearchError,
    /// Best result reached before the failure.
    pub partial: Box<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedCandidate {
    pub step: String,
    pub prover_score: f64,
    pub verifier_score: Option<f64>,
    pub score: Option<f64>,
    /// One of `ill_formed`, `duplicate`, `noop`, `created`, `improved`.
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub fingerprint: Vec<String>,
    pub partial_proof: String,
    pub candidates: Vec<TracedCandidate>,
    pub prover_ms: f64,
    pub verifier_ms: f64,
    pub hypothesis_score: f64,
}

/// A well-formed step resolved against the graph.
struct Resolved {
    premises: Vec<NodeRef>,
    target: Target,
    premise_texts: Vec<String>,
    conclusion_text: String,
}

fn resolve(graph: &ProofGraph, step: &StepText, view: &PartialView) -> Option<Resolved> {
    let premises = graph.resolve_premises(step, view).ok()?;
    let (target, conclusion_text) = match (step.conclusion, &step.conclusion_text) {
        (NodeId::Hypothesis, _) => (Target::Hypothesis, graph.node(graph.hypothesis()).sentence.clone()),
        (NodeId::Int(_), Some(t)) => {
            if let Some(r) = graph.lookup(t) {
                if matches!(graph.node(r).kind, NodeKind::Fact(_)) {
                    return None;
                }
            }
            (Target::Sentence(t.clone()), t.clone())
        }
        _ => return None,
    };
    let premise_texts = premises.iter().map(|p| graph.node(*p).sentence.clone()).collect();
    Some(Resolved { premises, target, premise_texts, conclusion_text })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Asks the prover for one step at a time and commits the first valid one,
/// until the hypothesis is concluded, the prover runs dry, or `2 * |C|`
/// steps have been taken. Returns the steps with their prover scores.
pub fn generate_greedy_scored<P: StepSource + ?Sized>(
    prover: &P,
    hypothesis: &str,
    context: &[String],
    num_candidates: usize,
) -> Result<Vec<(StepText, f64)>, SourceError> {
    let mut proof = LinearProof::default();
    let mut scores = Vec::new();
    let mut taken: HashSet<String> = context.iter().map(|s| normalize_sentence(s)).collect();
    let h_key = normalize_sentence(hypothesis);
    let mut available: HashSet<NodeId> = (1..=context.len() as u32).map(NodeId::Sent).collect();
    for _ in 0..2 * context.len() {
        let next_int = proof.steps.iter().filter(|s| s.conclusion.is_int()).count() as u32 + 1;
        let candidates = prover.generate(hypothesis, context, &proof, num_candidates.max(1))?;
        let chosen = candidates.into_iter().find_map(|c| {
            let mut step = parse_step(&c.step).ok()?;
            if step.conclusion.is_int() {
                // The prover may number the new int freely.
                step.conclusion = NodeId::Int(next_int);
                let key = normalize_sentence(step.conclusion_text.as_deref()?);
                if taken.contains(&key) || key == h_key {
                    return None;
                }
            }
            validate_step(&step, &available).then_some((step, c.score))
        });
        let Some((step, score)) = chosen else { break };
        let done = step.conclusion == NodeId::Hypothesis;
        if let Some(t) = &step.conclusion_text {
            taken.insert(normalize_sentence(t));
        }
        available.insert(step.conclusion);
        proof.steps.push(step.clone());
        scores.push((step, score));
        if done {
            break;
        }
    }
    Ok(scores)
}

pub fn generate_greedy<P: StepSource + ?Sized>(
    prover: &P,
    hypothesis: &str,
    context: &[String],
) -> Result<LinearProof, SourceError> {
    let steps = generate_greedy_scored(prover, hypothesis, context, SearchConfig::default().num_candidates)?;
    Ok(LinearProof::new(steps.into_iter().map(|(s, _)| s).collect()))
}

/// Scores and executes a list of resolved steps, in the given order.
fn score_steps<V: StepScorer + ?Sized>(
    verifier: &V,
    resolved: &[&Resolved],
) -> Result<Vec<f64>, SourceError> {
    let batch: Vec<(Vec<String>, String)> = resolved
        .iter()
        .map(|r| (r.premise_texts.clone(), r.conclusion_text.clone()))
        .collect();
    let scores = verifier.score_batch(&batch)?;
    if scores.len() != batch.len() {
        return Err(SourceError::Protocol(format!("{} scores for {} steps", scores.len(), batch.len())));
    }
    scores.into_iter().map(crate::sources::check_score).collect()
}

fn initialize<P, V>(
    prover: &P,
    verifier: &V,
    hypothesis: &str,
    context: &[String],
    config: &SearchConfig,
) -> Result<ProofGraph, (SearchError, Box<ProofGraph>)>
where
    P: StepSource + ?Sized,
    V: StepScorer + ?Sized,
{
    let mut graph = ProofGraph::new(hypothesis, context);
    if context.is_empty() {
        return Err((SearchError::EmptyContext, Box::new(graph)));
    }
    let steps = match generate_greedy_scored(prover, hypothesis, context, config.num_candidates) {
        Ok(s) => s,
        Err(e) => return Err((SearchError::Prover(e), Box::new(graph))),
    };
    let mut view = PartialView { proof: LinearProof::default(), int_refs: Vec::new() };
    for (step, p_score) in steps {
        let Some(r) = resolve(&graph, &step, &view) else { break };
        let v_score = match score_steps(verifier, &[&r]) {
            Ok(v) => v[0],
            Err(e) => return Err((SearchError::Verifier(e), Box::new(graph))),
        };
        let outcome = mix_scores(p_score, v_score, config.score_mix)
            .and_then(|s| graph.execute(&r.premises, &r.target, s));
        if let Err(e) = outcome {
            return Err((e.into(), Box::new(graph)));
        }
        if let Target::Sentence(t) = &r.target {
            // Later greedy steps refer to this int; stop if it was not kept.
            match graph.lookup(t) {
                Some(node) => view.int_refs.push(node),
                None => break,
            }
        }
        view.proof.steps.push(step);
    }
    Ok(graph)
}

/// The greedy proof alone, scored by the verifier.
pub fn run_greedy<P, V>(
    prover: &P,
    verifier: &V,
    hypothesis: &str,
    context: &[String],
    config: &SearchConfig,
) -> Result<SearchResult, SearchAborted>
where
    P: StepSource + ?Sized,
    V: StepScorer + ?Sized,
{
    config.validate().map_err(|error| SearchAborted {
        error,
        partial: Box::new(SearchResult::from_graph(ProofGraph::new(hypothesis, context), 0.0, 0, StopReason::Aborted)),
    })?;
    match initialize(prover, verifier, hypothesis, context, config) {
        Ok(graph) => {
            let s = graph.hypothesis_score();
            Ok(SearchResult::from_graph(graph, s, 0, StopReason::Greedy))
        }
        Err((error, graph)) => {
            let s = graph.hypothesis_score();
            Err(SearchAborted { error, partial: Box::new(SearchResult::from_graph(*graph, s, 0, StopReason::Aborted)) })
        }
    }
}

pub fn run_search<P, V>(
    prover: &P,
    verifier: &V,
    hypothesis: &str,
    context: &[String],
    config: &SearchConfig,
) -> Result<SearchResult, SearchAborted>
where
    P: StepSource + ?Sized,
    V: StepScorer + ?Sized,
{
    run_search_traced(prover, verifier, hypothesis, context, config, &mut |_| {})
}

/// [`run_search`] reporting every iteration to `trace`.
pub fn run_search_traced<P, V>(
    prover: &P,
    verifier: &V,
    hypothesis: &str,
    context: &[String],
    config: &SearchConfig,
    trace: &mut dyn FnMut(IterationTrace),
) -> Result<SearchResult, SearchAborted>
where
    P: StepSource + ?Sized,
    V: StepScorer + ?Sized,
{
    let greedy = run_greedy(prover, verifier, hypothesis, context, config)?;
    let greedy_score = greedy.greedy_score;
    let mut graph = greedy.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut explored = HashSet::new();
    let mut stalled = 0;
    let mut iterations = 0;
    let abort = |error: SearchError, graph: ProofGraph, iterations: usize| SearchAborted {
        error,
        partial: Box::new(SearchResult::from_graph(graph, greedy_score, iterations, StopReason::Aborted)),
    };

    let stop = loop {
        if iterations >= config.max_iterations {
            break StopReason::MaxIterations;
        }
        let Some(partial) = graph.sample_partial_proof(&explored, &mut rng, config.max_retries) else {
            break StopReason::Exhausted;
        };
        iterations += 1;
        explored.insert(partial.fingerprint.clone());
        let view = graph.linearize(&partial);
        let available = view.available(context.len());

        let started = Instant::now();
        let candidates = match prover.generate(hypothesis, context, &view.proof, config.num_candidates) {
            Ok(c) => c,
            Err(e) => return Err(abort(SearchError::Prover(e), graph, iterations)),
        };
        let prover_ms = ms(started);

        let mut traced: Vec<TracedCandidate> = Vec::new();
        let mut kept: Vec<(usize, Resolved, f64)> = Vec::new();
        let mut seen: HashSet<(Vec<NodeRef>, String)> = HashSet::new();
        for c in candidates.into_iter().take(config.num_candidates) {
            let mut entry = TracedCandidate {
                step: c.step.clone(),
                prover_score: c.score,
                verifier_score: None,
                score: None,
                outcome: "ill_formed".into(),
            };
            let resolved = parse_step(&c.step)
                .ok()
                .filter(|s| validate_step(s, &available))
                .and_then(|s| resolve(&graph, &s, &view));
            if let Some(r) = resolved {
                let target_key = match &r.target {
                    Target::Hypothesis => String::new(),
                    Target::Sentence(t) => normalize_sentence(t),
                };
                let mut key_premises = r.premises.clone();
                key_premises.sort();
                if seen.insert((key_premises, target_key)) {
                    kept.push((traced.len(), r, c.score));
                } else {
                    entry.outcome = "duplicate".into();
                }
            }
            traced.push(entry);
        }

        let started = Instant::now();
        let refs: Vec<&Resolved> = kept.iter().map(|(_, r, _)| r).collect();
        let v_scores = match score_steps(verifier, &refs) {
            Ok(v) => v,
            Err(e) => return Err(abort(SearchError::Verifier(e), graph, iterations)),
        };
        let verifier_ms = ms(started);

        let mut ready: Vec<(usize, &Resolved, f64)> = Vec::with_capacity(kept.len());
        for ((i, r, p), v) in kept.iter().zip(v_scores) {
            let mixed = match mix_scores(*p, v, config.score_mix) {
                Ok(m) => m,
                Err(e) => return Err(abort(e.into(), graph, iterations)),
            };
            traced[*i].verifier_score = Some(v);
            traced[*i].score = Some(mixed);
            ready.push((*i, r, mixed));
        }
        ready.sort_by(|a, b| b.2.total_cmp(&a.2));

        let before: HashMap<NodeRef, f64> = graph.nodes().map(|(r, n)| (r, n.score)).collect();
        let mut changed = false;
        for (i, r, mixed) in ready {
            let outcome = match graph.execute(&r.premises, &r.target, mixed) {
                Ok(o) => o,
                Err(e) => return Err(abort(e.into(), graph, iterations)),
            };
            changed |= outcome.changed();
            traced[i].outcome = outcome.label().into();
        }
        let gain = graph
            .nodes()
            .map(|(r, n)| n.score - before.get(&r).copied().unwrap_or(0.0))
            .fold(0.0, f64::max);

        trace(IterationTrace {
            iteration: iterations,
            fingerprint: partial.fingerprint.0.clone(),
            partial_proof: view.proof.render(),
            candidates: traced,
            prover_ms,
            verifier_ms,
            hypothesis_score: graph.hypothesis_score(),
        });

        if changed && gain >= config.min_improvement {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= config.stall_limit {
                break StopReason::Stalled;
            }
        }
    };
    Ok(SearchResult::from_graph(graph, greedy_score, iterations, stop))
}
