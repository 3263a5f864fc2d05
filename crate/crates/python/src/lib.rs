//! Python bindings: the `proofgraph` module.

use std::collections::HashSet;

use proofgraph_core::bm25::Bm25Index;
use proofgraph_core::eval::{score_example as score_trees, TokenF1};
use proofgraph_core::search::{run_greedy, run_search as search, ScoreMix, SearchConfig};
use proofgraph_core::sources::{ExactProver, ExactVerifier, NoisyProver, StepSource};
use proofgraph_core::synth::{generate_dataset as generate, DatasetConfig, Distractors};
use proofgraph_core::{lang, NodeId, NodeRef, ProofTree, StepText, Target};
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// `(premises, conclusion, text)` with ids written as in the DSL.
type StepTuple = (Vec<String>, String, Option<String>);

fn to_tuple(s: &StepText) -> StepTuple {
    (s.premises.iter().map(NodeId::to_string).collect(), s.conclusion.to_string(), s.conclusion_text.clone())
}

fn from_tuple((premises, conclusion, text): StepTuple) -> PyResult<StepText> {
    let premises = premises.iter().map(|p| p.parse::<NodeId>().map_err(value_err)).collect::<PyResult<_>>()?;
    Ok(StepText::new(premises, conclusion.parse().map_err(value_err)?, text))
}

/// Parses a proof into step tuples, in canonical order.
#[pyfunction]
fn parse_proof(text: &str, context_size: usize) -> PyResult<Vec<StepTuple>> {
    let proof = proofgraph_core::parse_proof(text, context_size).map_err(value_err)?;
    Ok(proof.canonical().steps.iter().map(to_tuple).collect())
}

#[pyfunction]
fn serialize_proof(steps: Vec<StepTuple>) -> PyResult<String> {
    let steps = steps.into_iter().map(from_tuple).collect::<PyResult<Vec<_>>>()?;
    proofgraph_core::serialize_proof(&proofgraph_core::LinearProof::new(steps)).map_err(value_err)
}

#[pyfunction]
fn normalize_sentence(s: &str) -> String {
    proofgraph_core::normalize_sentence(s)
}

#[pyfunction]
fn negate(s: &str) -> String {
    lang::negate(s)
}

/// Entailment graph over a hypothesis and its context. Nodes are integer
/// handles; facts come first in context order.
#[pyclass(name = "ProofGraph")]
struct PyProofGraph {
    inner: proofgraph_core::ProofGraph,
}

impl PyProofGraph {
    fn check(&self, node: usize) -> PyResult<NodeRef> {
        if node < self.inner.len() {
            Ok(NodeRef(node))
        } else {
            Err(PyIndexError::new_err(format!("no node {node}")))
        }
    }
}

#[pymethods]
impl PyProofGraph {
    #[new]
    fn new(hypothesis: &str, context: Vec<String>) -> Self {
        Self { inner: proofgraph_core::ProofGraph::new(hypothesis, &context) }
    }

    /// Runs one step; `conclusion=None` targets the hypothesis. Returns the
    /// outcome label and the affected node.
    #[pyo3(signature = (premises, conclusion, score))]
    fn execute(&mut self, premises: Vec<usize>, conclusion: Option<String>, score: f64) -> PyResult<(String, Option<usize>)> {
        let premises = premises.into_iter().map(|p| self.check(p)).collect::<PyResult<Vec<_>>>()?;
        let target = conclusion.map_or(Target::Hypothesis, Target::Sentence);
        let outcome = self.inner.execute(&premises, &target, score).map_err(value_err)?;
        let node = match outcome {
            proofgraph_core::ExecutionOutcome::NoOp => None,
            proofgraph_core::ExecutionOutcome::Created(r) | proofgraph_core::ExecutionOutcome::Improved(r) => Some(r.0),
        };
        Ok((outcome.label().to_string(), node))
    }

    fn lookup(&self, sentence: &str) -> Option<usize> {
        self.inner.lookup(sentence).map(|r| r.0)
    }

    /// Node of `sentK`.
    fn fact(&self, k: u32) -> Option<usize> {
        self.inner.fact(k).map(|r| r.0)
    }

    #[getter]
    fn hypothesis(&self) -> usize {
        self.inner.hypothesis().0
    }

    fn score(&self, node: usize) -> PyResult<f64> {
        Ok(self.inner.node(self.check(node)?).score)
    }

    fn sentence(&self, node: usize) -> PyResult<String> {
        Ok(self.inner.node(self.check(node)?).sentence.clone())
    }

    fn hypothesis_score(&self) -> f64 {
        self.inner.hypothesis_score()
    }

    fn is_acyclic(&self) -> bool {
        self.inner.is_acyclic()
    }

    fn is_consistent(&self) -> bool {
        self.inner.is_consistent()
    }

    /// Best proof of the hypothesis, or None.
    fn extract_proof(&self) -> Option<String> {
        self.inner.extract_proof().ok().map(|t| t.to_dsl())
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner.dump()).expect("dump serializes")
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Proof search with the built-in sources. `prover` is `exact` or `noisy`;
/// the verifier is always exact.
#[pyfunction]
#[pyo3(signature = (hypothesis, context, prover="exact", drop=0.3, inject=0.3, score_mix="average", num_candidates=10, max_iterations=50, seed=0, no_search=false))]
#[allow(clippy::too_many_arguments)]
fn run_search<'py>(
    py: Python<'py>,
    hypothesis: &str,
    context: Vec<String>,
    prover: &str,
    drop: f64,
    inject: f64,
    score_mix: &str,
    num_candidates: usize,
    max_iterations: usize,
    seed: u64,
    no_search: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let prover: Box<dyn StepSource> = match prover {
        "exact" => Box::new(ExactProver),
        "noisy" => Box::new(NoisyProver::new(drop, inject, seed)),
        other => return Err(PyValueError::new_err(format!("unknown prover `{other}`"))),
    };
    let config = SearchConfig {
        score_mix: score_mix.parse::<ScoreMix>().map_err(PyValueError::new_err)?,
        num_candidates,
        max_iterations,
        seed,
        ..SearchConfig::default()
    };
    let result = py
        .detach(|| {
            if no_search {
                run_greedy(&prover, &ExactVerifier, hypothesis, &context, &config)
            } else {
                search(&prover, &ExactVerifier, hypothesis, &context, &config)
            }
        })
        .map_err(|a| value_err(a.error))?;
    let d = PyDict::new(py);
    d.set_item("proof", result.proof.as_ref().map(|t| t.to_dsl()))?;
    d.set_item("proof_score", result.proof_score)?;
    d.set_item("greedy_score", result.greedy_score)?;
    d.set_item("iterations", result.iterations)?;
    d.set_item("stop", format!("{:?}", result.stop).to_lowercase())?;
    Ok(d)
}

/// Synthetic instances as dicts.
#[pyfunction]
#[pyo3(signature = (n, seed=0, depths=vec![0, 1, 2, 3], distractors=20, answers=[1, 1, 1]))]
fn generate_dataset<'py>(
    py: Python<'py>,
    n: usize,
    seed: u64,
    depths: Vec<u8>,
    distractors: usize,
    answers: [u32; 3],
) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let config = DatasetConfig {
        n_instances: n,
        depths,
        distractors: Distractors::Count(distractors),
        answer_weights: answers,
        seed,
        ..DatasetConfig::default()
    };
    let data = generate(&config).map_err(value_err)?;
    let loads = py.import("json")?.getattr("loads")?;
    data.iter().map(|i| loads.call1((i.to_json(),))).collect()
}

/// Per-example proof scores of `predicted` against `gold`.
#[pyfunction]
#[pyo3(signature = (predicted, gold, hypothesis, context_size, threshold=0.55))]
fn score_example<'py>(
    py: Python<'py>,
    predicted: &str,
    gold: &str,
    hypothesis: &str,
    context_size: usize,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = ProofTree::parse(hypothesis, predicted, context_size).map_err(value_err)?;
    let g = ProofTree::parse(hypothesis, gold, context_size).map_err(value_err)?;
    let s = score_trees(&p, &g, &TokenF1 { threshold });
    let d = PyDict::new(py);
    d.set_item("leaves_f1", s.leaves_f1)?;
    d.set_item("leaves_allcorrect", s.leaves_allcorrect)?;
    d.set_item("steps_f1", s.steps_f1)?;
    d.set_item("steps_allcorrect", s.steps_allcorrect)?;
    d.set_item("interm_f1", s.interm_f1)?;
    d.set_item("interm_allcorrect", s.interm_allcorrect)?;
    d.set_item("overall_allcorrect", s.overall_allcorrect)?;
    Ok(d)
}

#[pyclass(name = "Bm25")]
struct PyBm25 {
    inner: Bm25Index,
}

#[pymethods]
impl PyBm25 {
    #[new]
    #[pyo3(signature = (documents, k1=1.2, b=0.75))]
    fn new(documents: Vec<String>, k1: f64, b: f64) -> Self {
        Self { inner: Bm25Index::with_params(documents, k1, b) }
    }

    fn score(&self, query: &str, doc: usize) -> PyResult<f64> {
        if doc >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("no document {doc}")));
        }
        Ok(self.inner.score(query, doc))
    }

    #[pyo3(signature = (query, k, exclude=vec![]))]
    fn top_k(&self, query: &str, k: usize, exclude: Vec<String>) -> PyResult<Vec<(usize, f64)>> {
        let exclude: HashSet<String> = exclude.into_iter().collect();
        self.inner.top_k(query, k, &exclude).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn proofgraph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_proof, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_proof, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_sentence, m)?)?;
    m.add_function(wrap_pyfunction!(negate, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(score_example, m)?)?;
    m.add_class::<PyProofGraph>()?;
    m.add_class::<PyBm25>()?;
    Ok(())
}
