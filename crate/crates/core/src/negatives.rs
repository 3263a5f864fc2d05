//! Labeled steps for verifier training: valid steps taken from gold proofs
//! and invalid ones made by perturbing them.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::{Bm25Error, Bm25Index};
use crate::dsl::normalize_sentence;
use crate::lang::negate;
use crate::synth::TaskInstance;
use crate::tree::ProofTree;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pos,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    None,
    PremiseRemoved,
    PremiseSwapped,
    PremiseCopied,
    ConclusionNegated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledStep {
    pub premises: Vec<String>,
    pub conclusion: String,
    pub label: Label,
    pub perturbation: Perturbation,
    pub source_id: String,
}

impl LabeledStep {
    fn negative(&self, premises: Vec<String>, conclusion: String, perturbation: Perturbation) -> Self {
        Self { premises, conclusion, label: Label::Neg, perturbation, source_id: self.source_id.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NegativeError {
    #[error("cannot remove premises from a step with {0} premise(s)")]
    NotEnoughPremises(usize),
    #[error("no distractor available")]
    EmptyCorpus,
    #[error("step is not a positive")]
    NotPositive,
}

impl From<Bm25Error> for NegativeError {
    fn from(_: Bm25Error) -> Self {
        NegativeError::EmptyCorpus
    }
}

/// One positive per proof step, premises in proof order.
pub fn extract_positives(tree: &ProofTree, context: &[String], source_id: &str) -> Vec<LabeledStep> {
    tree.steps()
        .iter()
        .map(|s| LabeledStep {
            premises: s.premises.iter().map(|p| tree.sentence(*p, context).unwrap_or_default().to_string()).collect(),
            conclusion: tree.sentence(s.conclusion, context).unwrap_or_default().to_string(),
            label: Label::Pos,
            perturbation: Perturbation::None,
            source_id: source_id.to_string(),
        })
        .collect()
}

fn check_positive(step: &LabeledStep) -> Result<(), NegativeError> {
    if step.label == Label::Pos {
        Ok(())
    } else {
        Err(NegativeError::NotPositive)
    }
}

/// Keeps a nonempty strict subset of the premises, its size uniform.
pub fn remove_premises<R: Rng + ?Sized>(step: &LabeledStep, rng: &mut R) -> Result<LabeledStep, NegativeError> {
    check_positive(step)?;
    let n = step.premises.len();
    if n < 2 {
        return Err(NegativeError::NotEnoughPremises(n));
    }
    let keep = rng.random_range(1..n);
    let mut idx = (0..n).choose_multiple(rng, keep);
    idx.sort();
    let premises = idx.into_iter().map(|i| step.premises[i].clone()).collect();
    Ok(step.negative(premises, step.conclusion.clone(), Perturbation::PremiseRemoved))
}

/// Replaces one premise with the best BM25 match for the conclusion that
/// is neither a premise nor the conclusion.
pub fn swap_premise<R: Rng + ?Sized>(
    step: &LabeledStep,
    index: &Bm25Index,
    rng: &mut R,
) -> Result<LabeledStep, NegativeError> {
    check_positive(step)?;
    let mut exclude: HashSet<String> = step.premises.iter().cloned().collect();
    exclude.insert(step.conclusion.clone());
    let (doc, _) = *index.top_k(&step.conclusion, 1, &exclude)?.first().ok_or(NegativeError::EmptyCorpus)?;
    let mut premises = step.premises.clone();
    let slot = rng.random_range(0..premises.len());
    premises[slot] = index.documents()[doc].clone();
    Ok(step.negative(premises, step.conclusion.clone(), Perturbation::PremiseSwapped))
}

pub fn copy_premise<R: Rng + ?Sized>(step: &LabeledStep, rng: &mut R) -> Result<LabeledStep, NegativeError> {
    check_positive(step)?;
    let copied = step.premises.choose(rng).ok_or(NegativeError::NotEnoughPremises(0))?.clone();
    Ok(step.negative(step.premises.clone(), copied, Perturbation::PremiseCopied))
}

pub fn negate_conclusion(step: &LabeledStep) -> Result<LabeledStep, NegativeError> {
    check_positive(step)?;
    Ok(step.negative(step.premises.clone(), negate(&step.conclusion), Perturbation::ConclusionNegated))
}

/// Negatives to draw per positive, by flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlavorWeights {
    pub remove: usize,
    pub swap: usize,
    pub copy: usize,
    pub negate: usize,
}

impl Default for FlavorWeights {
    fn default() -> Self {
        Self { remove: 1, swap: 1, copy: 1, negate: 0 }
    }
}

/// Negatives for one positive. Removal is skipped on single-premise steps;
/// perturbations that would leave the step unchanged are dropped.
pub fn make_negatives<R: Rng + ?Sized>(
    step: &LabeledStep,
    index: &Bm25Index,
    rng: &mut R,
    weights: &FlavorWeights,
) -> Result<Vec<LabeledStep>, NegativeError> {
    check_positive(step)?;
    let mut out = Vec::new();
    for _ in 0..weights.remove {
        if step.premises.len() >= 2 {
            out.push(remove_premises(step, rng)?);
        }
    }
    for _ in 0..weights.swap {
        out.push(swap_premise(step, index, rng)?);
    }
    for _ in 0..weights.copy {
        out.push(copy_premise(step, rng)?);
    }
    for _ in 0..weights.negate {
        out.push(negate_conclusion(step)?);
    }
    let same = |n: &LabeledStep| {
        let key = |ps: &[String]| ps.iter().map(|p| normalize_sentence(p)).collect::<Vec<_>>();
        key(&n.premises) == key(&step.premises) && normalize_sentence(&n.conclusion) == normalize_sentence(&step.conclusion)
    };
    out.retain(|n| !same(n));
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativesConfig {
    pub weights: FlavorWeights,
    /// Retrieve distractors from every context instead of the example's own.
    pub corpus_wide: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{id}: {source}")]
pub struct DataError {
    pub id: String,
    pub source: NegativeError,
}

/// Positives and negatives for every instance with a gold proof, each
/// instance drawing from its own seed.
pub fn build_verifier_data(instances: &[TaskInstance], config: &NegativesConfig) -> Result<Vec<LabeledStep>, DataError> {
    let corpus = config.corpus_wide.then(|| {
        let mut seen = HashSet::new();
        let docs: Vec<String> = instances
            .iter()
            .flat_map(|i| i.context.iter())
            .filter(|s| seen.insert(normalize_sentence(s)))
            .cloned()
            .collect();
        Bm25Index::new(docs)
    });
    let mut out = Vec::new();
    for inst in instances {
        let Some(tree) = inst.gold_tree() else { continue };
        let local;
        let index = match &corpus {
            Some(c) => c,
            None => {
                local = Bm25Index::new(inst.context.clone());
                &local
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &inst.id));
        for pos in extract_positives(&tree, &inst.context, &inst.id) {
            // A hypothesis restated from the context teaches nothing.
            let key = normalize_sentence(&pos.conclusion);
            if pos.premises.iter().any(|p| normalize_sentence(p) == key) {
                continue;
            }
            let negs = make_negatives(&pos, index, &mut rng, &config.weights)
                .map_err(|source| DataError { id: inst.id.clone(), source })?;
            out.push(pos);
            out.extend(negs);
        }
    }
    Ok(out)
}

pub fn write_jsonl<W: std::io::Write>(mut out: W, steps: &[LabeledStep]) -> std::io::Result<()> {
    for s in steps {
        writeln!(out, "{}", serde_json::to_string(s).expect("step serializes"))?;
    }
    Ok(())
}
