//! Proof metrics (leaves, steps, intermediates, overall), answer
//! classification from a pair of proof scores, and per-depth breakdowns.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::tokenize;
use crate::dsl::{normalize_sentence, NodeId};
use crate::lang::negate;
use crate::sources::StepScorer;
use crate::synth::{Answer, TaskInstance};
use crate::tree::ProofTree;

pub trait SentenceSimilarity {
    fn similarity(&self, a: &str, b: &str) -> f64;
    /// Pairs scoring strictly above this count as matching.
    fn threshold(&self) -> f64;
}

/// Token-level F1 between two sentences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenF1 {
    pub threshold: f64,
}

impl Default for TokenF1 {
    fn default() -> Self {
        Self { threshold: 0.55 }
    }
}

pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta = tokenize(&normalize_sentence(a));
    let tb = tokenize(&normalize_sentence(b));
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &ta {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &tb {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    f1(common as f64 / ta.len().max(1) as f64, common as f64 / tb.len().max(1) as f64)
}

impl SentenceSimilarity for TokenF1 {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        token_f1(a, b)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Similarity taken from a step scorer, as `score([a], b)`.
pub struct ScorerSimilarity<S> {
    pub scorer: S,
    pub threshold: f64,
}

impl<S: StepScorer> SentenceSimilarity for ScorerSimilarity<S> {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        self.scorer.score(&[a.to_string()], b).unwrap_or(0.0)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision, recall and F1 from counts; two empty sets agree perfectly.
pub fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    if predicted == 0 && gold == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let r = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
    (p, r, f1(p, r))
}

/// Leaf identifiers under every internal node.
fn leaf_sets(tree: &ProofTree) -> HashMap<NodeId, BTreeSet<u32>> {
    let mut out: HashMap<NodeId, BTreeSet<u32>> = HashMap::new();
    for step in tree.steps() {
        let mut set = BTreeSet::new();
        for p in &step.premises {
            match p {
                NodeId::Sent(k) => {
                    set.insert(*k);
                }
                other => set.extend(out.get(other).into_iter().flatten().copied()),
            }
        }
        out.insert(step.conclusion, set);
    }
    out
}

fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Predicted internal node to gold internal node. The hypothesis always
/// maps to the hypothesis.
pub type Alignment = HashMap<NodeId, NodeId>;

pub fn align_trees(predicted: &ProofTree, gold: &ProofTree) -> Alignment {
    let ps = leaf_sets(predicted);
    let gs = leaf_sets(gold);
    let text = |t: &ProofTree, id: NodeId| t.sentence(id, &[]).unwrap_or_default().to_string();
    let mut pairs: Vec<(f64, f64, u32, u32)> = Vec::new();
    for step_p in predicted.steps() {
        let NodeId::Int(i) = step_p.conclusion else { continue };
        for step_g in gold.steps() {
            let NodeId::Int(j) = step_g.conclusion else { continue };
            let jac = jaccard(&ps[&step_p.conclusion], &gs[&step_g.conclusion]);
            if jac > 0.0 {
                let sim = token_f1(&text(predicted, step_p.conclusion), &text(gold, step_g.conclusion));
                pairs.push((jac, sim, j, i));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut map = Alignment::from([(NodeId::Hypothesis, NodeId::Hypothesis)]);
    let mut used = BTreeSet::new();
    for (_, _, j, i) in pairs {
        if map.contains_key(&NodeId::Int(i)) || used.contains(&j) {
            continue;
        }
        used.insert(j);
        map.insert(NodeId::Int(i), NodeId::Int(j));
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub leaves_f1: f64,
    pub leaves_allcorrect: bool,
    pub steps_f1: f64,
    pub steps_allcorrect: bool,
    pub interm_f1: f64,
    pub interm_allcorrect: bool,
    pub overall_allcorrect: bool,
}

impl ExampleScores {
    pub const ZERO: ExampleScores = ExampleScores {
        leaves_f1: 0.0,
        leaves_allcorrect: false,
        steps_f1: 0.0,
        steps_allcorrect: false,
        interm_f1: 0.0,
        interm_allcorrect: false,
        overall_allcorrect: false,
    };

    /// Proof correctness ignoring intermediate sentences.
    pub fn structure_correct(&self) -> bool {
        self.leaves_allcorrect && self.steps_allcorrect
    }
}

pub fn score_example(predicted: &ProofTree, gold: &ProofTree, similarity: &dyn SentenceSimilarity) -> ExampleScores {
    let lp = predicted.leaves();
    let lg = gold.leaves();
    let (_, _, leaves_f1) = prf(lp.intersection(&lg).count(), lp.len(), lg.len());

    let align = align_trees(predicted, gold);
    let gold_steps = gold.step_index();
    let mut steps_correct = 0;
    for step in predicted.steps() {
        let Some(v) = align.get(&step.conclusion) else { continue };
        let g = gold_steps[v];
        let sents = |ps: &[NodeId]| ps.iter().filter(|p| p.is_sent()).copied().collect::<BTreeSet<_>>();
        let p_ints: Option<BTreeSet<NodeId>> =
            step.premises.iter().filter(|p| p.is_int()).map(|p| align.get(p).copied()).collect();
        let g_ints: BTreeSet<NodeId> = g.premises.iter().filter(|p| p.is_int()).copied().collect();
        if sents(&step.premises) == sents(&g.premises) && p_ints.as_ref() == Some(&g_ints) {
            steps_correct += 1;
        }
    }
    let (_, _, steps_f1) = prf(steps_correct, predicted.steps().len(), gold.steps().len());

    let p_texts = predicted.proof().intermediate_texts();
    let g_texts = gold.proof().intermediate_texts();
    let interm_correct = p_texts
        .iter()
        .filter(|(id, text)| {
            align
                .get(id)
                .and_then(|g| g_texts.get(g))
                .is_some_and(|g| similarity.similarity(text, g) > similarity.threshold())
        })
        .count();
    let (_, _, interm_f1) = prf(interm_correct, p_texts.len(), g_texts.len());

    let leaves_allcorrect = leaves_f1 == 1.0;
    let steps_allcorrect = steps_f1 == 1.0;
    let interm_allcorrect = interm_f1 == 1.0;
    ExampleScores {
        leaves_f1,
        leaves_allcorrect,
        steps_f1,
        steps_allcorrect,
        interm_f1,
        interm_allcorrect,
        overall_allcorrect: leaves_allcorrect && steps_allcorrect && interm_allcorrect,
    }
}

/// Three linear scores over `(score(h), score(not h), 1)`, one per answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerClassifier {
    /// Rows for proved, disproved and unknown.
    pub weights: [[f64; 3]; 3],
}

impl Default for AnswerClassifier {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifierError {
    #[error("no training examples")]
    Empty,
    #[error("singular system")]
    Singular,
}

impl AnswerClassifier {
    pub fn reference() -> Self {
        Self { weights: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 0.5]] }
    }

    pub fn decision(&self, score_h: f64, score_neg: f64) -> [f64; 3] {
        self.weights.map(|w| w[0] * score_h + w[1] * score_neg + w[2])
    }

    /// Highest-scoring answer; any tie for the top yields unknown.
    pub fn classify(&self, score_h: f64, score_neg: f64) -> Answer {
        let d = self.decision(score_h, score_neg);
        let best = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..3).filter(|&i| d[i] == best).collect();
        match winners.as_slice() {
            [0] => Answer::Proved,
            [1] => Answer::Disproved,
            _ => Answer::Unknown,
        }
    }

    /// Ridge-regularized least squares onto one-hot targets.
    pub fn fit(samples: &[(f64, f64, Answer)], ridge: f64) -> Result<Self, ClassifierError> {
        if samples.is_empty() {
            return Err(ClassifierError::Empty);
        }
        let n = samples.len();
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => samples[i].0,
            1 => samples[i].1,
            _ => 1.0,
        });
        let y = DMatrix::from_fn(n, 3, |i, j| if Answer::ALL[j] == samples[i].2 { 1.0 } else { 0.0 });
        let xtx = x.transpose() * &x;
        let gram = Matrix3::from_fn(|i, j| xtx[(i, j)] + if i == j { ridge } else { 0.0 });
        let inv = gram.try_inverse().ok_or(ClassifierError::Singular)?;
        let xty = x.transpose() * y;
        let mut weights = [[0.0; 3]; 3];
        for (class, row) in weights.iter_mut().enumerate() {
            for (k, w) in row.iter_mut().enumerate() {
                *w = (0..3).map(|m| inv[(k, m)] * xty[(m, class)]).sum();
            }
        }
        Ok(Self { weights })
    }
}

/// Output of the prover pipeline for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub proof: Option<String>,
    pub proof_score: f64,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub negated_proof: Option<String>,
    #[serde(default)]
    pub negated_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction for `{id}` does not parse: {message}")]
    Parse { id: String, message: String },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
}

pub fn read_predictions<R: std::io::BufRead>(input: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Json { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Json { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub id: String,
    pub depth: Option<u8>,
    pub gold_answer: Option<Answer>,
    pub predicted_answer: Option<Answer>,
    /// Present when the instance has a gold proof.
    pub scores: Option<ExampleScores>,
    /// Answer correct and, where a proof is expected, its structure too.
    pub proof_correct: Option<bool>,
}

fn parse_tree(id: &str, hypothesis: &str, text: Option<&str>, context_size: usize) -> Result<Option<ProofTree>, EvalError> {
    match text.map(str::trim) {
        None | Some("") => Ok(None),
        Some(t) => ProofTree::parse(hypothesis, t, context_size)
            .map(Some)
            .map_err(|e| EvalError::Parse { id: id.to_string(), message: e.to_string() }),
    }
}

/// Scores one instance. Disproved instances are scored on the proof of the
/// negated hypothesis.
pub fn evaluate_instance(
    instance: &TaskInstance,
    prediction: Option<&Prediction>,
    classifier: Option<&AnswerClassifier>,
    similarity: &dyn SentenceSimilarity,
) -> Result<ExampleReport, EvalError> {
    let id = &instance.id;
    let n = instance.context.len();
    let h = &instance.hypothesis;
    let neg = negate(h);
    let (proof, negated, score_h, score_neg) = match prediction {
        Some(p) => (
            parse_tree(id, h, p.proof.as_deref(), n)?,
            parse_tree(id, &neg, p.negated_proof.as_deref(), n)?,
            p.proof_score,
            p.negated_score,
        ),
        None => (None, None, 0.0, Some(0.0)),
    };
    let predicted_answer = match (classifier, score_neg) {
        (Some(c), Some(s)) => Some(c.classify(score_h, s)),
        _ => None,
    };
    let gold = instance.gold_tree();
    let scores = gold.as_ref().map(|g| {
        let pred = if instance.answer == Some(Answer::Disproved) { negated.as_ref() } else { proof.as_ref() };
        pred.map_or(ExampleScores::ZERO, |p| score_example(p, g, similarity))
    });
    let proof_correct = instance.answer.and_then(|gold_answer| {
        let answer_ok = predicted_answer? == gold_answer;
        Some(answer_ok && scores.is_none_or(|s| s.structure_correct()))
    });
    Ok(ExampleReport {
        id: id.clone(),
        depth: instance.depth,
        gold_answer: instance.answer,
        predicted_answer,
        scores,
        proof_correct,
    })
}

pub const DEPTH_COLUMNS: [&str; 6] = ["N/A", "0", "1", "2", "3", "All"];

/// Accuracies in percent per column; `None` marks an empty bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBreakdown {
    pub columns: Vec<String>,
    pub counts: Vec<usize>,
    pub answer_accuracy: Vec<Option<f64>>,
    pub proof_accuracy: Vec<Option<f64>>,
}

impl DepthBreakdown {
    pub fn to_csv(&self) -> String {
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
        let mut out = format!("metric,{}\n", self.columns.join(","));
        out.push_str(&format!("count,{}\n", self.counts.iter().map(usize::to_string).collect::<Vec<_>>().join(",")));
        out.push_str(&format!("answer_accuracy,{}\n", self.answer_accuracy.iter().map(fmt).collect::<Vec<_>>().join(",")));
        out.push_str(&format!("proof_accuracy,{}\n", self.proof_accuracy.iter().map(fmt).collect::<Vec<_>>().join(",")));
        out
    }
}

fn column(r: &ExampleReport) -> Option<usize> {
    match (r.gold_answer?, r.depth) {
        (Answer::Unknown, _) => Some(0),
        (_, Some(d)) if d <= 3 => Some(1 + d as usize),
        _ => None,
    }
}

pub fn breakdown_by_depth(reports: &[ExampleReport]) -> DepthBreakdown {
    let mut counts = [0usize; 6];
    let mut answers = [0usize; 6];
    let mut proofs = [0usize; 6];
    for r in reports {
        let (Some(c), Some(gold)) = (column(r), r.gold_answer) else { continue };
        let answer_ok = r.predicted_answer == Some(gold);
        let proof_ok = r.proof_correct == Some(true);
        for col in [c, 5] {
            counts[col] += 1;
            answers[col] += answer_ok as usize;
            proofs[col] += proof_ok as usize;
        }
    }
    let pct = |k: &[usize; 6]| -> Vec<Option<f64>> {
        (0..6).map(|i| (counts[i] > 0).then(|| 100.0 * k[i] as f64 / counts[i] as f64)).collect()
    };
    DepthBreakdown {
        columns: DEPTH_COLUMNS.iter().map(|s| s.to_string()).collect(),
        counts: counts.to_vec(),
        answer_accuracy: pct(&answers),
        proof_accuracy: pct(&proofs),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_examples: usize,
    pub n_with_proof: usize,
    pub leaves_f1: f64,
    pub leaves_allcorrect: f64,
    pub steps_f1: f64,
    pub steps_allcorrect: f64,
    pub interm_f1: f64,
    pub interm_allcorrect: f64,
    pub overall_allcorrect: f64,
    pub answer_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub aggregate: Aggregate,
    pub breakdown: DepthBreakdown,
    pub classifier: Option<AnswerClassifier>,
    pub examples: Vec<ExampleReport>,
}

/// Averages in percent over the examples that carry proof scores.
pub fn aggregate(reports: &[ExampleReport]) -> Aggregate {
    let scored: Vec<&ExampleScores> = reports.iter().filter_map(|r| r.scores.as_ref()).collect();
    let n = scored.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ExampleScores) -> f64| 100.0 * scored.iter().map(|s| f(s)).sum::<f64>() / n;
    let answered: Vec<&ExampleReport> =
        reports.iter().filter(|r| r.gold_answer.is_some() && r.predicted_answer.is_some()).collect();
    Aggregate {
        n_examples: reports.len(),
        n_with_proof: scored.len(),
        leaves_f1: mean(&|s| s.leaves_f1),
        leaves_allcorrect: mean(&|s| s.leaves_allcorrect as u8 as f64),
        steps_f1: mean(&|s| s.steps_f1),
        steps_allcorrect: mean(&|s| s.steps_allcorrect as u8 as f64),
        interm_f1: mean(&|s| s.interm_f1),
        interm_allcorrect: mean(&|s| s.interm_allcorrect as u8 as f64),
        overall_allcorrect: mean(&|s| s.overall_allcorrect as u8 as f64),
        answer_accuracy: (!answered.is_empty()).then(|| {
            100.0 * answered.iter().filter(|r| r.gold_answer == r.predicted_answer).count() as f64
                / answered.len() as f64
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ClassifierChoice {
    #[default]
    Reference,
    /// Least squares on the evaluated predictions themselves.
    Fit,
    Fixed(AnswerClassifier),
}

/// Full report over a dataset. Predictions are matched by id; instances
/// without a prediction count as unproved.
pub fn evaluate(
    instances: &[TaskInstance],
    predictions: &[Prediction],
    choice: ClassifierChoice,
    similarity: &dyn SentenceSimilarity,
) -> Result<Report, EvalError> {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let has_answers = instances.iter().any(|i| i.answer.is_some());
    let classifier = match choice {
        _ if !has_answers => None,
        ClassifierChoice::Reference => Some(AnswerClassifier::reference()),
        ClassifierChoice::Fixed(c) => Some(c),
        ClassifierChoice::Fit => {
            let samples: Vec<(f64, f64, Answer)> = instances
                .iter()
                .filter_map(|i| {
                    let p = by_id.get(i.id.as_str());
                    Some((p.map_or(0.0, |p| p.proof_score), p.and_then(|p| p.negated_score).unwrap_or(0.0), i.answer?))
                })
                .collect();
            Some(AnswerClassifier::fit(&samples, 1e-6).unwrap_or_default())
        }
    };
    let examples = instances
        .iter()
        .map(|i| evaluate_instance(i, by_id.get(i.id.as_str()).copied(), classifier.as_ref(), similarity))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report { aggregate: aggregate(&examples), breakdown: breakdown_by_depth(&examples), classifier, examples })
}
