use std::collections::{BTreeSet, HashMap, HashSet};

use crate::dsl::{normalize_sentence, LinearProof, NodeId, StepText};
use crate::tree::ProofTree;

use super::{Candidate, SourceError, StepScorer, StepSource};

/// A gold step with every identifier replaced by its sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct GoldStep {
    premises: Vec<String>,
    conclusion: String,
    to_hypothesis: bool,
}

fn gold_steps(gold: &ProofTree, context: &[String]) -> Vec<GoldStep> {
    let text = |id: NodeId| gold.sentence(id, context).unwrap_or_default().to_string();
    gold.steps()
        .iter()
        .map(|s| GoldStep {
            premises: s.premises.iter().map(|p| text(*p)).collect(),
            conclusion: text(s.conclusion),
            to_hypothesis: s.conclusion == NodeId::Hypothesis,
        })
        .collect()
}

/// Puts the gold steps whose premises are available first.
pub struct OracleProver<P> {
    inner: P,
    hypothesis: String,
    steps: Vec<GoldStep>,
}

impl<P: StepSource> OracleProver<P> {
    pub fn new(inner: P, gold: &ProofTree, context: &[String]) -> Self {
        Self { inner, hypothesis: normalize_sentence(gold.hypothesis()), steps: gold_steps(gold, context) }
    }
}

impl<P: StepSource> StepSource for OracleProver<P> {
    fn generate(
        &self,
        hypothesis: &str,
        context: &[String],
        partial: &LinearProof,
        n: usize,
    ) -> Result<Vec<Candidate>, SourceError> {
        let mut out = Vec::new();
        if normalize_sentence(hypothesis) == self.hypothesis {
            let mut ids: HashMap<String, NodeId> = HashMap::new();
            for (i, s) in context.iter().enumerate() {
                ids.entry(normalize_sentence(s)).or_insert(NodeId::Sent(i as u32 + 1));
            }
            let mut next_int = 1;
            for s in &partial.steps {
                if let (NodeId::Int(k), Some(t)) = (s.conclusion, &s.conclusion_text) {
                    ids.entry(normalize_sentence(t)).or_insert(s.conclusion);
                    next_int = next_int.max(k + 1);
                }
            }
            for g in &self.steps {
                if !g.to_hypothesis && ids.contains_key(&normalize_sentence(&g.conclusion)) {
                    continue;
                }
                let Some(premises) = g
                    .premises
                    .iter()
                    .map(|p| ids.get(&normalize_sentence(p)).copied())
                    .collect::<Option<Vec<_>>>()
                else {
                    continue;
                };
                let step = if g.to_hypothesis {
                    StepText::new(premises, NodeId::Hypothesis, None)
                } else {
                    next_int += 1;
                    StepText::new(premises, NodeId::Int(next_int - 1), Some(g.conclusion.clone()))
                };
                out.push(Candidate::new(step.to_string(), 1.0));
            }
        }
        let cap = n.max(out.len());
        let seen: HashSet<String> = out.iter().map(|c| c.step.clone()).collect();
        for c in self.inner.generate(hypothesis, context, partial, n)? {
            if !seen.contains(&c.step) {
                out.push(c);
            }
        }
        out.truncate(cap);
        Ok(out)
    }
}

/// Scores gold steps 1.0 and defers to `inner` elsewhere.
pub struct OracleVerifier<S> {
    inner: S,
    gold: HashSet<(BTreeSet<String>, String)>,
}

impl<S: StepScorer> OracleVerifier<S> {
    pub fn new(inner: S, gold: &ProofTree, context: &[String]) -> Self {
        let gold = gold_steps(gold, context)
            .into_iter()
            .map(|g| key(&g.premises, &g.conclusion))
            .collect();
        Self { inner, gold }
    }
}

fn key(premises: &[String], conclusion: &str) -> (BTreeSet<String>, String) {
    (premises.iter().map(|p| normalize_sentence(p)).collect(), normalize_sentence(conclusion))
}

impl<S: StepScorer> StepScorer for OracleVerifier<S> {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, SourceError> {
        if self.gold.contains(&key(premises, conclusion)) {
            return Ok(1.0);
        }
        self.inner.score(premises, conclusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_proof;

    struct Nothing;

    impl StepSource for Nothing {
        fn generate(&self, _: &str, _: &[String], _: &LinearProof, _: usize) -> Result<Vec<Candidate>, SourceError> {
            Ok(vec![Candidate::new("sent1 -> hypothesis;", 0.2)])
        }
    }

    impl StepScorer for Nothing {
        fn score(&self, _: &[String], _: &str) -> Result<f64, SourceError> {
            Ok(0.1)
        }
    }

    fn fixture() -> (Vec<String>, ProofTree) {
        let ctx: Vec<String> = ["a.", "b.", "c."].iter().map(|s| s.to_string()).collect();
        let gold = ProofTree::parse("h.", "sent1 & sent2 -> int1: d.; int1 & sent3 -> hypothesis;", 3).unwrap();
        (ctx, gold)
    }

    #[test]
    fn only_satisfied_gold_steps() {
        let (ctx, gold) = fixture();
        let p = OracleProver::new(Nothing, &gold, &ctx);
        let out = p.generate("h.", &ctx, &LinearProof::default(), 1).unwrap();
        assert_eq!(out, vec![Candidate::new("sent1 & sent2 -> int1: d.;", 1.0)]);
        let partial = parse_proof("sent1 & sent2 -> int1: d.;", 3).unwrap();
        let out = p.generate("h.", &ctx, &partial, 3).unwrap();
        assert_eq!(out[0].step, "sent3 & int1 -> hypothesis;");
        assert_eq!(out[1].step, "sent1 -> hypothesis;");
        let other = p.generate("other.", &ctx, &LinearProof::default(), 3).unwrap();
        assert_eq!(other.len(), 1);
    }

    #[test]
    fn gold_scores_one() {
        let (ctx, gold) = fixture();
        let v = OracleVerifier::new(Nothing, &gold, &ctx);
        assert_eq!(v.score(&["B".into(), "a".into()], "d").unwrap(), 1.0);
        assert_eq!(v.score(&["d.".into(), "c.".into()], "h.").unwrap(), 1.0);
        assert_eq!(v.score(&["a.".into()], "d.").unwrap(), 0.1);
    }
}
