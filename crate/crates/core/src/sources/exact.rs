use std::collections::{HashMap, HashSet};

use crate::dsl::{normalize_sentence, LinearProof, NodeId, StepText};
use crate::lang::{parse_literal, parse_sentence, Literal, Rule, Sentence};

use super::{Candidate, SourceError, StepScorer, StepSource};

/// One round of forward chaining over the rule language.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactProver;

struct Known {
    /// First identifier holding each literal, context sentences first.
    literals: HashMap<Literal, NodeId>,
    rules: Vec<(NodeId, Rule)>,
    next_int: u32,
}

fn known(context: &[String], partial: &LinearProof) -> Known {
    let mut literals = HashMap::new();
    let mut rules = Vec::new();
    for (i, s) in context.iter().enumerate() {
        let id = NodeId::Sent(i as u32 + 1);
        match parse_sentence(s) {
            Some(Sentence::Fact(l)) => {
                literals.entry(l).or_insert(id);
            }
            Some(Sentence::Rule(r)) => rules.push((id, r)),
            None => {}
        }
    }
    let mut next_int = 1;
    for step in &partial.steps {
        if let NodeId::Int(k) = step.conclusion {
            next_int = next_int.max(k + 1);
            if let Some(l) = step.conclusion_text.as_deref().and_then(parse_literal) {
                literals.entry(l).or_insert(step.conclusion);
            }
        }
    }
    Known { literals, rules, next_int }
}

/// Literals from which `goal` can be reached backwards through `rules`.
fn relevant(goal: &Literal, rules: &[(NodeId, Rule)]) -> HashSet<Literal> {
    let mut set = HashSet::from([goal.clone()]);
    loop {
        let before = set.len();
        for (_, r) in rules {
            if set.contains(&r.consequent) {
                set.extend(r.antecedents.iter().cloned());
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

impl ExactProver {
    /// All applicable steps, hypothesis-concluding ones first, then steps
    /// towards the hypothesis, then the rest in context order.
    pub fn steps(&self, hypothesis: &str, context: &[String], partial: &LinearProof) -> Vec<StepText> {
        let k = known(context, partial);
        let goal = parse_literal(hypothesis);
        let useful = goal.as_ref().map(|g| relevant(g, &k.rules)).unwrap_or_default();
        let mut ranked: Vec<(u8, StepText)> = Vec::new();
        let mut next_int = k.next_int;

        if let Some(id) = goal.as_ref().and_then(|g| k.literals.get(g)) {
            ranked.push((0, StepText::new(vec![*id], NodeId::Hypothesis, None)));
        }
        for (rule_id, rule) in &k.rules {
            if k.literals.contains_key(&rule.consequent) {
                continue;
            }
            let Some(mut premises) = rule
                .antecedents
                .iter()
                .map(|a| k.literals.get(a).copied())
                .collect::<Option<Vec<NodeId>>>()
            else {
                continue;
            };
            premises.push(*rule_id);
            premises.sort();
            premises.dedup();
            let step = if goal.as_ref() == Some(&rule.consequent) {
                (0, StepText::new(premises, NodeId::Hypothesis, None))
            } else {
                let id = NodeId::Int(next_int);
                next_int += 1;
                let rank = if useful.contains(&rule.consequent) { 1 } else { 2 };
                (rank, StepText::new(premises, id, Some(rule.consequent.to_string())))
            };
            ranked.push(step);
        }
        ranked.sort_by_key(|(rank, _)| *rank);
        ranked.into_iter().map(|(_, s)| s).collect()
    }
}

impl StepSource for ExactProver {
    fn generate(
        &self,
        hypothesis: &str,
        context: &[String],
        partial: &LinearProof,
        n: usize,
    ) -> Result<Vec<Candidate>, SourceError> {
        Ok(self
            .steps(hypothesis, context, partial)
            .into_iter()
            .take(n)
            .map(|s| Candidate::new(s.to_string(), 1.0))
            .collect())
    }
}

/// Accepts exactly the single rule applications of the rule language.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactVerifier;

impl ExactVerifier {
    pub fn judge(premises: &[String], conclusion: &str) -> f64 {
        let key = normalize_sentence(conclusion);
        if premises.is_empty() || premises.iter().any(|p| normalize_sentence(p) == key) {
            return 0.0;
        }
        let Some(goal) = parse_literal(conclusion) else { return 0.0 };
        let mut rules = Vec::new();
        let mut facts = HashSet::new();
        for p in premises {
            match parse_sentence(p) {
                Some(Sentence::Rule(r)) => rules.push(r),
                Some(Sentence::Fact(l)) => {
                    facts.insert(l);
                }
                None => return 0.0,
            }
        }
        let valid = match rules.as_slice() {
            [] => facts.len() == 1 && facts.contains(&goal),
            [rule] => {
                let needed: HashSet<&Literal> = rule.antecedents.iter().collect();
                rule.consequent == goal
                    && needed.len() == facts.len()
                    && facts.iter().all(|f| needed.contains(f))
            }
            _ => false,
        };
        if valid {
            1.0
        } else {
            0.0
        }
    }
}

impl StepScorer for ExactVerifier {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, SourceError> {
        Ok(Self::judge(premises, conclusion))
    }
}
