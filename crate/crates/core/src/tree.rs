use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dsl::{parse_proof, DslError, LinearProof, NodeId, StepText};

/// A proof rooted at the hypothesis.
///
/// Stored as a canonical linear proof whose last step concludes
/// `hypothesis` and whose every `int` is used on the way to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTree {
    hypothesis: String,
    proof: LinearProof,
}

impl ProofTree {
    pub fn new(hypothesis: impl Into<String>, proof: LinearProof) -> Result<Self, DslError> {
        if proof.is_empty() {
            return Err(DslError::EmptyProof);
        }
        let max_sent = proof
            .steps
            .iter()
            .flat_map(|s| s.premises.iter())
            .filter_map(|p| match p {
                NodeId::Sent(k) => Some(*k as usize),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        proof.check(max_sent)?;
        let last = proof.steps.last().expect("nonempty");
        if last.conclusion != NodeId::Hypothesis {
            return Err(DslError::Syntax("last step must conclude the hypothesis".into()));
        }
        let used: HashSet<NodeId> = proof
            .steps
            .iter()
            .flat_map(|s| s.premises.iter().copied())
            .collect();
        for step in &proof.steps[..proof.steps.len() - 1] {
            if !used.contains(&step.conclusion) {
                return Err(DslError::Syntax(format!(
                    "`{}` does not contribute to the hypothesis",
                    step.conclusion
                )));
            }
        }
        Ok(Self { hypothesis: hypothesis.into(), proof: proof.canonical() })
    }

    pub fn parse(hypothesis: impl Into<String>, text: &str, context_size: usize) -> Result<Self, DslError> {
        Self::new(hypothesis, parse_proof(text, context_size)?)
    }

    pub fn hypothesis(&self) -> &str {
        &self.hypothesis
    }

    pub fn proof(&self) -> &LinearProof {
        &self.proof
    }

    pub fn steps(&self) -> &[StepText] {
        &self.proof.steps
    }

    /// Canonical DSL text.
    pub fn to_dsl(&self) -> String {
        self.proof.render()
    }

    pub fn leaves(&self) -> BTreeSet<u32> {
        self.steps()
            .iter()
            .flat_map(|s| s.premises.iter())
            .filter_map(|p| match p {
                NodeId::Sent(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    /// Sentence for `id`, resolving leaves against `context` (1-based).
    pub fn sentence<'a>(&'a self, id: NodeId, context: &'a [String]) -> Option<&'a str> {
        match id {
            NodeId::Sent(k) => context.get(k as usize - 1).map(String::as_str),
            NodeId::Hypothesis => Some(&self.hypothesis),
            NodeId::Int(_) => self
                .steps()
                .iter()
                .find(|s| s.conclusion == id)
                .and_then(|s| s.conclusion_text.as_deref()),
        }
    }

    /// Step concluding each non-leaf node.
    pub fn step_index(&self) -> HashMap<NodeId, &StepText> {
        self.steps().iter().map(|s| (s.conclusion, s)).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(id: NodeId, idx: &HashMap<NodeId, &StepText>) -> usize {
            match idx.get(&id) {
                None => 0,
                Some(s) => 1 + s.premises.iter().map(|p| go(*p, idx)).max().unwrap_or(0),
            }
        }
        go(NodeId::Hypothesis, &self.step_index())
    }
}
